"""Finite-difference helpers shared by the gradient tests."""
import numpy as np

FD_STEP = 1e-5


def numeric_grad(f, x, step=FD_STEP):
    """Central differences of scalar ``f()`` w.r.t. every entry of array ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + step
        fp = f()
        x[i] = old - step
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * step)
    return g


def rel_error(a, b, floor=1e-7):
    """Largest elementwise ``|a - b| / max(|a|, |b|)``; gaps below ``floor`` count as 0."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if not a.size:
        return 0.0
    diff = np.abs(a - b)
    scale = np.maximum(np.abs(a), np.abs(b))
    err = np.where(diff <= floor, 0.0, diff / np.maximum(scale, floor))
    return float(err.max())

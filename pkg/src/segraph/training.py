"""Center + neighbor loss, plain SGD and the training loop."""
from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import gnn
from .diffnet import Tensor, checkpoint, log_clamped, matmul, reshape, take_rows, total

log = logging.getLogger(__name__)

LOSS_MODES = ("center", "center+neighbor")
HISTORY_FIELDS = ("epoch", "lr", "train_loss", "center_loss", "neighbor_loss", "test_f1_mean")


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    lr0: float = 0.01
    decay: float = 0.5
    decay_every: int = 20
    epochs: int = 100
    seed: int = 0
    loss_mode: str = "center+neighbor"
    momentum: float = 0.0
    weight_decay: float = 0.0
    clip_norm: float = 0.0  # global gradient-norm cap, 0 disables

    def __post_init__(self):
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


def learning_rate(epoch, cfg: TrainConfig = TrainConfig()):
    return cfg.lr0 * cfg.decay ** (epoch // cfg.decay_every)


@dataclass
class LossReport:
    total: float
    center_term: float
    neighbor_term: float
    per_node: np.ndarray
    tensor: Tensor = field(repr=False, default=None)


def one_hot(labels, K):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ValueError(f"class labels must lie in [0, {K})")
    out = np.zeros((len(labels), K))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def _check_one_hot(targets):
    t = np.asarray(targets, dtype=np.float64)
    if t.ndim != 2 or not np.all((t == 0) | (t == 1)) or not np.all(t.sum(axis=1) == 1):
        raise ValueError("targets must be one-hot rows")
    return t


def compute_loss(probs, targets, weights, edges: gnn.EdgeIndex, mode="center+neighbor") -> LossReport:
    """``L = -(1/N) sum_i [x_i ln p_i + 1/|Omega_i| sum_j w_ij x_j ln p_j]``.

    ``targets`` are one-hot rows (integer labels are accepted too).  With
    ``weights=None`` or ``mode="center"`` only the first term is kept.
    Logs are clamped below at 1e-12.
    """
    if mode not in LOSS_MODES:
        raise ValueError(f"unknown loss mode {mode!r}")
    probs = probs if isinstance(probs, Tensor) else Tensor(probs)
    N, K = probs.shape
    targets = np.asarray(targets)
    x = one_hot(targets, K) if targets.ndim == 1 else _check_one_hot(targets)
    if x.shape != (N, K):
        raise ValueError(f"targets shape {x.shape} != predictions {(N, K)}")

    # per-node log-likelihood x_i . ln p_i as an (N, 1) column
    ll = matmul(Tensor(x) * log_clamped(probs), Tensor(np.ones((K, 1))))
    center = total(ll) * (-1.0 / N)
    per_node = -ll.value[:, 0]

    use_neighbors = mode == "center+neighbor" and weights is not None and edges.n_edges > 0
    if use_neighbors:
        w = weights if isinstance(weights, Tensor) else Tensor(np.asarray(weights, dtype=np.float64))
        coef = w * edges.inv_degree()[edges.centers]
        nb_ll = reshape(take_rows(ll, edges.neighbors), (edges.n_edges,))
        edge_terms = coef * nb_ll
        neighbor = total(edge_terms) * (-1.0 / N)
        per_node = per_node - np.bincount(edges.centers, edge_terms.value, minlength=N)
        loss = center + neighbor
        nval = float(neighbor.value)
    else:
        loss = center
        nval = 0.0
    cval = float(center.value)
    # report total as the exact sum of the two terms
    return LossReport(cval + nval, cval, nval, per_node, loss)


def sgd_step(named_params, lr, momentum=0.0, weight_decay=0.0, velocity=None, clip_norm=0.0):
    """``theta <- theta - lr * grad`` for every parameter with a gradient.

    With ``clip_norm`` the gradients are first rescaled so their joint L2
    norm is at most ``clip_norm``.  Raises :class:`NonFiniteGradient` naming
    the first offending parameter.
    """
    named_params = list(named_params)
    for name, p in named_params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradient(f"non-finite gradient in {name}")
    scale = 1.0
    if clip_norm:
        norm = np.sqrt(sum(float(np.sum(p.grad ** 2)) for _, p in named_params if p.grad is not None))
        scale = min(1.0, clip_norm / norm) if norm > 0 else 1.0
    for name, p in named_params:
        if p.grad is None:
            continue
        g = p.grad * scale if scale != 1.0 else p.grad
        if weight_decay:
            g = g + weight_decay * p.value
        if momentum:
            v = velocity.get(name)
            v = g if v is None else momentum * v + g
            velocity[name] = v
            g = v
        p.value = p.value - lr * g


def frame_forward(model, frame, loss_mode="center+neighbor"):
    out = gnn.forward(model, frame.inputs, frame.boxes, frame.edges)
    report = compute_loss(out.probs, frame.labels, out.weights, frame.edges, loss_mode)
    return out, report


def train_step(model, frame, lr, cfg: TrainConfig = TrainConfig(), velocity=None):
    """Forward, backward and one SGD update on a single frame."""
    model.train()
    model.zero_grad()
    _, report = frame_forward(model, frame, cfg.loss_mode)
    report.tensor.backward()
    sgd_step(model.named_parameters(), lr, cfg.momentum, cfg.weight_decay, velocity, cfg.clip_norm)
    return report


def predict(model, frames):
    """Predicted class per node for each prepared frame (eval mode)."""
    model.eval()
    preds = []
    for f in frames:
        out = gnn.forward(model, f.inputs, f.boxes, f.edges)
        preds.append(np.argmax(out.probs.value, axis=1))
    return preds


@dataclass
class TrainResult:
    history: list
    best_epoch: int
    best_f1: float
    best_state: dict = field(repr=False)


def format_history(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_FIELDS)
    for row in history:
        f1 = row["test_f1_mean"]
        w.writerow([row["epoch"], repr(row["lr"]), repr(row["train_loss"]), repr(row["center_loss"]),
                    repr(row["neighbor_loss"]), "" if f1 is None else repr(f1)])
    return buf.getvalue()


def train(model, train_frames, cfg: TrainConfig = TrainConfig(), test_frames=None, out_dir=None,
          eval_every=1) -> TrainResult:
    """Per-frame SGD over shuffled epochs.

    Records mean losses and learning rate per epoch, plus test macro F1 when
    ``test_frames`` is given (every ``eval_every`` epochs and at the last).
    With ``out_dir`` writes ``history.csv``, ``final.ckpt`` and ``best.ckpt``.
    """
    from .evaluation import evaluate

    if not train_frames:
        raise ValueError("training set is empty")
    rng = np.random.default_rng(cfg.seed)
    velocity = {}
    history = []
    best = (-1.0, -1, None)
    for epoch in range(cfg.epochs):
        lr = learning_rate(epoch, cfg)
        order = rng.permutation(len(train_frames))
        sums = np.zeros(3)
        for i in order:
            r = train_step(model, train_frames[i], lr, cfg, velocity)
            sums += (r.total, r.center_term, r.neighbor_term)
        sums /= len(order)
        f1 = None
        if test_frames and ((epoch + 1) % eval_every == 0 or epoch == cfg.epochs - 1):
            f1 = evaluate(model, test_frames).metrics().macro_f1
            if f1 > best[0]:
                best = (f1, epoch, {k: v.copy() for k, v in model.state_dict().items()})
        history.append(dict(epoch=epoch, lr=lr, train_loss=float(sums[0]), center_loss=float(sums[1]),
                            neighbor_loss=float(sums[2]), test_f1_mean=f1))
        log.info("epoch %d lr %.6g loss %.5f f1 %s", epoch, lr, sums[0], "-" if f1 is None else f"{f1:.4f}")
    if best[1] < 0:
        best = (float("nan"), cfg.epochs - 1, model.state_dict())
    result = TrainResult(history, best[1], best[0], best[2])
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "history.csv"), "w") as fh:
            fh.write(format_history(history))
        checkpoint.save(os.path.join(out_dir, "final.ckpt"), model.state_dict())
        checkpoint.save(os.path.join(out_dir, "best.ckpt"), result.best_state)
    return result

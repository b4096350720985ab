"""Brute-force reference implementations shared by the unit and acceptance tests."""
from collections import deque

import numpy as np

from segraph.graph import ALL
from segraph.pointcloud import PixelLabel, PointFrame, ProjectionConfig, project

U, E, G, B, V = PixelLabel.UNKNOWN, PixelLabel.EDGE, PixelLabel.GROUND, PixelLabel.BACKGROUND, PixelLabel.UNVALID


# segmentation

def lattice_image(ranges, cfg):
    """Range image with one point per pixel center at the given ranges."""
    d = cfg.ray_directions().reshape(-1, 3)
    n = len(d)
    frame = PointFrame(d * np.asarray(ranges).reshape(-1, 1), np.zeros(n), np.zeros(n, dtype=np.int64))
    img = project(frame, cfg)
    assert img.valid.all()
    return img


def labelled(labels, cfg=None, ranges=None, seed=0):
    labels = np.asarray(labels, dtype=np.int64)
    H, W = labels.shape
    cfg = cfg or ProjectionConfig(H, W)
    if ranges is None:
        ranges = np.random.default_rng(seed).uniform(5, 15, H * W)
    return lattice_image(ranges, cfg).with_labels(labels)


def bfs_components(labels, wrap):
    H, W = labels.shape
    comp = np.full((H, W), -1, dtype=np.int64)
    n = 0
    for r in range(H):
        for c in range(W):
            if labels[r, c] != U or comp[r, c] >= 0:
                continue
            comp[r, c] = n
            queue = deque([(r, c)])
            while queue:
                a, b = queue.popleft()
                for da, db in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                    na, nb = a + da, b + db
                    if wrap:
                        nb %= W
                    if 0 <= na < H and 0 <= nb < W and labels[na, nb] == U and comp[na, nb] < 0:
                        comp[na, nb] = n
                        queue.append((na, nb))
            n += 1
    return comp, n


def oracle_region_grow(labels, xyz, wrap, min_pts):
    """Flood fill, attach each edge pixel to its nearest adjacent core pixel, drop small segments."""
    H, W = labels.shape
    comp, n = bfs_components(labels, wrap)
    owner = comp.copy()
    for r in range(H):
        for c in range(W):
            if labels[r, c] != E:
                continue
            best = None
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                nr, nc = r + dr, c + dc
                if wrap:
                    nc %= W
                if not (0 <= nr < H and 0 <= nc < W) or comp[nr, nc] < 0:
                    continue
                d = np.linalg.norm(xyz[r, c] - xyz[nr, nc])
                if best is None or (d, comp[nr, nc]) < best:
                    best = (d, comp[nr, nc])
            if best is not None:
                owner[r, c] = best[1]
    sizes = np.bincount(owner[owner >= 0], minlength=n)
    return np.where((owner >= 0) & (sizes[np.maximum(owner, 0)] >= min_pts), owner, -1)


def same_partition(a, b):
    """Equal up to a bijective relabeling of the non-negative ids."""
    if not np.array_equal(a < 0, b < 0):
        return False
    pairs = set(zip(a[a >= 0].tolist(), b[b >= 0].tolist()))
    return len(pairs) == len({p for p, _ in pairs}) == len({q for _, q in pairs})


def random_label_image(rng, H=40, W=100):
    """Blobby Unknown regions on a Ground/Background/Unvalid backdrop with edge scribbles."""
    field = rng.normal(size=(H, W))
    # cheap smoothing; rolling along columns keeps the field cylindrical
    for _ in range(3):
        field = (field + np.roll(field, 1, 1) + np.roll(field, -1, 1) + np.roll(field, 1, 0) + np.roll(field, -1, 0)) / 5
    thr = np.quantile(field, rng.uniform(0.3, 0.7))
    labels = np.where(field > thr, U, rng.choice([G, B, V], size=(H, W), p=[0.6, 0.2, 0.2]))
    edge = rng.uniform(size=(H, W)) < rng.uniform(0.0, 0.15)
    labels[edge & (labels == U)] = E
    if rng.uniform() < 0.3:
        col = rng.integers(W)
        labels[:, col][labels[:, col] == U] = E
    return labels


# graph

def brute_knn(cents, k):
    """Sort every other node by (distance, index) with plain Python."""
    n = len(cents)
    out = []
    for i in range(n):
        cand = sorted((float(np.sqrt(((cents[i] - cents[j]) ** 2).sum())), j) for j in range(n) if j != i)
        out.append([j for _, j in cand[: (n - 1 if k == ALL else k)]])
    return out


# gnn

def relu_np(x):
    return np.maximum(x, 0)


def mlp_np(mlp, x):
    """Plain numpy transcription of an MLP with ReLU between layers."""
    for k, layer in enumerate(mlp.layers):
        x = x @ layer.weight.value + layer.bias.value
        if k < len(mlp.layers) - 1:
            x = relu_np(x)
    return x


def weights_oracle(h, lists, model):
    out = []
    for i, nb in enumerate(lists):
        e = np.array([mlp_np(model.edge_mlp, np.concatenate([h[i], h[j]]))[0] for j in nb])
        if len(nb):
            s = np.exp(e - e.max())
            out.extend(s / s.sum() / len(nb))
    return np.array(out)


def messages_oracle(h, w, lists, model):
    m = np.zeros_like(h)
    e = 0
    for i, nb in enumerate(lists):
        for j in nb:
            m[i] += mlp_np(model.message_mlp, w[e] * h[j])
            e += 1
        if len(nb):
            m[i] /= len(nb)
    return m


# loss

def loss_oracle(P, X, w, lists, mode="center+neighbor"):
    """Direct transcription: -(1/N) sum_i [x_i ln p_i + 1/|O_i| sum_j w_ij x_j ln p_j]."""
    N = len(P)
    lnp = np.log(np.maximum(P, 1e-12))
    s, e = 0.0, 0
    for i in range(N):
        s += X[i] @ lnp[i]
        if mode == "center+neighbor" and lists[i]:
            s += sum(w[e + a] * (X[j] @ lnp[j]) for a, j in enumerate(lists[i])) / len(lists[i])
        e += len(lists[i])
    return -s / N


def random_probs(rng, n, K=4):
    z = np.exp(rng.normal(scale=2, size=(n, K)))
    return z / z.sum(axis=1, keepdims=True)

"""Graph neural network classifier over scene graphs.

Pipeline for one frame::

    h0 = proj(roi_pool(feature_net(x), bbox_i))
    e_ij = g([h_i, h_j]);  w_ij = softmax_{j in Omega_i}(e_ij) / |Omega_i|
    m_i = 1/|Omega_i| * sum_j phi(w_ij * h_j)
    h_i <- relu(psi([h_i, m_i]))            (T times, all nodes at once)
    p_i = softmax(f(h_i))

``equal`` mode fixes ``w_ij = 1`` (no edge network); ``unary`` mode predicts
straight from ``h0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffnet import (
    MLP,
    Dense,
    FeatureNet,
    FeatureNetConfig,
    Module,
    Tensor,
    concat,
    relu,
    reshape,
    roi_pool,
    segment_softmax,
    segment_sum,
    softmax,
    take_rows,
)

MODES = ("attention", "equal", "unary")


@dataclass
class GnnConfig:
    mode: str = "attention"
    T: int = 1
    K: int = 4
    hidden_dim: int = 32
    mlp_hidden: int = 0  # 0 means hidden_dim
    recompute_weights: bool = False
    double_norm: bool = True
    feature: FeatureNetConfig = field(default_factory=FeatureNetConfig)

    def __post_init__(self):
        if isinstance(self.feature, dict):
            feature = dict(self.feature)
            if "roi_bins" in feature:
                feature["roi_bins"] = tuple(feature["roi_bins"])
            self.feature = FeatureNetConfig(**feature)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.T < 0:
            raise ValueError("T must be >= 0")


class SceneGnn(Module):
    """Feature network plus the four shared MLPs (edge, message, update, predict)."""

    def __init__(self, cfg: GnnConfig, seed=0):
        rng = np.random.default_rng(seed)
        S = cfg.hidden_dim
        hid = cfg.mlp_hidden or S
        self.cfg = cfg
        self.feature_net = FeatureNet(cfg.feature, rng)
        self.input_proj = Dense(cfg.feature.roi_dim, S, rng)
        self.edge_mlp = MLP((2 * S, hid, 1), rng)
        self.message_mlp = MLP((S, hid, S), rng)
        self.update_mlp = MLP((2 * S, hid, S), rng)
        self.predict_mlp = MLP((S, hid, cfg.K), rng)


@dataclass
class EdgeIndex:
    """Flattened neighbor sets: edge e links center ``centers[e]`` to ``neighbors[e]``."""

    centers: np.ndarray
    neighbors: np.ndarray
    degrees: np.ndarray

    @classmethod
    def from_graph(cls, graph):
        centers, nbrs = graph.edges()
        return cls(centers, nbrs, graph.degrees())

    @classmethod
    def from_lists(cls, neighbor_lists):
        deg = np.array([len(nb) for nb in neighbor_lists], dtype=np.int64)
        centers = np.repeat(np.arange(len(neighbor_lists)), deg).astype(np.int64)
        nbrs = np.array([j for nb in neighbor_lists for j in nb], dtype=np.int64)
        return cls(centers, nbrs, deg)

    @property
    def n_nodes(self):
        return len(self.degrees)

    @property
    def n_edges(self):
        return len(self.centers)

    def inv_degree(self):
        """1/|Omega_i|, and 0 for isolated nodes."""
        return np.where(self.degrees > 0, 1.0 / np.maximum(self.degrees, 1), 0.0)


@dataclass
class GnnOutput:
    probs: Tensor
    weights: Tensor | None
    h0: Tensor
    h: Tensor
    edges: EdgeIndex


def init_nodes(feature_map, boxes, model: SceneGnn):
    """Initial states: ROI-pooled features mapped to ``hidden_dim`` by the input projection."""
    pooled = roi_pool(feature_map, boxes, model.cfg.feature.roi_bins)
    return model.input_proj(pooled)


def estimate_edge_weights(h, edges: EdgeIndex, model: SceneGnn, double_norm=True):
    """Attention weight of each neighbor ``j`` for its center ``i``.

    ``e_ij = g([h_i, h_j])`` (center first), softmax over Omega_i, and by
    default a further 1/|Omega_i| factor, so weights of a node sum to
    1/|Omega_i|.
    """
    n = edges.n_nodes
    if edges.n_edges == 0:
        return Tensor(np.zeros(0))
    pair = concat([take_rows(h, edges.centers), take_rows(h, edges.neighbors)], axis=1)
    logits = reshape(model.edge_mlp(pair), (edges.n_edges,))
    w = segment_softmax(logits, edges.centers, n)
    if double_norm:
        w = w * edges.inv_degree()[edges.centers]
    return w


def aggregate_messages(h, weights, edges: EdgeIndex, model: SceneGnn):
    """``m_i = 1/|Omega_i| sum_j phi(w_ij h_j)``; isolated nodes receive zeros."""
    n, S = h.shape
    if edges.n_edges == 0:
        return Tensor(np.zeros((n, S)))
    scaled = take_rows(h, edges.neighbors) * reshape(weights, (edges.n_edges, 1))
    msgs = segment_sum(model.message_mlp(scaled), edges.centers, n)
    return msgs * edges.inv_degree()[:, None]


def update_nodes(h, messages, model: SceneGnn):
    return relu(model.update_mlp(concat([h, messages], axis=1)))


def predict_nodes(h, model: SceneGnn):
    return softmax(model.predict_mlp(h), axis=1)


def forward(model: SceneGnn, inputs, boxes, edges: EdgeIndex, feature_map=None) -> GnnOutput:
    """Run the whole classifier on one frame.

    ``inputs`` is the 3 x H x W raw tensor; pass ``feature_map`` instead to
    skip the feature network (used by tests probing the GNN alone).
    """
    cfg = model.cfg
    if feature_map is None:
        feature_map = model.feature_net(inputs)
    h0 = init_nodes(feature_map, boxes, model)
    if cfg.mode == "unary":
        return GnnOutput(predict_nodes(h0, model), None, h0, h0, edges)

    def weights_for(h):
        if cfg.mode == "equal":
            return Tensor(np.ones(edges.n_edges))
        return estimate_edge_weights(h, edges, model, cfg.double_norm)

    h = h0
    w = weights_for(h0)
    for t in range(cfg.T):
        if t and cfg.recompute_weights:
            w = weights_for(h)
        h = update_nodes(h, aggregate_messages(h, w, edges, model), model)
    return GnnOutput(predict_nodes(h, model), w, h0, h, edges)


def format_edge_weights(edges: EdgeIndex, weights, nodes=None) -> str:
    """``i j w_ij rank`` lines, heaviest neighbor first within each center."""
    w = weights.value if isinstance(weights, Tensor) else np.asarray(weights)
    lines = []
    for i in range(edges.n_nodes) if nodes is None else nodes:
        sel = np.flatnonzero(edges.centers == i)
        order = sel[np.lexsort((edges.neighbors[sel], -w[sel]))]
        for rank, e in enumerate(order, 1):
            lines.append(f"{i} {int(edges.neighbors[e])} {w[e]:.6g} {rank}")
    return "\n".join(lines) + ("\n" if lines else "")

"""Scene graph over segments: each node linked to its nearest segments."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ALL = "all"


def parse_k(value):
    """Neighbor count from CLI/config text: a positive integer or ``"all"``."""
    if value is None or value == ALL:
        return ALL
    k = int(value)
    if k < 0:
        raise ValueError(f"neighbor count must be >= 0, got {k}")
    return k


@dataclass
class SceneGraph:
    """Directed k-NN relation: ``neighbors[i]`` is Omega_i, nearest first."""

    centroids: np.ndarray
    neighbors: list
    distances: list
    k: object
    boxes: list = None

    @property
    def n_nodes(self):
        return len(self.neighbors)

    @property
    def isolated(self):
        """Nodes with an empty neighborhood (they behave as unary)."""
        return [i for i, nb in enumerate(self.neighbors) if len(nb) == 0]

    def edges(self):
        """``(centers, neighbors)`` index arrays of every (i, j in Omega_i), grouped by i."""
        centers = np.repeat(np.arange(self.n_nodes), [len(nb) for nb in self.neighbors])
        nbrs = np.concatenate([np.asarray(nb, dtype=np.int64) for nb in self.neighbors]) if self.neighbors else np.zeros(0)
        return centers.astype(np.int64), nbrs.astype(np.int64)

    def degrees(self):
        return np.array([len(nb) for nb in self.neighbors], dtype=np.int64)


def pairwise_distances(points):
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt((diff ** 2).sum(-1))


def build_graph(segset_or_centroids, k=ALL) -> SceneGraph:
    """Link every node to its ``k`` nearest other nodes by centroid distance.

    Ties are broken by the lower node index.  Accepts a ``SegmentSet`` or an
    ``(n, 3)`` centroid array.
    """
    boxes = None
    if hasattr(segset_or_centroids, "centroids"):
        boxes = segset_or_centroids.boxes
        cents = segset_or_centroids.centroids
    else:
        cents = np.asarray(segset_or_centroids, dtype=np.float64).reshape(-1, 3)
    k = parse_k(k)
    n = len(cents)
    limit = n - 1 if k == ALL else min(k, max(n - 1, 0))
    dist = pairwise_distances(cents)
    neighbors, distances = [], []
    idx = np.arange(n)
    for i in range(n):
        others = idx[idx != i]
        order = np.lexsort((others, dist[i, others]))[:limit]
        neighbors.append(others[order])
        distances.append(dist[i, others[order]])
    return SceneGraph(cents, neighbors, distances, k, boxes)


def format_graph(graph: SceneGraph) -> str:
    """``i : j1 j2 ...`` per node, each followed by a ``# distances`` comment."""
    lines = [f"# scene graph, {graph.n_nodes} nodes, k={graph.k}"]
    for i, (nb, d) in enumerate(zip(graph.neighbors, graph.distances)):
        lines.append(f"{i} : " + " ".join(str(int(j)) for j in nb))
        lines.append("# distances " + " ".join(f"{x:.4f}" for x in d))
    return "\n".join(lines) + "\n"


def parse_graph(text: str):
    """Inverse of :func:`format_graph` for the neighbor lists."""
    neighbors = []
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        head, _, tail = line.partition(":")
        if int(head) != len(neighbors):
            raise ValueError(f"graph dump out of order at node {head.strip()}")
        neighbors.append([int(t) for t in tail.split()])
    return neighbors

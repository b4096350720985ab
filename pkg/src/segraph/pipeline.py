"""Frame preparation shared by training, evaluation and the CLI:
project -> segment -> graph -> network input."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gnn import EdgeIndex
from .graph import ALL, SceneGraph, build_graph
from .pointcloud import PointFrame, ProjectionConfig, RangeImage, normalize_raw, project
from .segmentation import SegmentationConfig, SegmentSet, segment_image


@dataclass
class PreparedFrame:
    """Everything the classifier needs for one frame.

    Only segments carrying a ground-truth label are kept as nodes.
    """

    frame_id: int
    inputs: np.ndarray  # 3 x H x W normalized raw features
    boxes: list
    labels: np.ndarray
    graph: SceneGraph
    edges: EdgeIndex
    segments: SegmentSet = field(repr=False, default=None)
    image: RangeImage = field(repr=False, default=None)

    @property
    def n_nodes(self):
        return len(self.labels)


def keep_labelled(segs: SegmentSet) -> SegmentSet:
    from dataclasses import replace

    kept = [s for s in segs.segments if s.majority_label >= 0]
    return replace(segs, segments=[replace(s, id=i) for i, s in enumerate(kept)])


def prepare_frame(frame: PointFrame, proj: ProjectionConfig = ProjectionConfig(),
                  seg: SegmentationConfig = SegmentationConfig(), k=ALL, keep_image=False) -> PreparedFrame:
    img = project(frame, proj)
    img, segs, _ = segment_image(img, seg)
    segs = keep_labelled(segs)
    graph = build_graph(segs, k)
    return PreparedFrame(
        frame_id=frame.frame_id,
        inputs=normalize_raw(img),
        boxes=segs.boxes,
        labels=segs.labels,
        graph=graph,
        edges=EdgeIndex.from_graph(graph),
        segments=segs if keep_image else None,
        image=img if keep_image else None,
    )


def with_k(prepared: PreparedFrame, k) -> PreparedFrame:
    """Same frame with the graph rebuilt for another neighbor count."""
    from dataclasses import replace

    graph = build_graph(prepared.graph.centroids, k)
    graph.boxes = prepared.boxes
    return replace(prepared, graph=graph, edges=EdgeIndex.from_graph(graph))


def prepare_frames(frames, proj=ProjectionConfig(), seg=SegmentationConfig(), k=ALL):
    """Prepared frames that have at least one labelled segment."""
    out = []
    for f in frames:
        p = prepare_frame(f, proj, seg, k)
        if p.n_nodes:
            out.append(p)
    return out

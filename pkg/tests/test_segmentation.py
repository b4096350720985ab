import math

import numpy as np
import pytest

from oracles import bfs_components, labelled, lattice_image, oracle_region_grow, random_label_image, same_partition
from segraph.pointcloud import PixelLabel, PointFrame, ProjectionConfig, project
from segraph.segmentation import (
    GroundModel,
    Segment,
    SegmentationConfig,
    SegmentSet,
    coarse_segment,
    estimate_ground,
    extract_edges,
    filter_segments,
    format_segments,
    region_grow,
    segment_image,
)
from segraph.synthdata import SceneSpec, generate_frame

U, E, G, B, V = PixelLabel.UNKNOWN, PixelLabel.EDGE, PixelLabel.GROUND, PixelLabel.BACKGROUND, PixelLabel.UNVALID

def test_region_grow_matches_bfs_oracle():
    rng = np.random.default_rng(7)
    cfg = SegmentationConfig()
    wrapped = 0
    for trial in range(1000):
        labels = random_label_image(rng)
        img = labelled(labels, ranges=rng.uniform(5, 15, labels.size))
        out, segs = region_grow(img, cfg)
        expect = oracle_region_grow(labels, img.xyz, True, cfg.min_pts)
        got = np.where(out.seg_label >= 0, out.seg_label, -1)
        assert same_partition(got, expect), trial
        wrapped += bool(np.any((got[:, 0] >= 0) & (got[:, 0] == got[:, -1])))
    assert wrapped > 50  # many images exercise the seam


def test_core_components_match_bfs():
    rng = np.random.default_rng(3)
    from segraph.segmentation import _components

    for wrap in (True, False):
        for _ in range(100):
            labels = random_label_image(rng)
            comp = _components(labels == U, wrap)
            expect, _ = bfs_components(labels, wrap)
            # both number components by first pixel in row-major order
            assert np.array_equal(comp, expect)


def test_two_blobs_separated_by_ground():
    labels = np.full((6, 12), G)
    labels[1:4, 1:4] = U
    labels[1:4, 7:10] = U
    _, segs = region_grow(labelled(labels))
    assert len(segs) == 2


def test_edge_line_splits_blob():
    labels = np.full((6, 12), G)
    labels[1:5, 1:11] = U
    labels[1:5, 6] = E
    ranges = np.full(labels.size, 10.0)
    out, segs = region_grow(labelled(labels, ranges=ranges))
    assert len(segs) == 2
    assert not np.any(out.seg_label == U)


def test_wrap_around_joins_seam():
    labels = np.full((6, 12), G)
    labels[2:5, :2] = U
    labels[2:5, -2:] = U
    ranges = np.full(labels.size, 10.0)
    _, segs = region_grow(labelled(labels, ranges=ranges))
    assert len(segs) == 1 and segs.segments[0].point_count == 12
    # a sector image is not a cylinder
    cfg = ProjectionConfig(6, 12, az_min=-0.2, az_max=0.2)
    _, segs = region_grow(labelled(labels, cfg, ranges))
    assert len(segs) == 2


def test_small_components_dropped():
    labels = np.full((6, 12), G)
    labels[1:3, 1:3] = U  # 4 pixels < min_pts
    labels[1:4, 6:9] = U
    out, segs = region_grow(labelled(labels, ranges=np.full(labels.size, 10.0)))
    assert len(segs) == 1 and segs.segments[0].point_count == 9
    assert np.all(out.seg_label[1:3, 1:3] == E)


def test_segment_fields():
    labels = np.full((6, 12), G)
    labels[1:4, 2:5] = U
    img = labelled(labels, ranges=np.full(labels.size, 10.0))
    _, segs = region_grow(img)
    s = segs.segments[0]
    assert s.bbox == (1, 2, 3, 4) and s.point_count == 9
    pts = img.xyz[1:4, 2:5].reshape(-1, 3)
    assert np.allclose(s.centroid_3d, pts.mean(axis=0))
    assert s.centroid_range_m == pytest.approx(np.linalg.norm(pts.mean(axis=0)))


def test_partition_properties():
    rng = np.random.default_rng(11)
    for _ in range(50):
        labels = random_label_image(rng)
        out, segs = region_grow(labelled(labels, ranges=rng.uniform(5, 15, labels.size)))
        assert [s.id for s in segs] == list(range(len(segs)))
        seen = np.zeros(labels.shape, dtype=bool)
        for s in segs:
            mask = np.zeros(labels.shape, dtype=bool)
            mask[s.pixels[:, 0], s.pixels[:, 1]] = True
            assert not np.any(seen & mask)
            seen |= mask
            comp, n = bfs_components(np.where(mask, U, G), True)
            assert n == 1  # 4-connected (on the cylinder)
            r0, c0, r1, c1 = s.bbox
            assert (r0, r1) == (s.pixels[:, 0].min(), s.pixels[:, 0].max())
        assert not np.any(out.seg_label == U)


def test_majority_label_tie_lowest():
    H, W = 4, 8
    d = ProjectionConfig(H, W).ray_directions().reshape(-1, 3)
    gt = np.full(H * W, 3)
    gt[[9, 10]] = 2
    gt[[11, 12]] = 1
    frame = PointFrame(d * 10, np.zeros(H * W), gt)
    labels = np.full((H, W), G)
    labels.reshape(-1)[[9, 10, 11, 12]] = U
    img = project(frame, ProjectionConfig(H, W)).with_labels(labels)
    _, segs = region_grow(img, SegmentationConfig(min_pts=1))
    assert segs.segments[0].majority_label == 1


# coarse labels and edges

def test_coarse_labels():
    d = np.array([[math.cos(a), math.sin(a), 0.0] for a in (0.1, 0.2, 0.3, 0.4)])
    z = np.array([0.1, 4.5, 1.0, 0.2])
    xyz = d * 40
    xyz[:, 2] = z
    img = project(PointFrame(xyz, np.zeros(4), np.zeros(4, dtype=np.int64)))
    out = coarse_segment(img, GroundModel("plane", np.zeros(3)))
    got = [out.seg_label.reshape(-1)[np.flatnonzero(img.index.reshape(-1) == i)[0]] for i in range(4)]
    assert got == [G, B, U, G]
    assert np.all(out.seg_label[~img.valid] == V)


def edge_pair(r1, r2, between=U):
    cfg = ProjectionConfig(1, 8, az_min=-0.1, az_max=0.1)
    ranges = np.full(8, 5.0)
    ranges[4] = r2
    img = lattice_image(ranges, cfg)
    labels = np.full((1, 8), U)
    labels[0, 4] = between
    return extract_edges(img.with_labels(labels))


def test_edge_small_gap_ignored():
    img = edge_pair(5.0, 5.05)
    assert not np.any(img.seg_label == E)


def test_edge_large_gap_flags_both():
    img = edge_pair(5.0, 7.0)
    assert img.seg_label[0, 3] == E and img.seg_label[0, 4] == E and img.seg_label[0, 5] == E
    assert img.seg_label[0, 0] == U


def test_edge_needs_unknown_neighbor():
    img = edge_pair(5.0, 7.0, between=G)
    assert not np.any(img.seg_label == E)


def test_edge_threshold_grows_with_range():
    cfg = SegmentationConfig()
    assert max(cfg.edge_min_m, cfg.edge_alpha * 30) == pytest.approx(0.6)
    cfg1 = ProjectionConfig(1, 8, az_min=-0.01, az_max=0.01)
    ranges = np.full(8, 30.0)
    ranges[4] = 30.45  # gap 0.45 m: an edge at 5 m, not at 30 m
    img = lattice_image(ranges, cfg1)
    assert not np.any(extract_edges(img.with_labels(np.full((1, 8), U))).seg_label == E)


# ground estimation

def floor_scene(tilt=0.0):
    spec = SceneSpec(fov_deg=360.0, width=1800, floor_tilt=tilt, n_persons=3, n_cars=2, n_clutter=4,
                     person_range=(6.0, 20.0), clutter_range=(4.0, 20.0))
    frame, _ = generate_frame(spec, np.random.default_rng(5))
    return project(frame, spec.projection())


def test_ground_flat_floor():
    img = floor_scene()
    g = estimate_ground(img)
    assert not g.fallback
    xs, ys = np.meshgrid(np.linspace(-25, 25, 21), np.linspace(-25, 25, 21))
    assert np.max(np.abs(g.elevation(xs, ys) + 1.8)) < 0.05


def test_ground_tilted_normal():
    img = floor_scene(0.02)
    g = estimate_ground(img)
    true = np.array([-0.02, 0.0, 1.0]) / math.hypot(0.02, 1.0)
    assert math.degrees(math.acos(min(1.0, g.normal @ true))) < 1.0


def test_ground_sector_model():
    img = floor_scene()
    g = estimate_ground(img, SegmentationConfig(ground_model="sector"))
    assert g.kind == "sector"
    assert np.max(np.abs(g.elevation(np.array([10.0, -5.0]), np.array([0.0, 3.0])) + 1.8)) < 0.1


def test_ground_fallback_on_empty():
    g = estimate_ground(project(PointFrame.empty()))
    assert g.fallback and g.elevation(3.0, 4.0) == 0.0


# filtering and the full pipeline

def fake_segment(i, rng_m, h):
    return Segment(i, np.array([[0, i]]), (0, i, 0, i), np.array([rng_m, 0, 0]), rng_m, h, 0, 1)


@pytest.mark.parametrize("rng_m, h, kept", [(26.0, 1.0, False), (10.0, 5.5, False), (10.0, 1.0, True),
                                            (25.0, 5.0, True)])
def test_filter_thresholds(rng_m, h, kept):
    out = filter_segments(SegmentSet([fake_segment(0, rng_m, h)]))
    assert len(out) == int(kept)


def test_filter_redensifies_ids():
    segs = SegmentSet([fake_segment(0, 10, 1), fake_segment(1, 30, 1), fake_segment(2, 12, 1)])
    out = filter_segments(segs)
    assert [s.id for s in out] == [0, 1]
    assert [s.centroid_range_m for s in out] == [10, 12]


def test_pipeline_deterministic_and_consistent():
    spec = SceneSpec()
    frame, _ = generate_frame(spec, np.random.default_rng(1))
    a_img, a, _ = segment_image(project(frame, spec.projection()))
    b_img, b, _ = segment_image(project(frame, spec.projection()))
    assert format_segments(a) == format_segments(b)
    assert np.array_equal(a_img.seg_label, b_img.seg_label)
    # the label image carries exactly the surviving ids
    assert sorted(np.unique(a_img.seg_label[a_img.seg_label >= 0]).tolist()) == list(range(len(a)))


def test_format_segments_line():
    s = Segment(3, np.array([[1, 2]]), (1, 2, 4, 6), np.array([1.0, -2.0, 0.5]), 2.29, 1.0, 2, 17)
    assert format_segments(SegmentSet([s])) == "3 17 2 1 2 4 6 1.0000 -2.0000 0.5000\n"

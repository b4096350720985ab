import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from segraph.pointcloud import (
    PixelLabel,
    Point,
    PointFrame,
    ProjectionConfig,
    compute_heights,
    normalize_raw,
    pixel_coords,
    project,
    read_xyzl,
    write_xyzl,
)
from segraph.segmentation import GroundModel

FLAT = GroundModel("plane", np.array([0.0, 0.0, 0.0]))


def frame_of(points):
    return PointFrame.from_points([Point(*p) for p in points])


def lattice_frame(cfg, r=10.0):
    """One point through every pixel center, at range ``r``."""
    d = cfg.ray_directions().reshape(-1, 3)
    return PointFrame(d * r, np.full(len(d), 50.0), np.zeros(len(d), dtype=np.int64))


def test_mid_column_for_zero_azimuth():
    img = project(frame_of([(10, 0, 0, 100)]))
    r, c = np.argwhere(img.valid)[0]
    assert c == 900
    assert img.range_m[r, c] == 10.0
    assert img.intensity[r, c] == 100.0


def test_keep_nearest():
    img = project(frame_of([(7, 0, 0, 1), (5, 0, 0, 2)]))
    assert img.valid.sum() == 1
    assert img.range_m[img.valid][0] == 5.0
    assert img.index[img.valid][0] == 1


def test_lattice_round_trip():
    cfg = ProjectionConfig()
    frame = lattice_frame(cfg)
    img = project(frame, cfg)
    assert len(frame) == 72000
    assert img.valid.sum() == 72000 and img.n_dropped == 0
    # each pixel back-references the point cast through it
    expect = np.arange(72000).reshape(40, 1800)
    assert np.array_equal(img.index, expect)
    assert np.allclose(img.xyz.reshape(-1, 3), frame.xyz)


def test_sector_lattice_round_trip():
    cfg = ProjectionConfig(40, 192, az_min=-math.radians(24), az_max=math.radians(24))
    img = project(lattice_frame(cfg, 7.0), cfg)
    assert img.valid.all() and img.n_dropped == 0


def test_out_of_fov_dropped():
    img = project(frame_of([(1, 0, 5, 0), (10, 0, 0, 0)]))
    assert img.valid.sum() == 1 and img.n_dropped == 1


def test_invalid_pixels_are_zero():
    img = project(frame_of([(10, 0, 0, 100)]))
    inv = ~img.valid
    assert np.all(img.range_m[inv] == 0) and np.all(img.intensity[inv] == 0)
    assert np.all(img.index[inv] == -1)
    assert np.all(img.seg_label[inv] == PixelLabel.UNVALID)


def test_empty_frame():
    img = project(PointFrame.empty())
    assert img.shape == (40, 1800) and not img.valid.any()


@given(st.floats(-math.pi, math.pi, exclude_min=True))
def test_column_in_range(az):
    cfg = ProjectionConfig()
    _, col, keep = pixel_coords([[math.cos(az), math.sin(az), 0.0]], cfg)
    assert keep[0] and 0 <= col[0] < cfg.width


@given(st.lists(st.floats(0.5, 30.0), min_size=1, max_size=8))
def test_collision_keeps_minimum(ranges):
    direction = np.array([math.cos(0.3), math.sin(0.3), 0.01])
    frame = PointFrame(np.outer(ranges, direction), np.zeros(len(ranges)), np.zeros(len(ranges), dtype=np.int64))
    img = project(frame)
    assert img.valid.sum() == 1
    assert img.range_m[img.valid][0] == pytest.approx(min(ranges) * np.linalg.norm(direction))


def test_heights_flat_and_clamped():
    img = compute_heights(project(frame_of([(20, 0, 1.7, 0), (10, 1, -0.1, 0)])), FLAT)
    hs = sorted(img.height_m[img.valid].tolist())
    assert hs == pytest.approx([0.0, 1.7])


def test_heights_tilted_plane():
    ground = GroundModel("plane", np.array([0.01, 0.0, 0.0]))
    img = compute_heights(project(frame_of([(10, 0, 1.0, 0)])), ground)
    assert img.height_m[img.valid][0] == pytest.approx(0.9)


def test_heights_need_ground():
    with pytest.raises(ValueError):
        compute_heights(project(frame_of([(10, 0, 0, 0)])), None)


@pytest.mark.parametrize("rng_m, expect", [(25.0, 255.0), (30.0, 255.0), (12.5, 127.5)])
def test_normalize_range(rng_m, expect):
    img = compute_heights(project(frame_of([(rng_m, 0, 0, 0)])), GroundModel("plane", np.array([0, 0, -100.0])))
    assert normalize_raw(img)[0][img.valid][0] == pytest.approx(expect)


def test_normalize_height_and_intensity():
    img = compute_heights(project(frame_of([(10, 0, 0.5, 77)])), GroundModel("plane", np.array([0, 0, -2.0])))
    out = normalize_raw(img)
    assert out[2][img.valid][0] == pytest.approx(127.5)
    assert out[1][img.valid][0] == 77


@given(st.lists(st.tuples(st.floats(-40, 40), st.floats(-40, 40), st.floats(-3, 3), st.floats(0, 255)),
                min_size=1, max_size=30))
def test_normalize_bounds(points):
    img = compute_heights(project(frame_of(points)), GroundModel("plane", np.array([0, 0, -2.0])))
    out = normalize_raw(img)
    assert out.shape == (3, 40, 1800)
    assert np.all(out >= 0) and np.all(out <= 255) and np.all(np.isfinite(out))


def test_normalize_monotone():
    pts = [(r * math.cos(a), r * math.sin(a), 0, 0) for r, a in zip((2, 8, 20, 40), (0.1, 0.5, 1.0, 1.5))]
    img = compute_heights(project(frame_of(pts)), GroundModel("plane", np.array([0, 0, -10.0])))
    ch = normalize_raw(img)[0]
    vals = [ch[np.unravel_index(np.flatnonzero(img.index == i)[0], ch.shape)] for i in range(4)]
    assert vals == sorted(vals)


def test_frame_validation():
    with pytest.raises(ValueError):
        frame_of([(0, 0, 0, 300)])
    with pytest.raises(ValueError):
        frame_of([(np.nan, 0, 0, 1)])


def test_xyzl_round_trip(tmp_path):
    frame = frame_of([(1.5, -2.25, 0.125, 12.5, 2), (3, 4, 5, 0, -1)])
    path = tmp_path / "f.xyzl"
    write_xyzl(path, frame)
    back = read_xyzl(path)
    assert np.allclose(back.xyz, frame.xyz) and np.array_equal(back.label, frame.label)
    assert np.array_equal(back.intensity, frame.intensity)


def test_xyzl_malformed(tmp_path):
    path = tmp_path / "bad.xyzl"
    path.write_text("# header\n1 2 3\n")
    with pytest.raises(ValueError):
        read_xyzl(path)

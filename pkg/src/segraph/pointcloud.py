"""LiDAR frames, range-image projection and raw feature channels."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import NamedTuple

import numpy as np

RANGE_SPAN_M = 25.0
HEIGHT_SPAN_M = 5.0
FEATURE_MAX = 255.0


class PixelLabel(IntEnum):
    """Range-image pixel states; segment ids are the non-negative integers."""

    UNVALID = -1
    GROUND = -2
    BACKGROUND = -3
    UNKNOWN = -4
    EDGE = -5


class Point(NamedTuple):
    x: float
    y: float
    z: float
    intensity: float = 0.0
    label: int = -1


@dataclass
class PointFrame:
    """One sweep stored column-wise: ``xyz`` (N, 3), ``intensity`` (N,), ``label`` (N,).

    ``label`` is -1 for unlabeled points.
    """

    xyz: np.ndarray
    intensity: np.ndarray
    label: np.ndarray
    frame_id: int = 0

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        self.intensity = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
        self.label = np.asarray(self.label, dtype=np.int64).reshape(-1)
        n = len(self.xyz)
        if len(self.intensity) != n or len(self.label) != n:
            raise ValueError("xyz, intensity and label lengths differ")
        if not np.all(np.isfinite(self.xyz)):
            raise ValueError("non-finite coordinates in frame")
        if n and (self.intensity.min() < 0 or self.intensity.max() > 255):
            raise ValueError("intensity outside [0, 255]")

    @classmethod
    def from_points(cls, points, frame_id=0):
        points = list(points)
        if not points:
            return cls.empty(frame_id)
        arr = np.array([(p.x, p.y, p.z, p.intensity, p.label) for p in points], dtype=np.float64)
        return cls(arr[:, :3], arr[:, 3], arr[:, 4].astype(np.int64), frame_id)

    @classmethod
    def empty(cls, frame_id=0):
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0, dtype=np.int64), frame_id)

    def __len__(self):
        return len(self.xyz)

    def points(self):
        for (x, y, z), i, l in zip(self.xyz, self.intensity, self.label):
            yield Point(float(x), float(y), float(z), float(i), int(l))


@dataclass(frozen=True)
class ProjectionConfig:
    """Range-image geometry.

    Rows bin elevation linearly from ``elev_max`` (row 0) down to ``elev_min``.
    Columns bin azimuth ``atan2(y, x)`` over ``[az_min, az_max)``; the default
    full circle gives ``col = floor(W * (az + pi) / (2 pi))``.
    """

    height: int = 40
    width: int = 1800
    elev_min: float = math.radians(-16.0)
    elev_max: float = math.radians(7.0)
    az_min: float = -math.pi
    az_max: float = math.pi
    collision: str = "keep-nearest"

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ValueError("image dimensions must be positive")
        if not self.elev_max > self.elev_min:
            raise ValueError("elev_max must exceed elev_min")
        if not self.az_max > self.az_min or self.az_max - self.az_min > 2 * math.pi + 1e-12:
            raise ValueError("azimuth span must be in (0, 2 pi]")
        if self.collision != "keep-nearest":
            raise ValueError(f"unsupported collision policy {self.collision!r}")

    @property
    def full_circle(self):
        return abs((self.az_max - self.az_min) - 2 * math.pi) < 1e-9

    def row_elevation(self, row):
        """Elevation (radians) at the center of ``row``."""
        step = (self.elev_max - self.elev_min) / self.height
        return self.elev_max - (np.asarray(row) + 0.5) * step

    def col_azimuth(self, col):
        step = (self.az_max - self.az_min) / self.width
        return self.az_min + (np.asarray(col) + 0.5) * step

    def ray_directions(self):
        """Unit vectors (H, W, 3) through every pixel center."""
        el, az = np.meshgrid(self.row_elevation(np.arange(self.height)),
                             self.col_azimuth(np.arange(self.width)), indexing="ij")
        return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)


@dataclass
class RangeImage:
    """Per-pixel channels of one projected frame.

    Invalid cells hold 0 in every float channel and -1 in ``index``.
    ``seg_label`` carries :class:`segraph.segmentation.PixelLabel` codes or a
    non-negative segment id.
    """

    config: ProjectionConfig
    frame: PointFrame
    range_m: np.ndarray
    intensity: np.ndarray
    height_m: np.ndarray
    valid: np.ndarray
    seg_label: np.ndarray
    index: np.ndarray
    n_dropped: int = 0
    ground: object = field(default=None, repr=False)

    @property
    def shape(self):
        return self.range_m.shape

    @property
    def xyz(self):
        """Back-referenced 3-D points (H, W, 3); zeros where invalid."""
        out = np.zeros(self.shape + (3,))
        out[self.valid] = self.frame.xyz[self.index[self.valid]]
        return out

    @property
    def labels(self):
        """Ground-truth class of each pixel's point, -1 where invalid/unlabeled."""
        out = np.full(self.shape, -1, dtype=np.int64)
        out[self.valid] = self.frame.label[self.index[self.valid]]
        return out

    def with_labels(self, seg_label):
        return replace(self, seg_label=seg_label)


def pixel_coords(xyz, cfg: ProjectionConfig):
    """Row, column and in-view mask for each point."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    rng = np.linalg.norm(xyz, axis=1)
    horiz = np.hypot(xyz[:, 0], xyz[:, 1])
    elev = np.arctan2(xyz[:, 2], horiz)
    az = np.arctan2(xyz[:, 1], xyz[:, 0])

    keep = (rng > 0) & (elev >= cfg.elev_min) & (elev <= cfg.elev_max)
    row = np.floor((cfg.elev_max - elev) / (cfg.elev_max - cfg.elev_min) * cfg.height).astype(np.int64)
    row = np.clip(row, 0, cfg.height - 1)
    col = np.floor(cfg.width * (az - cfg.az_min) / (cfg.az_max - cfg.az_min)).astype(np.int64)
    if cfg.full_circle:
        col %= cfg.width
    else:
        keep &= (col >= 0) & (col < cfg.width)
        col = np.clip(col, 0, cfg.width - 1)
    return row, col, keep


def project(frame: PointFrame, cfg: ProjectionConfig = ProjectionConfig()) -> RangeImage:
    """Project ``frame`` onto an H x W grid, keeping the nearest point per cell."""
    H, W = cfg.height, cfg.width
    index = np.full((H, W), -1, dtype=np.int64)
    row, col, keep = pixel_coords(frame.xyz, cfg)
    rng = np.linalg.norm(frame.xyz, axis=1)

    ids = np.flatnonzero(keep)
    if len(ids):
        pix = row[ids] * W + col[ids]
        order = np.lexsort((ids, rng[ids], pix))
        pix_sorted = pix[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = pix_sorted[1:] != pix_sorted[:-1]
        winners = ids[order[first]]
        index.reshape(-1)[pix_sorted[first]] = winners

    valid = index >= 0
    range_m = np.zeros((H, W))
    intensity = np.zeros((H, W))
    range_m[valid] = rng[index[valid]]
    intensity[valid] = frame.intensity[index[valid]]
    seg = np.where(valid, PixelLabel.UNKNOWN, PixelLabel.UNVALID).astype(np.int64)
    return RangeImage(
        config=cfg,
        frame=frame,
        range_m=range_m,
        intensity=intensity,
        height_m=np.zeros((H, W)),
        valid=valid,
        seg_label=seg,
        index=index,
        n_dropped=int(len(frame) - keep.sum()),
    )


def compute_heights(img: RangeImage, ground) -> RangeImage:
    """Height above ``ground`` for every valid pixel, clamped at 0."""
    if ground is None:
        raise ValueError("compute_heights needs a ground model")
    height = np.zeros(img.shape)
    pts = img.frame.xyz[img.index[img.valid]]
    if len(pts):
        height[img.valid] = np.maximum(pts[:, 2] - ground.elevation(pts[:, 0], pts[:, 1]), 0.0)
    return replace(img, height_m=height, ground=ground)


def normalize_raw(img: RangeImage) -> np.ndarray:
    """3 x H x W network input: range, intensity and height scaled to [0, 255]."""
    out = np.zeros((3,) + img.shape)
    out[0] = np.minimum(img.range_m * (FEATURE_MAX / RANGE_SPAN_M), FEATURE_MAX)
    out[1] = np.clip(img.intensity, 0.0, FEATURE_MAX)
    out[2] = np.minimum(img.height_m * (FEATURE_MAX / HEIGHT_SPAN_M), FEATURE_MAX)
    out[:, ~img.valid] = 0.0
    return out


# .xyzl text frames

def read_xyzl(path, frame_id=0) -> PointFrame:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ValueError(f"{path}:{lineno}: expected 'x y z intensity label'")
            rows.append(parts)
    if not rows:
        return PointFrame.empty(frame_id)
    arr = np.array(rows, dtype=np.float64)
    return PointFrame(arr[:, :3], arr[:, 3], arr[:, 4].astype(np.int64), frame_id)


def format_xyzl(frame: PointFrame) -> str:
    lines = [f"# frame {frame.frame_id} points {len(frame)}"]
    for (x, y, z), i, l in zip(frame.xyz, frame.intensity, frame.label):
        lines.append(f"{x:.4f} {y:.4f} {z:.4f} {i:.1f} {int(l)}")
    return "\n".join(lines) + "\n"


def write_xyzl(path, frame: PointFrame):
    with open(path, "w") as fh:
        fh.write(format_xyzl(frame))

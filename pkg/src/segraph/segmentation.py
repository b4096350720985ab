"""Segment generation on the range image: ground removal, coarse labeling,
edge extraction and region growing."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .pointcloud import PixelLabel, RangeImage

__all__ = [
    "PixelLabel", "SegmentationConfig", "GroundModel", "Segment", "SegmentSet",
    "estimate_ground", "coarse_segment", "extract_edges", "region_grow",
    "filter_segments", "segment_image", "format_segments",
]


@dataclass(frozen=True)
class SegmentationConfig:
    ground_model: str = "plane"  # or "sector"
    n_sectors: int = 90
    ground_inlier_m: float = 0.2
    ground_iters: int = 10
    ground_thresh_m: float = 0.2
    background_height_m: float = 4.0
    edge_min_m: float = 0.3
    edge_alpha: float = 0.02
    min_pts: int = 5
    max_center_range_m: float = 25.0
    max_center_height_m: float = 5.0


@dataclass
class GroundModel:
    """Ground elevation z(x, y).

    ``kind == "plane"`` uses ``coef = (a, b, c)`` with ``z = a x + b y + c``.
    ``kind == "sector"`` holds one constant per azimuth sector over
    ``[az_min, az_max)``; queries outside snap to the nearest sector.
    """

    kind: str
    coef: np.ndarray
    az_min: float = -math.pi
    az_max: float = math.pi
    fallback: bool = False

    def elevation(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if self.kind == "plane":
            a, b, c = self.coef
            return a * x + b * y + c
        n = len(self.coef)
        az = np.arctan2(y, x)
        k = np.floor((az - self.az_min) / (self.az_max - self.az_min) * n).astype(np.int64)
        return self.coef[np.clip(k, 0, n - 1)]

    @property
    def normal(self):
        if self.kind != "plane":
            raise ValueError("only plane models have a normal")
        a, b, _ = self.coef
        n = np.array([-a, -b, 1.0])
        return n / np.linalg.norm(n)


def _fit_plane(pts, weights):
    A = np.column_stack([pts[:, 0], pts[:, 1], np.ones(len(pts))])
    sw = np.sqrt(weights)
    coef, *_ = np.linalg.lstsq(A * sw[:, None], pts[:, 2] * sw, rcond=None)
    return coef


def _ground_candidates(img: RangeImage, n_sectors):
    """Lowest-z valid point of each azimuth sector (column band)."""
    H, W = img.shape
    n_sectors = max(1, min(n_sectors, W))
    sector_of_col = np.arange(W) * n_sectors // W
    xyz = img.xyz
    z = np.where(img.valid, xyz[..., 2], np.inf)
    col_best_row = z.argmin(axis=0)
    col_best_z = z[col_best_row, np.arange(W)]
    cands = []
    for s in range(n_sectors):
        cols = np.flatnonzero(sector_of_col == s)
        zs = col_best_z[cols]
        if not np.isfinite(zs).any():
            cands.append(None)
            continue
        c = cols[np.argmin(zs)]
        cands.append(xyz[col_best_row[c], c])
    return cands


def estimate_ground(img: RangeImage, cfg: SegmentationConfig = SegmentationConfig()) -> GroundModel:
    """Fit the ground to the lowest point of each azimuth sector.

    The plane fit is iteratively reweighted: residuals beyond the inlier
    threshold are down-weighted (Huber), and the last pass keeps only inliers.
    Fewer than three candidate sectors fall back to ``z = min z`` (0 for an
    empty frame) with ``fallback`` set.
    """
    pc = img.config
    cands = _ground_candidates(img, cfg.n_sectors)
    found = [c for c in cands if c is not None]
    if len(found) < 3:
        z0 = float(img.xyz[img.valid][:, 2].min()) if img.valid.any() else 0.0
        return GroundModel("plane", np.array([0.0, 0.0, z0]), pc.az_min, pc.az_max, fallback=True)

    pts = np.array(found)
    thr = cfg.ground_inlier_m
    weights = np.ones(len(pts))
    coef = _fit_plane(pts, weights)
    for _ in range(cfg.ground_iters):
        resid = np.abs(pts[:, 2] - pts @ np.array([coef[0], coef[1], 0.0]) - coef[2])
        weights = thr / np.maximum(resid, thr)
        coef = _fit_plane(pts, weights)
    resid = np.abs(pts[:, 2] - (coef[0] * pts[:, 0] + coef[1] * pts[:, 1] + coef[2]))
    inliers = resid <= thr
    if inliers.sum() >= 3:
        coef = _fit_plane(pts[inliers], np.ones(inliers.sum()))

    if cfg.ground_model == "plane":
        return GroundModel("plane", coef, pc.az_min, pc.az_max)
    if cfg.ground_model != "sector":
        raise ValueError(f"unknown ground model {cfg.ground_model!r}")
    # per-sector constants: sector candidate if it is a plane inlier, else the plane there
    consts = np.empty(len(cands))
    plane = GroundModel("plane", coef)
    for s, c in enumerate(cands):
        if c is None:
            az = pc.az_min + (s + 0.5) * (pc.az_max - pc.az_min) / len(cands)
            consts[s] = plane.elevation(10 * math.cos(az), 10 * math.sin(az))
        else:
            zp = plane.elevation(c[0], c[1])
            consts[s] = c[2] if abs(c[2] - zp) <= thr else zp
    return GroundModel("sector", consts, pc.az_min, pc.az_max)


def coarse_segment(img: RangeImage, ground: GroundModel, cfg: SegmentationConfig = SegmentationConfig()) -> RangeImage:
    """Label pixels Ground / Background / Unknown by height above ``ground``."""
    labels = np.full(img.shape, PixelLabel.UNVALID, dtype=np.int64)
    pts = img.frame.xyz[img.index[img.valid]]
    h = pts[:, 2] - ground.elevation(pts[:, 0], pts[:, 1]) if len(pts) else np.zeros(0)
    sub = np.full(len(h), PixelLabel.UNKNOWN, dtype=np.int64)
    sub[h <= cfg.ground_thresh_m] = PixelLabel.GROUND
    sub[h > cfg.background_height_m] = PixelLabel.BACKGROUND
    labels[img.valid] = sub
    return img.with_labels(labels)


def _neighbor_pairs(shape, wrap):
    """Flat index pairs (p, q) of 4-adjacent pixels, each unordered pair once."""
    H, W = shape
    idx = np.arange(H * W).reshape(H, W)
    pairs = [(idx[:-1, :].ravel(), idx[1:, :].ravel()), (idx[:, :-1].ravel(), idx[:, 1:].ravel())]
    if wrap and W > 2:
        pairs.append((idx[:, -1], idx[:, 0]))
    p = np.concatenate([a for a, _ in pairs])
    q = np.concatenate([b for _, b in pairs])
    return p, q


def extract_edges(img: RangeImage, cfg: SegmentationConfig = SegmentationConfig()) -> RangeImage:
    """Mark Unknown pixels whose 3-D gap to an Unknown 4-neighbor is too large.

    The gap threshold is ``max(edge_min_m, edge_alpha * r)`` with ``r`` the
    mean range of the two pixels, so the test is symmetric in the pair.
    """
    labels = img.seg_label.copy()
    flat = labels.reshape(-1)
    p, q = _neighbor_pairs(img.shape, img.config.full_circle)
    both = (flat[p] == PixelLabel.UNKNOWN) & (flat[q] == PixelLabel.UNKNOWN)
    p, q = p[both], q[both]
    xyz = img.xyz.reshape(-1, 3)
    rng = img.range_m.reshape(-1)
    gap = np.linalg.norm(xyz[p] - xyz[q], axis=1)
    thr = np.maximum(cfg.edge_min_m, cfg.edge_alpha * 0.5 * (rng[p] + rng[q]))
    cut = gap > thr
    flat[p[cut]] = PixelLabel.EDGE
    flat[q[cut]] = PixelLabel.EDGE
    return img.with_labels(labels)


@dataclass
class Segment:
    id: int
    pixels: np.ndarray  # (n, 2) rows/cols, row-major order
    bbox: tuple  # (row_min, col_min, row_max, col_max), inclusive
    centroid_3d: np.ndarray
    centroid_range_m: float
    centroid_height_m: float
    majority_label: int
    point_count: int


@dataclass
class SegmentSet:
    segments: list
    frame_id: int = 0
    shape: tuple = field(default=(0, 0))

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    @property
    def centroids(self):
        return np.array([s.centroid_3d for s in self.segments]).reshape(-1, 3)

    @property
    def boxes(self):
        return [s.bbox for s in self.segments]

    @property
    def labels(self):
        return np.array([s.majority_label for s in self.segments], dtype=np.int64)

    def label_image(self, base=None):
        """Segment ids painted over ``base`` (or an all-Unknown image).

        Pixels of ``base`` carrying ids of segments no longer in the set become Edge.
        """
        out = np.full(self.shape, PixelLabel.UNKNOWN, dtype=np.int64) if base is None else base.copy()
        if base is not None:
            out[out >= 0] = PixelLabel.EDGE
        for s in self.segments:
            out[s.pixels[:, 0], s.pixels[:, 1]] = s.id
        return out


def _components(mask, wrap):
    """Label 4-connected components of ``mask`` (cylindrical if ``wrap``).

    Components are numbered 0.. in order of their first pixel in row-major
    scan; background is -1.
    """
    comp, n = ndimage.label(mask)
    if wrap and n and mask.shape[1] > 2:
        parent = np.arange(n + 1)

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for a, b in zip(comp[:, 0], comp[:, -1]):
            if a and b:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
        roots = np.array([find(a) for a in range(n + 1)])
        comp = roots[comp]
    flat = comp.reshape(-1)
    out = np.full(flat.shape, -1, dtype=np.int64)
    fg = np.flatnonzero(flat)
    if len(fg):
        _, first = np.unique(flat[fg], return_index=True)
        order = np.argsort(fg[first])  # rank components by first pixel
        remap = np.zeros(flat.max() + 1, dtype=np.int64)
        remap[np.unique(flat[fg])[order]] = np.arange(len(order))
        out[fg] = remap[flat[fg]]
    return out.reshape(mask.shape)


def _majority(labels):
    labels = labels[labels >= 0]
    if not len(labels):
        return -1
    counts = Counter(labels.tolist())
    best = max(counts.values())
    return min(k for k, v in counts.items() if v == best)


def region_grow(img: RangeImage, cfg: SegmentationConfig = SegmentationConfig()):
    """Flood-fill Unknown pixels into segments with edge pixels as barriers.

    Each edge pixel is then attached to the adjacent core segment whose 3-D
    point is nearest to it (ties: lower component).  Components with fewer
    than ``min_pts`` points are dropped and their pixels marked as edge
    debris, so no Unknown pixel is left afterwards.

    Returns ``(labelled RangeImage, SegmentSet)``.
    """
    H, W = img.shape
    wrap = img.config.full_circle
    labels = img.seg_label
    comp = _components(labels == PixelLabel.UNKNOWN, wrap)

    # attach edge pixels to the nearest adjacent core pixel's component
    xyz = img.xyz.reshape(-1, 3)
    flat_comp = comp.reshape(-1)
    edge = np.flatnonzero(labels.reshape(-1) == PixelLabel.EDGE)
    attached = flat_comp.copy()
    if len(edge):
        er, ec = np.divmod(edge, W)
        best_d = np.full(len(edge), np.inf)
        best_c = np.full(len(edge), -1, dtype=np.int64)
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nr, nc = er + dr, ec + dc
            ok = (nr >= 0) & (nr < H)
            if wrap:
                nc = nc % W
            else:
                ok &= (nc >= 0) & (nc < W)
            nb = np.where(ok, nr * W + np.clip(nc, 0, W - 1), 0)
            nb_comp = np.where(ok, flat_comp[np.clip(nb, 0, H * W - 1)], -1)
            d = np.linalg.norm(xyz[edge] - xyz[nb], axis=1)
            better = (nb_comp >= 0) & ((d < best_d) | ((d == best_d) & (nb_comp < best_c)))
            best_d = np.where(better, d, best_d)
            best_c = np.where(better, nb_comp, best_c)
        attached[edge] = best_c

    counts = np.bincount(attached[attached >= 0], minlength=max(flat_comp.max() + 1, 0))
    keep = np.flatnonzero(counts >= cfg.min_pts)
    new_id = np.full(len(counts) + 1, -1, dtype=np.int64)
    new_id[keep] = np.arange(len(keep))
    seg_flat = np.where(attached >= 0, new_id[attached], -1)

    out = labels.reshape(-1).copy()
    grown = (out == PixelLabel.UNKNOWN) | (out == PixelLabel.EDGE)
    out[grown] = PixelLabel.EDGE
    out[seg_flat >= 0] = seg_flat[seg_flat >= 0]
    out = out.reshape(H, W)
    result = img.with_labels(out)
    return result, _collect_segments(result, len(keep))


def _collect_segments(img: RangeImage, n):
    labels = img.seg_label
    xyz = img.xyz
    gt = img.labels
    ground = img.ground
    segments = []
    for sid in range(n):
        pix = np.argwhere(labels == sid)
        pts = xyz[pix[:, 0], pix[:, 1]]
        c = pts.mean(axis=0)
        if ground is not None:
            height = float(c[2] - ground.elevation(c[0], c[1]))
        else:
            height = float(img.height_m[pix[:, 0], pix[:, 1]].mean())
        segments.append(Segment(
            id=sid,
            pixels=pix,
            bbox=(int(pix[:, 0].min()), int(pix[:, 1].min()), int(pix[:, 0].max()), int(pix[:, 1].max())),
            centroid_3d=c,
            centroid_range_m=float(np.linalg.norm(c)),
            centroid_height_m=height,
            majority_label=_majority(gt[pix[:, 0], pix[:, 1]]),
            point_count=len(pix),
        ))
    return SegmentSet(segments, img.frame.frame_id, img.shape)


def filter_segments(segset: SegmentSet, cfg: SegmentationConfig = SegmentationConfig()) -> SegmentSet:
    """Drop segments centred beyond 25 m range or 5 m height; re-number ids."""
    kept = [s for s in segset.segments
            if s.centroid_range_m <= cfg.max_center_range_m and s.centroid_height_m <= cfg.max_center_height_m]
    return replace(segset, segments=[replace(s, id=i) for i, s in enumerate(kept)])


def segment_image(img: RangeImage, cfg: SegmentationConfig = SegmentationConfig()):
    """Full segment generation for a projected frame.

    Returns ``(labelled image with heights, filtered SegmentSet, ground model)``.
    """
    from .pointcloud import compute_heights

    ground = estimate_ground(img, cfg)
    img = compute_heights(img, ground)
    img = coarse_segment(img, ground, cfg)
    img = extract_edges(img, cfg)
    img, segs = region_grow(img, cfg)
    segs = filter_segments(segs, cfg)
    return img.with_labels(segs.label_image(img.seg_label)), segs, ground


def format_segments(segset: SegmentSet) -> str:
    """``id point_count label bbox_rmin bbox_cmin bbox_rmax bbox_cmax cx cy cz`` per line."""
    lines = []
    for s in segset.segments:
        r0, c0, r1, c1 = s.bbox
        cx, cy, cz = s.centroid_3d
        lines.append(f"{s.id} {s.point_count} {s.majority_label} {r0} {c0} {r1} {c1} {cx:.4f} {cy:.4f} {cz:.4f}")
    return "\n".join(lines) + ("\n" if lines else "")

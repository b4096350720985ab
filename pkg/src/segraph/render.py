"""Binary PPM renders of range images, segmentations and graphs."""
from __future__ import annotations

import numpy as np

from .pointcloud import FEATURE_MAX, PixelLabel, RangeImage, normalize_raw

MODES = ("range", "intensity", "height", "segments")
GROUND_RGB = (64, 64, 64)
BACKGROUND_RGB = (192, 192, 192)
EDGE_RGB = (255, 255, 255)


def encode_ppm(rgb) -> bytes:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("expected an H x W x 3 image")
    rgb = np.clip(rgb, 0, 255).astype(np.uint8)
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode() + rgb.tobytes()


def decode_ppm(blob: bytes):
    parts = blob.split(maxsplit=4)
    if parts[0] != b"P6" or int(parts[3]) != 255:
        raise ValueError("not an 8-bit P6 image")
    w, h = int(parts[1]), int(parts[2])
    data = parts[4]
    return np.frombuffer(data[: w * h * 3], dtype=np.uint8).reshape(h, w, 3)


def write_ppm(path, rgb):
    with open(path, "wb") as fh:
        fh.write(encode_ppm(rgb))


def segment_color(seg_id):
    """Stable pseudo-random bright color for a segment id."""
    h = (int(seg_id) * 2654435761) & 0xFFFFFFFF
    rgb = np.array([(h >> 16) & 0xFF, (h >> 8) & 0xFF, h & 0xFF])
    return 64 + rgb * 191 // 255


def render_channel(values):
    """Gray image from a channel already scaled to [0, 255]."""
    g = np.clip(values, 0, FEATURE_MAX)
    return np.repeat(g[..., None], 3, axis=2)


def render_segments(labels):
    H, W = labels.shape
    out = np.zeros((H, W, 3), dtype=np.int64)
    out[labels == PixelLabel.GROUND] = GROUND_RGB
    out[labels == PixelLabel.BACKGROUND] = BACKGROUND_RGB
    out[labels == PixelLabel.EDGE] = EDGE_RGB
    out[labels == PixelLabel.UNKNOWN] = EDGE_RGB
    for sid in np.unique(labels[labels >= 0]):
        out[labels == sid] = segment_color(sid)
    return out


def render(img: RangeImage, mode="range"):
    if mode == "segments":
        return render_segments(img.seg_label)
    if mode not in MODES:
        raise ValueError(f"render mode must be one of {MODES}")
    return render_channel(normalize_raw(img)[MODES.index(mode)])


def draw_graph(rgb, boxes, neighbors, color=(255, 0, 0)):
    """Overlay straight lines between bounding-box centers of linked segments."""
    out = np.array(rgb, dtype=np.int64)
    H, W = out.shape[:2]
    centers = [((r0 + r1) / 2, (c0 + c1) / 2) for r0, c0, r1, c1 in boxes]
    for i, nb in enumerate(neighbors):
        for j in nb:
            (ra, ca), (rb, cb) = centers[i], centers[int(j)]
            n = int(max(abs(rb - ra), abs(cb - ca))) + 1
            rr = np.rint(np.linspace(ra, rb, n)).astype(int)
            cc = np.rint(np.linspace(ca, cb, n)).astype(int)
            ok = (rr >= 0) & (rr < H) & (cc >= 0) & (cc < W)
            out[rr[ok], cc[ok]] = color
    return out

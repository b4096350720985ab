"""Synthetic labelled LiDAR frames with planted context.

Scenes are ray cast from a sensor above a flat floor.  Persons are vertical
cylinders drawn from one template; a person is a Rider when a bike prop
stands within ``r_ctx`` of it, otherwise People.  Every person gets a
reserved slot beside it (left or right, tangential to the view ray) whether
or not a bike is placed there, so a person's own geometry and surroundings
up to the slot are identically distributed for both classes.  Bikes, trees,
clutter and the floor are Unknown.

Spec files are ``key = value`` lines (``#`` comments); see ``SceneSpec``.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields

import numpy as np

from .pointcloud import PointFrame, ProjectionConfig, write_xyzl

PEOPLE, CAR, RIDER, UNKNOWN = 0, 1, 2, 3
SPLITS = {"train": 0, "test": 1}


@dataclass
class SceneSpec:
    """Scene generation parameters.

    Ranges ``(lo, hi)`` are written ``lo:hi`` in spec files.  Distances in
    meters, angles in degrees.
    """

    seed: int = 0
    # sensor: front sector range image
    height: int = 40
    width: int = 192
    fov_deg: float = 48.0
    elev_min_deg: float = -16.0
    elev_max_deg: float = 7.0
    sensor_height: float = 1.8
    max_range: float = 40.0
    noise_sigma: float = 0.02
    floor_tilt: float = 0.0  # dz/dx of the floor
    # persons and context
    n_persons: int = 2
    person_range: tuple = (5.5, 13.0)
    person_min_gap: float = 2.0  # range separation between persons
    person_radius: float = 0.25
    person_height: tuple = (1.6, 1.85)
    rider_prob: float = 0.5
    r_ctx: float = 1.5
    bike_offset: tuple = (1.15, 1.45)
    bike_size: tuple = (1.0, 0.3, 1.0)  # length (radial), width, height
    bike_yaw_deg: float = 15.0
    n_decoy_bikes: int = 1
    bike_total: int = 2  # > 0: decoys top bikes up to this count, overriding n_decoy_bikes
    decoy_min_range_gap: float = 1.5
    # other objects
    n_cars: int = 1
    car_range: tuple = (10.0, 20.0)
    car_size: tuple = (4.2, 1.8, 1.5)
    n_trees: int = 1
    tree_range: tuple = (8.0, 20.0)
    n_clutter: int = 2
    clutter_range: tuple = (4.5, 20.0)
    max_tries: int = 200
    # intensities (mean, spread)
    intensity_person: tuple = (60.0, 8.0)
    intensity_bike: tuple = (120.0, 8.0)
    intensity_car: tuple = (180.0, 10.0)
    intensity_tree: tuple = (45.0, 6.0)
    intensity_clutter: tuple = (90.0, 30.0)
    intensity_floor: tuple = (25.0, 4.0)

    def projection(self) -> ProjectionConfig:
        half = math.radians(self.fov_deg) / 2
        return ProjectionConfig(self.height, self.width, math.radians(self.elev_min_deg),
                                math.radians(self.elev_max_deg), -half, half)

    @property
    def half_fov(self):
        return math.radians(self.fov_deg) / 2


def _coerce(kind, text):
    if kind is tuple:
        return tuple(float(v) for v in text.replace(",", ":").split(":"))
    if kind is int:
        return int(text)
    return float(text)


def parse_spec(text: str, base: SceneSpec = None) -> SceneSpec:
    """``key = value`` lines onto ``base`` (defaults); unknown keys are errors."""
    kinds = {f.name: type(getattr(base or SceneSpec(), f.name)) for f in fields(SceneSpec)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = (p.strip() for p in line.partition("="))
        if not sep or key not in kinds:
            raise ValueError(f"spec line {lineno}: unknown or malformed entry {line!r}")
        values[key] = _coerce(kinds[key], val)
    spec = base or SceneSpec()
    return SceneSpec(**{**{f.name: getattr(spec, f.name) for f in fields(SceneSpec)}, **values})


def format_spec(spec: SceneSpec) -> str:
    lines = []
    for f in fields(SceneSpec):
        v = getattr(spec, f.name)
        lines.append(f"{f.name} = " + (":".join(repr(float(x)) for x in v) if isinstance(v, tuple) else repr(v)))
    return "\n".join(lines) + "\n"


def load_spec(path) -> SceneSpec:
    with open(path) as fh:
        return parse_spec(fh.read())


# shapes and ray casting (rays start at the sensor origin)

@dataclass
class Cylinder:
    cx: float
    cy: float
    radius: float
    z0: float
    z1: float

    def hit(self, d):
        """Distance along unit rays ``d`` (n, 3) to the first hit, inf if none."""
        dx, dy, dz = d[:, 0], d[:, 1], d[:, 2]
        a = dx * dx + dy * dy
        b = -2 * (dx * self.cx + dy * self.cy)
        c = self.cx ** 2 + self.cy ** 2 - self.radius ** 2
        disc = b * b - 4 * a * c
        t = np.full(len(d), np.inf)
        ok = (disc >= 0) & (a > 0)
        ts = np.where(ok, (-b - np.sqrt(np.where(ok, disc, 0))) / (2 * np.where(a > 0, a, 1)), np.inf)
        with np.errstate(invalid="ignore"):
            z = ts * dz
        side = ok & (ts > 0) & (z >= self.z0) & (z <= self.z1)
        t[side] = ts[side]
        # top cap for rays coming from above
        with np.errstate(divide="ignore", invalid="ignore"):
            tc = self.z1 / dz
            px, py = tc * dx - self.cx, tc * dy - self.cy
        cap = (dz < 0) & (tc > 0) & (px * px + py * py <= self.radius ** 2)
        t[cap] = np.minimum(t[cap], tc[cap])
        return t


@dataclass
class Box:
    cx: float
    cy: float
    z0: float
    size: tuple  # (length along yaw, width, height)
    yaw: float

    def hit(self, d):
        """Slab test in the box frame."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        L, Wd, Ht = self.size
        # origin relative to box center, rotated into box frame
        ox, oy = -self.cx, -self.cy
        o = np.array([c * ox + s * oy, -s * ox + c * oy, -(self.z0 + Ht / 2)])
        dl = np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1], d[:, 2]], axis=1)
        half = np.array([L / 2, Wd / 2, Ht / 2])
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dl
            t1 = (-half - o) * inv
            t2 = (half - o) * inv
        # rays parallel to a slab: inside -> (-inf, inf), outside -> empty
        par = dl == 0
        inside = np.abs(o) <= half
        t1 = np.where(par, np.where(inside, -np.inf, np.inf), t1)
        t2 = np.where(par, np.where(inside, np.inf, -np.inf), t2)
        tmin = np.minimum(t1, t2).max(axis=1)
        tmax = np.maximum(t1, t2).min(axis=1)
        hit = (tmax >= tmin) & (tmin > 0)
        return np.where(hit, tmin, np.inf)


@dataclass
class SceneObject:
    kind: str
    shape: object
    label: int
    intensity: float
    footprint: float  # radius used for overlap checks
    meta: dict = field(default_factory=dict)

    @property
    def center(self):
        return np.array([self.shape.cx, self.shape.cy])


@dataclass
class Scene:
    objects: list
    spec: SceneSpec
    placement_failures: int = 0

    @property
    def persons(self):
        return [o for o in self.objects if o.kind == "person"]

    @property
    def bikes(self):
        return [o for o in self.objects if o.kind == "bike"]


def apply_context_rule(persons, bikes, r_ctx):
    """Rider iff some bike center lies within ``r_ctx`` (horizontal) of the person center."""
    for p in persons:
        near = any(np.hypot(*(p.center - b.center)) <= r_ctx for b in bikes)
        p.label = RIDER if near else PEOPLE


def _polar(r, az):
    return r * math.cos(az), r * math.sin(az)


def _floor_z(spec, x):
    return -spec.sensor_height + spec.floor_tilt * x


class _Placer:
    def __init__(self, spec, rng):
        self.spec = spec
        self.rng = rng
        self.taken = []  # (x, y, radius)
        self.failures = 0

    def free(self, x, y, radius):
        return all(math.hypot(x - a, y - b) > radius + rr + 0.3 for a, b, rr in self.taken)

    def claim(self, x, y, radius):
        self.taken.append((x, y, radius))

    def sample(self, rng_bounds, radius, margin_deg=2.0, accept=lambda x, y: True):
        """Random free position in the sensor sector, or None after max_tries."""
        spec, rng = self.spec, self.rng
        for _ in range(spec.max_tries):
            r = rng.uniform(*rng_bounds)
            lim = spec.half_fov - math.radians(margin_deg) - math.atan2(radius, r)
            if lim <= 0:
                continue
            az = rng.uniform(-lim, lim)
            x, y = _polar(r, az)
            if self.free(x, y, radius) and accept(x, y):
                self.claim(x, y, radius)
                return x, y
        self.failures += 1
        return None


def _intensity(rng, pair):
    return float(np.clip(rng.normal(pair[0], pair[1]), 0, 255))


def sample_scene(spec: SceneSpec, rng) -> Scene:
    """Place objects on the floor and label persons by the context rule."""
    pl = _Placer(spec, rng)
    objects = []
    bike_len, bike_w, bike_h = spec.bike_size
    bike_fp = math.hypot(bike_len, bike_w) / 2

    def person_ok(x, y):
        r = math.hypot(x, y)
        return all(abs(r - o.meta["range"]) >= spec.person_min_gap for o in objects if o.kind == "person")

    # persons with their reserved bike slot
    for _ in range(spec.n_persons):
        placed = None
        for _ in range(spec.max_tries):
            side = rng.choice((-1.0, 1.0))
            offset = rng.uniform(*spec.bike_offset)
            yaw_jitter = math.radians(rng.uniform(-spec.bike_yaw_deg, spec.bike_yaw_deg))
            height = rng.uniform(*spec.person_height)
            intensity = _intensity(rng, spec.intensity_person)
            bike_int = _intensity(rng, spec.intensity_bike)
            r = rng.uniform(*spec.person_range)
            lim = spec.half_fov - math.radians(2.0) - math.atan2(offset + bike_fp, r)
            if lim <= 0:
                continue
            az = rng.uniform(-lim, lim)
            x, y = _polar(r, az)
            # slot beside the person, tangential to the view ray
            tx, ty = -math.sin(az) * side, math.cos(az) * side
            bx, by = x + offset * tx, y + offset * ty
            if (pl.free(x, y, spec.person_radius) and pl.free(bx, by, bike_fp) and person_ok(x, y)):
                placed = (x, y, bx, by, az, height, intensity, bike_int, yaw_jitter, r)
                break
        if placed is None:
            pl.failures += 1
            continue
        x, y, bx, by, az, height, intensity, bike_int, yaw_jitter, r = placed
        pl.claim(x, y, spec.person_radius)
        pl.claim(bx, by, bike_fp)
        z0 = _floor_z(spec, x)
        objects.append(SceneObject("person", Cylinder(x, y, spec.person_radius, z0, z0 + height),
                                   PEOPLE, intensity, spec.person_radius, {"range": r}))
        if rng.uniform() < spec.rider_prob:
            objects.append(SceneObject("bike", Box(bx, by, _floor_z(spec, bx), spec.bike_size, az + yaw_jitter),
                                       UNKNOWN, bike_int, bike_fp, {"range": math.hypot(bx, by)}))

    persons = [o for o in objects if o.kind == "person"]

    # decoy bikes, far from every person and at a clearly different range
    def decoy_ok(x, y):
        r = math.hypot(x, y)
        return all(np.hypot(x - p.shape.cx, y - p.shape.cy) > spec.r_ctx + 0.5
                   and abs(r - p.meta["range"]) >= spec.decoy_min_range_gap for p in persons)

    lo = spec.person_range[0]
    hi = spec.person_range[1] + 3.0
    # a fixed bike total keeps the bike count from revealing how many riders there are
    riders = sum(o.kind == "bike" for o in objects)
    n_decoys = max(0, spec.bike_total - riders) if spec.bike_total > 0 else spec.n_decoy_bikes
    for _ in range(n_decoys):
        pos = pl.sample((lo, hi), bike_fp, accept=decoy_ok)
        if pos is None:
            continue
        x, y = pos
        az = math.atan2(y, x)
        yaw = az + math.radians(rng.uniform(-spec.bike_yaw_deg, spec.bike_yaw_deg))
        objects.append(SceneObject("bike", Box(x, y, _floor_z(spec, x), spec.bike_size, yaw), UNKNOWN,
                                   _intensity(rng, spec.intensity_bike), bike_fp, {"range": math.hypot(x, y)}))

    for _ in range(spec.n_cars):
        L, Wd, Ht = spec.car_size
        fp = math.hypot(L, Wd) / 2
        pos = pl.sample(spec.car_range, fp)
        if pos is None:
            continue
        x, y = pos
        yaw = rng.uniform(0, math.pi)
        objects.append(SceneObject("car", Box(x, y, _floor_z(spec, x), spec.car_size, yaw), CAR,
                                   _intensity(rng, spec.intensity_car), fp))

    for _ in range(spec.n_trees):
        radius = rng.uniform(0.15, 0.3)
        pos = pl.sample(spec.tree_range, radius)
        if pos is None:
            continue
        x, y = pos
        z0 = _floor_z(spec, x)
        objects.append(SceneObject("tree", Cylinder(x, y, radius, z0, z0 + rng.uniform(3.0, 3.8)), UNKNOWN,
                                   _intensity(rng, spec.intensity_tree), radius))

    for _ in range(spec.n_clutter):
        size = (rng.uniform(0.4, 1.2), rng.uniform(0.4, 1.2), rng.uniform(0.5, 1.3))
        fp = math.hypot(size[0], size[1]) / 2
        pos = pl.sample(spec.clutter_range, fp)
        if pos is None:
            continue
        x, y = pos
        objects.append(SceneObject("clutter", Box(x, y, _floor_z(spec, x), size, rng.uniform(0, math.pi)),
                                   UNKNOWN, _intensity(rng, spec.intensity_clutter), fp))

    apply_context_rule(persons, [o for o in objects if o.kind == "bike"], spec.r_ctx)
    return Scene(objects, spec, pl.failures)


def render_scene(scene: Scene, rng, frame_id=0) -> PointFrame:
    """Cast one ray per range-image pixel center; nearest surface wins."""
    spec = scene.spec
    d = spec.projection().ray_directions().reshape(-1, 3)
    n = len(d)
    t = np.full(n, np.inf)
    owner = np.full(n, -1, dtype=np.int64)  # -1 floor, else object index
    # floor z = -h + tilt * x  along the ray: t dz = -h + tilt t dx
    denom = d[:, 2] - spec.floor_tilt * d[:, 0]
    with np.errstate(divide="ignore"):
        tf = np.where(denom < 0, -spec.sensor_height / denom, np.inf)
    t = np.minimum(t, tf)
    for k, obj in enumerate(scene.objects):
        tk = obj.shape.hit(d)
        closer = tk < t
        t[closer] = tk[closer]
        owner[closer] = k
    hit = t <= spec.max_range
    t = t[hit] + rng.normal(0.0, spec.noise_sigma, hit.sum())
    owner = owner[hit]
    xyz = d[hit] * t[:, None]

    labels = np.full(len(t), UNKNOWN, dtype=np.int64)
    base = np.full(len(t), spec.intensity_floor[0])
    spread = np.full(len(t), spec.intensity_floor[1])
    for k, obj in enumerate(scene.objects):
        sel = owner == k
        labels[sel] = obj.label
        base[sel] = obj.intensity
        spread[sel] = 3.0
    intensity = np.clip(np.round(base + rng.normal(0.0, 1.0, len(t)) * spread, 1), 0, 255)
    return PointFrame(xyz, intensity, labels, frame_id)


def frame_rng(seed, split, index):
    """Independent generator per (seed, split, frame) so splits never share streams."""
    return np.random.default_rng(np.random.SeedSequence([seed, SPLITS.get(split, split), index]))


def generate_frame(spec: SceneSpec, rng, frame_id=0):
    """``(PointFrame, Scene)`` for one random scene."""
    scene = sample_scene(spec, rng)
    return render_scene(scene, rng, frame_id), scene


def generate_split(spec: SceneSpec, split, n, seed=None):
    seed = spec.seed if seed is None else seed
    out = []
    for i in range(n):
        frame, scene = generate_frame(spec, frame_rng(seed, split, i), frame_id=i)
        out.append((frame, scene))
    return out


def expected_segments(scene: Scene):
    return len(scene.objects)


def generate_dataset(spec: SceneSpec, n_train, n_test, out_dir, seed=None):
    """Write ``<split>/frame_XXXX.xyzl`` files plus ``manifest.txt`` and ``spec.txt``.

    Manifest lines: ``path split n_points n_segments_expected``.
    Returns the manifest path.
    """
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for split, n in (("train", n_train), ("test", n_test)):
        os.makedirs(os.path.join(out_dir, split), exist_ok=True)
        for i, (frame, scene) in enumerate(generate_split(spec, split, n, seed)):
            rel = f"{split}/frame_{i:04d}.xyzl"
            write_xyzl(os.path.join(out_dir, rel), frame)
            lines.append(f"{rel} {split} {len(frame)} {expected_segments(scene)}")
    with open(os.path.join(out_dir, "spec.txt"), "w") as fh:
        fh.write(format_spec(spec))
    path = os.path.join(out_dir, "manifest.txt")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_manifest(path):
    """``[(abs_path, split, n_points, n_segments_expected)]``."""
    root = os.path.dirname(os.path.abspath(path))
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rel, split, npts, nseg = line.split()
            rows.append((os.path.join(root, rel), split, int(npts), int(nseg)))
    return rows

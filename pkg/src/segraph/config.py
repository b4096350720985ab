"""Run configuration: one JSON document covering data, geometry, model and training."""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace

from .graph import parse_k
from .gnn import GnnConfig
from .pointcloud import ProjectionConfig, read_xyzl
from .segmentation import SegmentationConfig
from .synthdata import SceneSpec, generate_split, parse_spec, read_manifest
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Everything a command needs.

    ``manifest`` points at a generated dataset (relative to the config
    file).  Without it, frames are generated in memory from ``scene``
    (``SceneSpec`` overrides).  ``projection`` defaults to the scene's sensor;
    angles there are in degrees.
    """

    manifest: str = ""
    scene: dict = field(default_factory=dict)
    n_train: int = 200
    n_test: int = 50
    projection: dict = field(default_factory=dict)
    segmentation: dict = field(default_factory=dict)
    k: object = "all"
    gnn: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    eval_every: int = 5
    base_dir: str = field(default=".", metadata={"serialize": False})

    def to_json(self):
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.metadata.get("serialize", True)}
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    # typed views
    def scene_spec(self) -> SceneSpec:
        return parse_spec("\n".join(f"{k} = {_spec_value(v)}" for k, v in self.scene.items()))

    def projection_config(self) -> ProjectionConfig:
        if not self.projection:
            return self.scene_spec().projection()
        p = dict(self.projection)
        for key in ("elev_min", "elev_max", "az_min", "az_max"):
            if key + "_deg" in p:
                p[key] = math.radians(p.pop(key + "_deg"))
        return ProjectionConfig(**p)

    def segmentation_config(self) -> SegmentationConfig:
        return SegmentationConfig(**self.segmentation)

    def gnn_config(self) -> GnnConfig:
        return GnnConfig(**self.gnn)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train)

    def neighbor_count(self):
        return parse_k(self.k)

    def validate(self):
        try:
            self.scene_spec()
            self.projection_config()
            self.segmentation_config()
            self.gnn_config()
            self.train_config()
            self.neighbor_count()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def load_frames(self, split):
        """Frames of ``split`` from the manifest, or generated from ``scene``."""
        if self.manifest:
            path = os.path.join(self.base_dir, self.manifest)
            return [read_xyzl(p, frame_id=i) for i, (p, s, _, _) in
                    enumerate(r for r in read_manifest(path) if r[1] == split)]
        n = self.n_train if split == "train" else self.n_test
        return [f for f, _ in generate_split(self.scene_spec(), split, n)]


def _spec_value(v):
    if isinstance(v, (list, tuple)):
        return ":".join(str(x) for x in v)
    return str(v)


def parse_run_config(text, base_dir="."):
    try:
        raw = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in fields(RunConfig)} - {"base_dir"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        cfg = RunConfig(**raw, base_dir=base_dir)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def load_run_config(path):
    with open(path) as fh:
        return parse_run_config(fh.read(), os.path.dirname(os.path.abspath(path)))


def with_overrides(cfg: RunConfig, seed=None, mode=None, k=None, iters=None, loss=None, epochs=None):
    """Command-line flags win over the config file."""
    gnn = dict(cfg.gnn)
    train = dict(cfg.train)
    if seed is not None:
        train["seed"] = seed
    if mode is not None:
        gnn["mode"] = mode
    if iters is not None:
        gnn["T"] = iters
    if loss is not None:
        train["loss_mode"] = loss
    if epochs is not None:
        train["epochs"] = epochs
    out = replace(cfg, gnn=gnn, train=train, k=cfg.k if k is None else k)
    return out.validate()


def effective_dict(cfg: RunConfig):
    """Fully expanded configuration, defaults included, for logging."""
    d = json.loads(cfg.to_json())
    d["scene"] = asdict(cfg.scene_spec())
    d["segmentation"] = asdict(cfg.segmentation_config())
    g = cfg.gnn_config()
    d["gnn"] = asdict(g)
    d["train"] = asdict(cfg.train_config())
    return d

"""Run configuration: every tunable of a design run, JSON round trip and
the built-in presets.

Keys that the underlying studies do not pin (pad placement, seed stroke
widths, surrogate sheet constants, normalization band width) are all
explicit here so a config file documents the full setup.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field as dc_field

from .circuit import Components, PhysicsParams
from .field import GridGeometry, Grid, SeedBounds, make_grid, make_seed_bounds
from .vae import TrainConfig

CONFIG_VERSION = 1


@dataclass
class SeedBoundsSpec:
    """Random-seed parameter ranges as design-window fractions; stroke
    widths in pitch units."""

    point_a_x: tuple = (0.08, 0.38)
    point_a_y: tuple = (0.10, 0.90)
    point_b_x: tuple = (0.62, 0.92)
    point_b_y: tuple = (0.10, 0.90)
    control_x: tuple = (0.0, 1.0)
    control_y: tuple = (0.0, 1.0)
    halfwidth_pitch: tuple = (2.0, 6.0)
    transition_pitch: float = 1.5


@dataclass
class RunConfig:
    f1: float = 100e3
    f2: float = 10e6
    f3: float = 1e3
    g_bar: float = -35.0
    n_initial: int = 100
    n_generate: int = 400
    elite_cap: int = 400
    iterations: int = 70
    rng_seed: int = 2024
    train_dtype: str = "float32"
    normalize_transition_pitch: float = 1.5
    geometry: GridGeometry = dc_field(default_factory=GridGeometry)
    physics: PhysicsParams = dc_field(default_factory=PhysicsParams)
    components: Components = dc_field(
        default_factory=lambda: Components(c1=100e-6, c2=100e-6, l1=10e-6))
    train: TrainConfig = dc_field(default_factory=TrainConfig)
    seed_bounds: SeedBoundsSpec = dc_field(default_factory=SeedBoundsSpec)

    def validate(self):
        if not 0 < self.f3 < self.f1 < self.f2:
            raise ValueError("frequencies must satisfy 0 < f3 < f1 < f2")
        if self.g_bar >= 0:
            raise ValueError("g_bar must be negative (dB)")
        for name in ("n_initial", "n_generate", "elite_cap", "iterations"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.train_dtype not in ("float32", "float64"):
            raise ValueError("train_dtype must be float32 or float64")
        if self.normalize_transition_pitch <= 0:
            raise ValueError("normalize_transition_pitch must be positive")

    def build_grid(self) -> Grid:
        return make_grid(self.geometry)

    def build_seed_bounds(self, grid: Grid) -> SeedBounds:
        sb = self.seed_bounds
        return make_seed_bounds(
            grid,
            a_x=sb.point_a_x, a_y=sb.point_a_y,
            b_x=sb.point_b_x, b_y=sb.point_b_y,
            c_x=sb.control_x, c_y=sb.control_y,
            halfwidth_pitch=sb.halfwidth_pitch,
            transition_pitch=sb.transition_pitch)

    def normalize_transition(self) -> float:
        return self.normalize_transition_pitch * self.geometry.pitch

    def to_dict(self) -> dict:
        doc = {"config_version": CONFIG_VERSION}
        doc.update(asdict(self))
        for key in ("point_a_x", "point_a_y", "point_b_x", "point_b_y",
                    "control_x", "control_y", "halfwidth_pitch"):
            doc["seed_bounds"][key] = list(doc["seed_bounds"][key])
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        version = doc.pop("config_version", None)
        if version != CONFIG_VERSION:
            raise ValueError(f"unsupported config version: {version}")
        geometry = GridGeometry(**doc.pop("geometry"))
        physics = PhysicsParams(**doc.pop("physics"))
        components = Components(**doc.pop("components"))
        train = TrainConfig(**doc.pop("train"))
        sb_doc = {k: tuple(v) if isinstance(v, list) else v
                  for k, v in doc.pop("seed_bounds").items()}
        seed_bounds = SeedBoundsSpec(**sb_doc)
        cfg = cls(geometry=geometry, physics=physics, components=components,
                  train=train, seed_bounds=seed_bounds, **doc)
        cfg.validate()
        return cfg


def save_config(cfg: RunConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
        fh.write("\n")


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return RunConfig.from_dict(json.load(fh))


def preset(name: str) -> RunConfig:
    """Built-in configurations: the two board studies plus a fast smoke
    setup for exercising the full loop."""
    if name == "example1":
        return RunConfig()
    if name == "example2":
        # quarter-size board, different component set, stricter floor
        return RunConfig(
            g_bar=-40.0,
            n_initial=400,
            components=Components(c1=500e-6, c2=100e-9, l1=100e-6),
            geometry=GridGeometry(pitch=1.32e-3),
        )
    if name == "smoke":
        return RunConfig(
            n_initial=10,
            n_generate=10,
            iterations=2,
            geometry=GridGeometry(design_nx=12, design_ny=8),
            train=TrainConfig(epochs=50),
        )
    raise ValueError(f"unknown preset: {name}")

"""Experiment configuration: a single validated, round-trippable tree.

Configs are stored as YAML; unknown keys are rejected.  The same models are
the request bodies of the HTTP service, so a config file, a CLI invocation
and an API call all describe experiments identically.
"""

from __future__ import annotations

from typing import List, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import scene as _scene
from .priors import get_prior
from .renderer import DEFAULT_BACKGROUND
from .smooth_core import SmoothingParams


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class _StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CameraConfig(_StrictModel):
    fov_deg: float = 60.0
    image_size: Tuple[int, int] = (64, 64)     # (height, width)
    eye: Tuple[float, float, float] = (0.0, 0.0, 3.0)
    at: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    up: Tuple[float, float, float] = (0.0, 1.0, 0.0)
    near: float = 0.5
    far: float = 10.0


class LightConfig(_StrictModel):
    enabled: bool = False
    direction: Tuple[float, float, float] = (0.3, 0.5, 1.0)
    ambient: float = 0.35
    diffuse: float = 0.65


class SmoothingConfig(_StrictModel):
    sigma: float = 0.1                # rasterization noise scale, NDC units
    gamma: float = 0.02               # aggregation noise scale, inverse depth
    alpha: float = 20.0               # log-barrier strength
    samples: int = 8                  # Monte-Carlo sample count M
    raster_prior: str = "gaussian"
    agg_prior: str = "gaussian"
    mode: str = "mc"                  # closed | mc | auto
    vr: bool = True                   # control-variate gradient estimators
    mc_cull: bool = True


class AdaptiveConfig(_StrictModel):
    enabled: bool = True
    beta_gamma: float = 0.9
    decay: float = 0.95
    floor: Tuple[float, float] = (1e-4, 1e-4)
    mode: str = "multiplicative"      # or "additive"


class OptimizerConfig(_StrictModel):
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    iterations: int = 200


class TaskConfig(_StrictModel):
    trials: int = 50
    magnitudes_deg: List[float] = Field(default_factory=lambda: [20.0])
    threshold_deg: float = 10.0
    true_rotation: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    true_translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    threshold_sweep: Optional[List[float]] = None


class RenderConfig(_StrictModel):
    # (sigma, gamma) pairs rendered by the render command; None derives a
    # default sweep from the smoothing config, always including (0, 0).
    sweep: Optional[List[Tuple[float, float]]] = None


class BenchConfig(_StrictModel):
    sample_counts: List[int] = Field(default_factory=lambda: [1, 2, 8, 32, 64])
    repeats: int = 5
    warmup: int = 2


class ExperimentConfig(_StrictModel):
    scene: str = "cube"               # builtin name or path to an OBJ file
    default_color: Tuple[float, float, float] = (0.7, 0.7, 0.7)
    background: Tuple[float, float, float] = DEFAULT_BACKGROUND
    camera: CameraConfig = Field(default_factory=CameraConfig)
    light: LightConfig = Field(default_factory=LightConfig)
    smoothing: SmoothingConfig = Field(default_factory=SmoothingConfig)
    adaptive: AdaptiveConfig = Field(default_factory=AdaptiveConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    task: TaskConfig = Field(default_factory=TaskConfig)
    render: RenderConfig = Field(default_factory=RenderConfig)
    bench: BenchConfig = Field(default_factory=BenchConfig)
    seed: int = 0
    threads: int = 1
    budget_mb: int = 2048
    out_dir: str = "out"

    @model_validator(mode="after")
    def _check(self):
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        get_prior(self.smoothing.raster_prior)
        get_prior(self.smoothing.agg_prior)
        if self.smoothing.mode not in ("closed", "mc", "auto"):
            raise ValueError("smoothing.mode must be closed, mc or auto")
        return self


# ---------------------------------------------------------------------------
# load / save
# ---------------------------------------------------------------------------


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    return config_from_dict(data)


def config_from_dict(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except Exception as exc:
        raise ConfigError(str(exc)) from exc


def save_config(config: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_dict(config), fh, sort_keys=False)


def config_to_dict(config: ExperimentConfig) -> dict:
    return yaml.safe_load(yaml.safe_dump(config.model_dump(mode="json")))


def apply_overrides(config: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    """Apply dotted-key overrides such as {"smoothing.sigma": 0.2}."""
    data = config.model_dump(mode="json")
    for key, value in overrides.items():
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config section {key!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = yaml.safe_load(str(value))
    return config_from_dict(data)


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def build_mesh(config: ExperimentConfig) -> _scene.Mesh:
    if config.scene == "cube":
        return _scene.unit_cube()
    return _scene.load_obj(config.scene, default_color=config.default_color)


def build_camera(config: ExperimentConfig) -> _scene.Camera:
    import numpy as np
    c = config.camera
    try:
        return _scene.Camera(fov=float(np.deg2rad(c.fov_deg)),
                             image_size=tuple(c.image_size), eye=tuple(c.eye),
                             at=tuple(c.at), up=tuple(c.up), near=c.near,
                             far=c.far)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_colors(config: ExperimentConfig, mesh: _scene.Mesh):
    if config.light.enabled:
        light = _scene.DirectionalLight(direction=tuple(config.light.direction),
                                        ambient=config.light.ambient,
                                        diffuse=config.light.diffuse)
        return _scene.shade(mesh, light)
    return mesh.face_colors


def build_smoothing(config: ExperimentConfig) -> SmoothingParams:
    s = config.smoothing
    try:
        return SmoothingParams(sigma=s.sigma, gamma=s.gamma, alpha=s.alpha,
                               samples=s.samples,
                               raster_prior=get_prior(s.raster_prior),
                               agg_prior=get_prior(s.agg_prior),
                               mode=s.mode, vr=s.vr, mc_cull=s.mc_cull)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_true_pose(config: ExperimentConfig) -> _scene.Pose:
    return _scene.Pose(rotation=config.task.true_rotation,
                       translation=config.task.true_translation)


def render_sweep(config: ExperimentConfig):
    """(sigma, gamma) pairs for the render command, always starting rigid."""
    if config.render.sweep is not None:
        return [tuple(p) for p in config.render.sweep]
    s, g = config.smoothing.sigma, config.smoothing.gamma
    return [(0.0, 0.0), (0.5 * s, 0.5 * g), (s, g), (2.0 * s, 2.0 * g)]

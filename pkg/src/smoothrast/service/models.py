"""Pydantic request/response models of the HTTP service.

The CLI uses the same models, so files written locally and payloads returned
over HTTP carry identical content.
"""

from __future__ import annotations

from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field

from ..config import ExperimentConfig


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RenderRequest(_Model):
    config: ExperimentConfig = Field(default_factory=ExperimentConfig)


class RenderEntry(_Model):
    label: str
    sigma: float
    gamma: float
    png_b64: str          # 8-bit PNG of the RGB image
    rgb_raw_b64: str      # float32 NPY dump of the RGB image
    sil_raw_b64: str      # float32 NPY dump of the silhouette


class RenderResponse(_Model):
    image_size: List[int]
    entries: List[RenderEntry]


class PoseOptRequest(_Model):
    config: ExperimentConfig = Field(default_factory=ExperimentConfig)


class TrialRow(_Model):
    seed: int
    init_err_deg: float
    final_err_deg: float
    iterations: int
    solved: bool


class ThresholdPoint(_Model):
    threshold_deg: float
    solved_fraction: float


class MagnitudeResult(_Model):
    magnitude_deg: float
    threshold_deg: float
    rows: List[TrialRow]
    mean_final_error_deg: float
    std_final_error_deg: float
    solved_pct: float
    failed_trials: int
    threshold_sweep: Optional[List[ThresholdPoint]] = None


class PoseOptResponse(_Model):
    results: List[MagnitudeResult]


class GradcheckRequest(_Model):
    config: ExperimentConfig = Field(default_factory=ExperimentConfig)
    fault: Optional[str] = None    # test hook: "sign_flip" corrupts one check


class CheckRow(_Model):
    name: str
    value: float
    tolerance: float
    passed: bool


class GradcheckResponse(_Model):
    checks: List[CheckRow]
    passed: bool


class BenchRequest(_Model):
    config: ExperimentConfig = Field(default_factory=ExperimentConfig)


class BenchRow(_Model):
    mode: str
    samples: int
    forward_ms: float
    forward_std_ms: float
    backward_ms: Optional[float]
    backward_std_ms: Optional[float]
    mem_mb: float


class BenchResponse(_Model):
    rows: List[BenchRow]
    csv: str


class HealthResponse(_Model):
    status: str
    version: str

"""FastAPI application exposing the renderer and experiment harness."""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..config import ConfigError, ExperimentConfig
from ..priors import PriorSupportError
from ..renderer import RenderBudgetError
from . import models, ops

app = FastAPI(title="smoothrast", version=__version__,
              description="Differentiable rendering via randomized smoothing: "
                          "rendering, pose fitting, gradient checks and "
                          "benchmarks as a service.")


def _run(fn, *args):
    try:
        return fn(*args)
    except (ConfigError, PriorSupportError) as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    except RenderBudgetError as exc:
        raise HTTPException(status_code=413, detail=str(exc))
    except FileNotFoundError as exc:
        raise HTTPException(status_code=404, detail=str(exc))


@app.get("/health", response_model=models.HealthResponse)
def health() -> models.HealthResponse:
    return models.HealthResponse(status="ok", version=__version__)


@app.get("/config/default", response_model=ExperimentConfig)
def default_config() -> ExperimentConfig:
    return ExperimentConfig()


@app.post("/render", response_model=models.RenderResponse)
def render(request: models.RenderRequest) -> models.RenderResponse:
    return _run(ops.render_op, request.config)


@app.post("/pose-opt", response_model=models.PoseOptResponse)
def pose_opt(request: models.PoseOptRequest) -> models.PoseOptResponse:
    return _run(ops.pose_opt_op, request.config)


@app.post("/gradcheck", response_model=models.GradcheckResponse)
def gradcheck(request: models.GradcheckRequest) -> models.GradcheckResponse:
    return _run(ops.gradcheck_op, request.config, request.fault)


@app.post("/bench", response_model=models.BenchResponse)
def bench(request: models.BenchRequest) -> models.BenchResponse:
    return _run(ops.bench_op, request.config)

"""Service operations: the compute behind both the HTTP endpoints and the CLI.

Each operation takes a validated ExperimentConfig and returns a response
model; callers decide whether to serialize it over HTTP or write files.
"""

from __future__ import annotations

import base64
import io
import math

import numpy as np
from PIL import Image

from ..bench import run_bench
from ..config import (ExperimentConfig, build_camera, build_colors, build_mesh,
                      build_smoothing, build_true_pose, render_sweep)
from ..gradcheck import run_gradcheck
from ..optim import PoseTask, run_pose_task
from ..renderer import render_scene
from . import models


def _png_b64(image: np.ndarray) -> str:
    arr = (np.clip(image, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _npy_b64(image: np.ndarray) -> str:
    buf = io.BytesIO()
    np.save(buf, np.asarray(image, dtype=np.float32))
    return base64.b64encode(buf.getvalue()).decode("ascii")


def render_op(config: ExperimentConfig) -> models.RenderResponse:
    """Hard render plus the configured (sigma, gamma) sweep of soft renders."""
    mesh = build_mesh(config)
    camera = build_camera(config)
    colors = build_colors(config, mesh)
    pose = build_true_pose(config)
    base = build_smoothing(config)
    budget = config.budget_mb << 20

    entries = []
    pairs = render_sweep(config)
    if (0.0, 0.0) not in pairs:
        pairs = [(0.0, 0.0)] + pairs
    for sigma, gamma in pairs:
        params = base.with_scales(sigma, gamma)
        render = render_scene(mesh, camera, pose, params, seed=config.seed,
                              colors=colors, background=config.background,
                              budget_bytes=budget)
        label = "hard" if sigma == 0.0 and gamma == 0.0 else \
            f"soft_s{sigma:g}_g{gamma:g}"
        entries.append(models.RenderEntry(
            label=label, sigma=sigma, gamma=gamma,
            png_b64=_png_b64(render.rgb),
            rgb_raw_b64=_npy_b64(render.rgb),
            sil_raw_b64=_npy_b64(render.silhouette)))
    return models.RenderResponse(image_size=list(camera.image_size),
                                 entries=entries)


def pose_opt_op(config: ExperimentConfig) -> models.PoseOptResponse:
    """Run the pose-fitting task for every configured perturbation magnitude."""
    mesh = build_mesh(config)
    camera = build_camera(config)
    colors = build_colors(config, mesh)
    params = build_smoothing(config)
    true_pose = build_true_pose(config)

    results = []
    for magnitude in config.task.magnitudes_deg:
        task = PoseTask(mesh=mesh, camera=camera, true_pose=true_pose,
                        colors=colors, params=params,
                        magnitude_deg=float(magnitude),
                        trials=config.task.trials,
                        iterations=config.optimizer.iterations,
                        lr=config.optimizer.lr, beta1=config.optimizer.beta1,
                        beta2=config.optimizer.beta2,
                        threshold_deg=config.task.threshold_deg,
                        adaptive=config.adaptive.enabled,
                        beta_gamma=config.adaptive.beta_gamma,
                        decay=config.adaptive.decay,
                        floor=tuple(config.adaptive.floor),
                        decay_mode=config.adaptive.mode,
                        background=tuple(config.background),
                        master_seed=config.seed, threads=config.threads,
                        budget_bytes=config.budget_mb << 20)
        res = run_pose_task(task)
        rows = [models.TrialRow(seed=t.seed, init_err_deg=t.init_error_deg,
                                final_err_deg=t.final_error_deg,
                                iterations=t.iterations, solved=t.solved)
                for t in res.trials]
        sweep = None
        if config.task.threshold_sweep:
            finals = np.array([t.final_error_deg for t in res.trials])
            ok = np.array([not t.failed for t in res.trials])
            sweep = [models.ThresholdPoint(
                threshold_deg=float(th),
                solved_fraction=float(((finals < th) & ok).mean()))
                for th in config.task.threshold_sweep]
        summary = res.summary()
        results.append(models.MagnitudeResult(
            magnitude_deg=res.magnitude_deg, threshold_deg=res.threshold_deg,
            rows=rows, mean_final_error_deg=summary["mean_final_error_deg"],
            std_final_error_deg=summary["std_final_error_deg"],
            solved_pct=summary["solved_pct"],
            failed_trials=summary["failed_trials"], threshold_sweep=sweep))
    return models.PoseOptResponse(results=results)


def gradcheck_op(config: ExperimentConfig,
                 fault: str | None = None) -> models.GradcheckResponse:
    checks = run_gradcheck(config, fault=fault)
    rows = [models.CheckRow(name=c.name, value=float(c.value),
                            tolerance=float(c.tolerance), passed=bool(c.passed))
            for c in checks]
    return models.GradcheckResponse(checks=rows,
                                    passed=all(c.passed for c in checks))


def bench_op(config: ExperimentConfig) -> models.BenchResponse:
    from ..bench import bench_csv
    rows = run_bench(config)
    out = []
    for r in rows:
        back = None if math.isnan(r.backward_ms) else r.backward_ms
        back_std = None if math.isnan(r.backward_std_ms) else r.backward_std_ms
        out.append(models.BenchRow(mode=r.mode, samples=r.samples,
                                   forward_ms=r.forward_ms,
                                   forward_std_ms=r.forward_std_ms,
                                   backward_ms=back, backward_std_ms=back_std,
                                   mem_mb=r.mem_mb))
    return models.BenchResponse(rows=out, csv=bench_csv(rows))

"""Forward/backward timing and working-set reporting for the renderer."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .config import (ExperimentConfig, build_camera, build_colors, build_mesh,
                     build_smoothing, build_true_pose)
from .renderer import backward, render_scene
from .smooth_core import SmoothingParams


@dataclass(frozen=True)
class BenchRow:
    mode: str
    samples: int
    forward_ms: float
    forward_std_ms: float
    backward_ms: float
    backward_std_ms: float
    mem_mb: float


def _estimate_mem_mb(params: SmoothingParams, n_pixels: int, n_faces: int) -> float:
    """Peak working-set estimate for one render, in megabytes.

    Counts the Monte-Carlo noise blocks (drawn in float32, with headroom for
    the comparison temporaries) plus the per-pixel forward maps; closed and
    hard modes only carry the forward maps.  Deterministic by construction so
    the M-scaling of the costs is visible without allocator noise.
    """
    k = n_faces + 1
    base = 8.0 * n_pixels * (3 * n_faces + 2 * k + 6)
    mc = 0.0
    if params.mode == "mc" and (params.sigma > 0 or params.gamma > 0):
        mc = 3.0 * 4.0 * params.samples * n_pixels * (n_faces + k)
    return (base + mc) / 1e6


def _time_call(fn, warmup: int, repeats: int):
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return float(np.mean(times)), float(np.std(times))


def run_bench(config: ExperimentConfig) -> list:
    """Benchmark hard, closed and Monte-Carlo renders across sample counts."""
    mesh = build_mesh(config)
    camera = build_camera(config)
    colors = build_colors(config, mesh)
    pose = build_true_pose(config)
    base = build_smoothing(config)
    h, w = camera.image_size
    n_pixels = h * w
    warmup, repeats = config.bench.warmup, config.bench.repeats
    budget = config.budget_mb << 20
    adjoint = np.zeros((h, w, 3))
    adjoint[:, :, 0] = 1.0

    rows = []

    def measure(label, params):
        def fwd():
            return render_scene(mesh, camera, pose, params, seed=config.seed,
                                colors=colors, background=config.background,
                                budget_bytes=budget)
        render = fwd()
        f_ms, f_std = _time_call(fwd, warmup, repeats)
        if params.sigma == 0 and params.gamma == 0:
            b_ms, b_std = float("nan"), float("nan")
        else:
            def bwd():
                return backward(render, mesh, camera, pose, adjoint)
            b_ms, b_std = _time_call(bwd, warmup, repeats)
        rows.append(BenchRow(mode=label, samples=params.samples,
                             forward_ms=f_ms, forward_std_ms=f_std,
                             backward_ms=b_ms, backward_std_ms=b_std,
                             mem_mb=_estimate_mem_mb(params, n_pixels,
                                                     mesh.num_faces)))

    for m in config.bench.sample_counts:
        p = SmoothingParams(sigma=base.sigma, gamma=base.gamma, alpha=base.alpha,
                            samples=m, raster_prior=base.raster_prior,
                            agg_prior=base.agg_prior, mode="mc", vr=base.vr,
                            mc_cull=base.mc_cull)
        measure("mc", p)
    from .priors import GUMBEL, LOGISTIC
    closed = SmoothingParams(sigma=base.sigma, gamma=base.gamma, alpha=base.alpha,
                             samples=1, raster_prior=LOGISTIC, agg_prior=GUMBEL,
                             mode="closed")
    measure("closed", closed)
    hard = SmoothingParams(sigma=0.0, gamma=0.0, alpha=base.alpha, samples=1,
                           raster_prior=base.raster_prior,
                           agg_prior=base.agg_prior)
    measure("hard", hard)
    return rows


def bench_csv(rows: list) -> str:
    lines = ["mode,samples,forward_ms,forward_std_ms,backward_ms,"
             "backward_std_ms,mem_mb"]
    for r in rows:
        lines.append(f"{r.mode},{r.samples},{r.forward_ms:.3f},"
                     f"{r.forward_std_ms:.3f},{r.backward_ms:.3f},"
                     f"{r.backward_std_ms:.3f},{r.mem_mb:.3f}")
    return "\n".join(lines) + "\n"

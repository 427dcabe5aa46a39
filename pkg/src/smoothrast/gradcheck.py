"""Self-check battery: closed-form oracles, finite differences, variance.

Each check compares an estimator against an independent reference and reports
(name, value, tolerance, pass).  The battery is deterministic under the
configured seed and is exposed through both the CLI and the HTTP service; a
nonzero number of failures maps to a nonzero exit code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig, build_camera, build_colors, build_mesh
from .losses import laplacian_loss, neg_iou, rgb_l1, rgb_l2
from .priors import CAUCHY, GAUSSIAN, GUMBEL, LOGISTIC, UNIFORM, NoiseStream
from .renderer import backward, render_scene
from .scene import Mesh, Pose
from .smooth_core import (SmoothingParams, jacobian_plain, jacobian_vr,
                          smooth_heaviside, smooth_simplex_argmax, softmax)


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    tolerance: float
    passed: bool

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} {self.name}: value={self.value:.6g} tol={self.tolerance:.6g}"


def _heaviside_solver(t):
    return (np.asarray(t) > 0).astype(np.float64).ravel()


def check_closed_form_priors(seed: int, samples: int = 100_000) -> list:
    """MC smoothed step vs its closed form on an x-grid, per prior."""
    grid = np.linspace(-2.0, 2.0, 41)
    out = []
    for prior in (LOGISTIC, CAUCHY, UNIFORM, GAUSSIAN):
        closed = np.asarray(prior.heaviside_cdf(grid))
        mc = np.array([
            smooth_heaviside(x, 1.0, prior, mode="mc", samples=samples,
                             stream=NoiseStream(seed, pixel=i, stage=3))
            for i, x in enumerate(grid)
        ])
        se = np.sqrt(closed * (1.0 - closed) / samples)
        ok = np.abs(mc - closed) <= np.maximum(3.0 * se, 1e-12)
        frac = float(ok.mean())
        out.append(CheckResult(f"heaviside_mc_vs_closed[{prior.name}]",
                               frac, 0.95, frac >= 0.95))
    # Gumbel simplex argmax vs softmax over a score sweep.
    hits = 0
    for i, t in enumerate(grid):
        scores = np.array([t, 0.0, -0.5])
        w_mc = smooth_simplex_argmax(scores, 1.0, GUMBEL, mode="mc",
                                     samples=samples,
                                     stream=NoiseStream(seed, pixel=i, stage=4))
        w_cl = softmax(scores)
        se = np.sqrt(w_cl * (1.0 - w_cl) / samples)
        if (np.abs(w_mc - w_cl) <= 3.0 * se + 1e-12).all():
            hits += 1
    frac = hits / len(grid)
    out.append(CheckResult("gumbel_argmax_mc_vs_softmax", frac, 0.95, frac >= 0.95))
    return out


def check_vr_jacobian(seed: int, samples: int = 1_000_000,
                      fault: str | None = None) -> CheckResult:
    """jacobian_vr on the step function at x=0, sigma=1 vs 1/sqrt(2 pi)."""
    est = jacobian_vr(_heaviside_solver, np.array([0.0]), 1.0, GAUSSIAN,
                      samples, NoiseStream(seed, stage=5))
    target = 1.0 / np.sqrt(2.0 * np.pi)
    value = float(est.jacobian.ravel()[0])
    if fault == "sign_flip":
        value = -value
    se = float(np.sqrt(est.variance.ravel()[0] / samples))
    return CheckResult("vr_jacobian_heaviside", abs(value - target), 4.0 * se,
                       abs(value - target) <= 4.0 * se)


def check_vr_variance(seed: int, samples: int = 20_000) -> list:
    """Paired-seed variance of VR vs plain estimators across sigmas.

    Evaluated at x = 0.5 where the control variate actually bites (at x = 0
    the step value is 0 and both estimators coincide term by term).
    """
    x = np.array([0.5])
    out = []
    ratios = []
    for sigma in (1.0, 0.3, 0.1):
        stream = NoiseStream(seed, face=int(sigma * 1000), stage=6)
        plain = jacobian_plain(_heaviside_solver, x, sigma, GAUSSIAN, samples, stream)
        vr = jacobian_vr(_heaviside_solver, x, sigma, GAUSSIAN, samples, stream)
        ratio = float(vr.variance.ravel()[0] / max(plain.variance.ravel()[0], 1e-300))
        ratios.append(ratio)
        out.append(CheckResult(f"vr_variance_ratio[sigma={sigma}]", ratio, 1.0,
                               ratio < 1.0))
    decreasing = ratios[0] > ratios[1] > ratios[2]
    out.append(CheckResult("vr_variance_ratio_decreasing", float(decreasing), 1.0,
                           decreasing))
    return out


def check_pose_gradient_fd(config: ExperimentConfig,
                           fault: str | None = None) -> CheckResult:
    """Closed-mode pose gradient vs central finite differences."""
    mesh = build_mesh(config)
    camera = build_camera(config)
    colors = build_colors(config, mesh)
    pose = Pose(rotation=(0.4, 0.3, 0.2))
    params = SmoothingParams(sigma=0.08, gamma=0.02, alpha=config.smoothing.alpha,
                             raster_prior=LOGISTIC, agg_prior=GUMBEL,
                             mode="closed")
    rng = np.random.default_rng(config.seed)
    adjoint = rng.standard_normal((camera.image_size[0], camera.image_size[1], 3))

    def loss_at(rotvec):
        p = Pose(rotation=rotvec, translation=pose.translation)
        r = render_scene(mesh, camera, p, params, seed=config.seed,
                         colors=colors, background=config.background)
        return float((r.rgb * adjoint).sum())

    render = render_scene(mesh, camera, pose, params, seed=config.seed,
                          colors=colors, background=config.background)
    report = backward(render, mesh, camera, pose, adjoint)
    grad = report.d_pose.copy()
    if fault == "sign_flip":
        grad = -grad
    # whole-image losses sum thousands of pixels, so a 1e-4 step can straddle
    # one of the measure-zero nearest-edge switches; 1e-5 stays clear
    step = 1e-5
    fd = np.zeros(3)
    for i in range(3):
        plus = np.array(pose.rotation)
        minus = plus.copy()
        plus[i] += step
        minus[i] -= step
        fd[i] = (loss_at(plus) - loss_at(minus)) / (2.0 * step)
    rel = float(np.max(np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-9)))
    return CheckResult("pose_gradient_fd", rel, 1e-3, rel < 1e-3)


def check_loss_adjoints(seed: int) -> list:
    """Finite-difference checks of every loss adjoint on random inputs."""
    rng = np.random.default_rng(seed)
    out = []
    target = rng.random((5, 5, 3))
    rendered = rng.random((5, 5, 3))
    step = 1e-6

    def fd_entry(fn, arr, idx):
        plus = arr.copy()
        minus = arr.copy()
        plus[idx] += step
        minus[idx] -= step
        return (fn(plus) - fn(minus)) / (2.0 * step)

    _, adj = rgb_l2(target, rendered)
    idx = (2, 3, 1)
    fd = fd_entry(lambda a: rgb_l2(target, a)[0], rendered, idx)
    rel = abs(adj[idx] - fd) / max(abs(fd), 1e-9)
    out.append(CheckResult("rgb_l2_adjoint_fd", rel, 1e-5, rel < 1e-5))

    _, adj = rgb_l1(target, rendered)
    fd = fd_entry(lambda a: rgb_l1(target, a)[0], rendered, idx)
    rel = abs(adj[idx] - fd) / max(abs(fd), 1e-9)
    out.append(CheckResult("rgb_l1_adjoint_fd", rel, 1e-5, rel < 1e-5))

    sil_t = rng.random((6, 6))
    sil_r = rng.random((6, 6))
    _, adj = neg_iou(sil_t, sil_r)
    fd = fd_entry(lambda a: neg_iou(sil_t, a)[0], sil_r, (4, 2))
    rel = abs(adj[4, 2] - fd) / max(abs(fd), 1e-9)
    out.append(CheckResult("neg_iou_adjoint_fd", rel, 1e-5, rel < 1e-5))

    verts = rng.random((6, 3))
    faces = np.array([[0, 1, 2], [1, 2, 3], [2, 3, 4], [3, 4, 5]])
    mesh = Mesh.create(verts, faces)
    moved = verts + 0.1 * rng.standard_normal(verts.shape)
    _, adj = laplacian_loss(mesh, moved)
    fd = fd_entry(lambda a: laplacian_loss(mesh, a)[0], moved, (3, 1))
    rel = abs(adj[3, 1] - fd) / max(abs(fd), 1e-9)
    out.append(CheckResult("laplacian_adjoint_fd", rel, 1e-5, rel < 1e-5))
    return out


def run_gradcheck(config: ExperimentConfig, fault: str | None = None) -> list:
    """Run the full battery; `fault` is a test hook that corrupts one check."""
    checks = []
    checks.extend(check_closed_form_priors(config.seed))
    checks.append(check_vr_jacobian(config.seed, fault=fault))
    checks.extend(check_vr_variance(config.seed))
    checks.append(check_pose_gradient_fd(config, fault=fault))
    checks.extend(check_loss_adjoints(config.seed))
    return checks

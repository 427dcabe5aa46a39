"""Pose optimization: Adam, adaptive smoothing, and the task runner.

A pose trial renders a target image at the true pose with the rigid renderer,
perturbs the pose by a given angle about a random axis, then descends the RGB
L2 loss through the soft renderer.  The smoothing controller tracks an
exponential moving average of the loss sensitivity to the aggregation noise
scale and decays both noise scales whenever it turns positive, which happens
near an optimum where blur stops helping.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.transform import Rotation

from .losses import rgb_l2
from .priors import derive_seed
from .renderer import (DEFAULT_BACKGROUND, DEFAULT_BUDGET_BYTES,
                       RenderBudgetError, backward, render_hard, render_scene)
from .scene import Camera, Mesh, Pose, project, rotation_matrix
from .smooth_core import SmoothingParams

SOLVED_THRESHOLD_DEG = 10.0


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdamState:
    """Bias-corrected Adam accumulator state."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, size: int, lr: float = 0.05, beta1: float = 0.9,
             beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(m=np.zeros(size), v=np.zeros(size), t=0, lr=lr,
                   beta1=beta1, beta2=beta2, eps=eps)


def adam_step(state: AdamState, params, grad):
    """One bias-corrected Adam update; returns (new_state, new_params)."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape:
        raise ValueError("parameter and gradient shapes differ")
    if not np.isfinite(grad).all():
        raise ValueError("non-finite gradient passed to adam_step")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, t=t), new_params


# ---------------------------------------------------------------------------
# adaptive smoothing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SmoothingController:
    """EMA of dL/dgamma; positive EMA triggers decay of both noise scales."""

    v_gamma: float = 0.0
    beta_gamma: float = 0.9
    decay: float = 0.95
    floor: tuple = (1e-4, 1e-4)
    mode: str = "multiplicative"     # or "additive"
    additive_step: float = 1e-3

    def __post_init__(self):
        if not (0.0 <= self.beta_gamma < 1.0):
            raise ValueError("beta_gamma must lie in [0, 1)")
        if not (0.0 < self.decay < 1.0):
            raise ValueError("decay rate must lie in (0, 1)")
        if self.mode not in ("multiplicative", "additive"):
            raise ValueError("controller mode must be multiplicative or additive")


def smoothing_update(ctrl: SmoothingController, dL_dgamma: float,
                     params: SmoothingParams):
    """Update the sensitivity EMA and decay (sigma, gamma) if it is positive.

    The scales never increase and never fall below the configured floor.
    """
    v = ctrl.beta_gamma * ctrl.v_gamma + (1.0 - ctrl.beta_gamma) * float(dL_dgamma)
    new_ctrl = replace(ctrl, v_gamma=v)
    if v <= 0.0:
        return new_ctrl, params
    fs, fg = ctrl.floor
    if ctrl.mode == "multiplicative":
        sigma = max(params.sigma * ctrl.decay, fs)
        gamma = max(params.gamma * ctrl.decay, fg)
    else:
        sigma = max(params.sigma - ctrl.additive_step, fs)
        gamma = max(params.gamma - ctrl.additive_step, fg)
    return new_ctrl, params.with_scales(sigma, gamma)


# ---------------------------------------------------------------------------
# pose utilities
# ---------------------------------------------------------------------------


def random_pose_perturbation(theta_true: Pose, magnitude_deg: float,
                             rng: np.random.Generator) -> Pose:
    """Compose the true rotation with a rotation of the given magnitude
    about a uniformly random axis; translation is kept."""
    axis = rng.standard_normal(3)
    norm = np.linalg.norm(axis)
    while norm < 1e-12:
        axis = rng.standard_normal(3)
        norm = np.linalg.norm(axis)
    axis /= norm
    delta = Pose(rotation=axis * np.deg2rad(magnitude_deg))
    r_new = rotation_matrix(delta) @ rotation_matrix(theta_true)
    rotvec = Rotation.from_matrix(r_new).as_rotvec()
    return Pose(rotation=rotvec, translation=theta_true.translation)


def angular_error(a: Pose, b: Pose) -> float:
    """Geodesic angle in degrees between two poses' rotations."""
    r = rotation_matrix(a).T @ rotation_matrix(b)
    cos = (np.trace(r) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


# ---------------------------------------------------------------------------
# pose-fitting task
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PoseTask:
    """Everything one pose-fitting experiment needs."""

    mesh: Mesh
    camera: Camera
    true_pose: Pose
    colors: np.ndarray
    params: SmoothingParams
    magnitude_deg: float = 20.0
    trials: int = 50
    iterations: int = 200
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    threshold_deg: float = SOLVED_THRESHOLD_DEG
    adaptive: bool = True
    beta_gamma: float = 0.9
    decay: float = 0.95
    floor: tuple = (1e-4, 1e-4)
    decay_mode: str = "multiplicative"
    background: tuple = DEFAULT_BACKGROUND
    master_seed: int = 0
    threads: int = 1
    budget_bytes: int = DEFAULT_BUDGET_BYTES


@dataclass(frozen=True)
class TrialRecord:
    seed: int
    init_error_deg: float
    final_error_deg: float
    iterations: int
    solved: bool
    failed: bool
    losses: np.ndarray
    sigmas: np.ndarray
    gammas: np.ndarray


@dataclass(frozen=True)
class TaskResult:
    """Per-trial records and aggregate statistics of one run."""

    magnitude_deg: float
    threshold_deg: float
    trials: tuple
    mean_final_error: float
    std_final_error: float
    solved_fraction: float

    def recount_solved(self) -> float:
        """Recompute the solved fraction from stored per-trial errors."""
        flags = [(not t.failed) and t.final_error_deg < self.threshold_deg
                 for t in self.trials]
        return float(np.mean(flags)) if flags else 0.0

    def csv_rows(self):
        yield "seed,init_err_deg,final_err_deg,iterations,solved"
        for t in self.trials:
            yield (f"{t.seed},{t.init_error_deg:.6f},{t.final_error_deg:.6f},"
                   f"{t.iterations},{int(t.solved)}")

    def summary(self) -> dict:
        return {
            "magnitude_deg": self.magnitude_deg,
            "threshold_deg": self.threshold_deg,
            "trials": len(self.trials),
            "mean_final_error_deg": self.mean_final_error,
            "std_final_error_deg": self.std_final_error,
            "solved_pct": 100.0 * self.solved_fraction,
            "failed_trials": int(sum(t.failed for t in self.trials)),
        }


def render_target(task: PoseTask) -> np.ndarray:
    projected = project(task.mesh, task.camera, task.true_pose)
    rgb, _ = render_hard(projected, task.colors, task.camera.image_size,
                         task.background)
    return rgb


def _run_trial(task: PoseTask, target_rgb: np.ndarray, index: int) -> TrialRecord:
    trial_seed = derive_seed(task.master_seed, index)
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence((trial_seed, 0))))
    pose = random_pose_perturbation(task.true_pose, task.magnitude_deg, rng)
    init_error = angular_error(pose, task.true_pose)

    adam = AdamState.init(3, lr=task.lr, beta1=task.beta1, beta2=task.beta2)
    params = task.params
    ctrl = SmoothingController(beta_gamma=task.beta_gamma, decay=task.decay,
                               floor=task.floor, mode=task.decay_mode)
    losses = []
    sigmas = []
    gammas = []
    failed = False
    it = 0
    for it in range(task.iterations):
        seed_it = derive_seed(trial_seed, 1, it)
        try:
            render = render_scene(task.mesh, task.camera, pose, params,
                                  seed_it, colors=task.colors,
                                  background=task.background,
                                  budget_bytes=task.budget_bytes)
            loss, adjoint = rgb_l2(target_rgb, render.rgb)
            report = backward(render, task.mesh, task.camera, pose, adjoint)
            adam, theta = adam_step(adam, pose.rotation, report.d_pose)
            pose = Pose(rotation=theta, translation=pose.translation)
            if task.adaptive:
                ctrl, params = smoothing_update(ctrl, report.d_gamma, params)
        except (ValueError, RenderBudgetError, FloatingPointError):
            failed = True
            break
        losses.append(loss)
        sigmas.append(params.sigma)
        gammas.append(params.gamma)

    final_error = angular_error(pose, task.true_pose)
    solved = (not failed) and final_error < task.threshold_deg
    return TrialRecord(seed=trial_seed, init_error_deg=init_error,
                       final_error_deg=final_error, iterations=it + 1,
                       solved=solved, failed=failed,
                       losses=np.asarray(losses), sigmas=np.asarray(sigmas),
                       gammas=np.asarray(gammas))


def run_pose_task(task: PoseTask) -> TaskResult:
    """Run all trials of a pose-fitting experiment.

    Trials are independent, each seeded from (master_seed, trial index), so
    results are identical for any thread count; with threads > 1 they run in
    parallel worker processes.
    """
    target_rgb = render_target(task)
    if task.threads > 1 and task.trials > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=task.threads) as ex:
            futures = [ex.submit(_run_trial, task, target_rgb, i)
                       for i in range(task.trials)]
            records = [f.result() for f in futures]
    else:
        records = [_run_trial(task, target_rgb, i) for i in range(task.trials)]

    finals = np.array([r.final_error_deg for r in records])
    solved = np.array([r.solved for r in records])
    return TaskResult(magnitude_deg=task.magnitude_deg,
                      threshold_deg=task.threshold_deg,
                      trials=tuple(records),
                      mean_final_error=float(finals.mean()),
                      std_final_error=float(finals.std()),
                      solved_fraction=float(solved.mean()))

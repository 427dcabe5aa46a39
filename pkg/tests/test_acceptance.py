"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest -s tests/test_acceptance.py` to see the per-criterion lines.
The pose-fitting criteria are the heavy ones (tens of minutes total on one
core); everything is deterministic under the seeds fixed here.
"""

import numpy as np

from smoothrast.bench import run_bench
from smoothrast.config import ExperimentConfig
from smoothrast.gradcheck import (check_closed_form_priors,
                                  check_loss_adjoints, check_pose_gradient_fd,
                                  check_vr_jacobian, check_vr_variance)
from smoothrast.optim import PoseTask, run_pose_task
from smoothrast.priors import GAUSSIAN, GUMBEL, LOGISTIC
from smoothrast.renderer import render_hard, render_soft
from smoothrast.scene import Camera, Pose, project, unit_cube
from smoothrast.smooth_core import SmoothingParams

CUBE = unit_cube()
CAM = Camera(image_size=(64, 64), eye=(0, 0, 3))
TRUE_POSE = Pose(rotation=(0.3, -0.2, 0.4))
SEED = 2024

_pose_cache = {}


def _report(num, name, passed, detail=""):
    flag = "PASS" if passed else "FAIL"
    print(f"ACCEPTANCE {num}: {flag} {name} {detail}".rstrip())
    assert passed, f"criterion {num} failed: {name} {detail}"


def _pose_run(tag, **kw):
    """Run (and cache) one pose experiment within the pytest session."""
    if tag in _pose_cache:
        return _pose_cache[tag]
    defaults = dict(mesh=CUBE, camera=CAM, true_pose=TRUE_POSE,
                    colors=CUBE.face_colors, magnitude_deg=20.0, trials=50,
                    iterations=200, lr=0.05, adaptive=True, master_seed=SEED)
    defaults.update(kw)
    res = run_pose_task(PoseTask(**defaults))
    _pose_cache[tag] = res
    return res


class TestCriterion1ClosedFormEquivalences:
    def test_mc_matches_closed_forms(self):
        checks = check_closed_form_priors(SEED, samples=100_000)
        ok = all(c.passed for c in checks)
        detail = ", ".join(f"{c.name}={c.value:.3f}" for c in checks)
        _report(1, "closed-form prior equivalences (3 SE on 41-point grid)",
                ok, detail)


class TestCriterion2GradientCorrectness:
    def test_vr_jacobian_value(self):
        check = check_vr_jacobian(SEED, samples=1_000_000)
        _report(2, "VR Jacobian at step function hits 1/sqrt(2 pi)",
                check.passed, f"|err|={check.value:.2e} tol={check.tolerance:.2e}")

    def test_closed_mode_pose_gradient_fd(self):
        config = ExperimentConfig()
        check = check_pose_gradient_fd(config)
        _report(2, "closed-mode pose gradient vs finite differences",
                check.passed, f"rel_err={check.value:.2e}")


class TestCriterion3VarianceReduction:
    def test_paired_variance_ratios(self):
        checks = check_vr_variance(SEED, samples=20_000)
        ok = all(c.passed for c in checks)
        ratios = [f"{c.value:.3f}" for c in checks if "ratio[" in c.name]
        _report(3, "VR variance ratio < 1 and decreasing with sigma", ok,
                "ratios=" + "/".join(ratios))


class TestCriterion4RigidLimit:
    def test_soft_zero_smoothing_bit_identical(self):
        projected = project(CUBE, CAM, TRUE_POSE)
        params = SmoothingParams(sigma=0.0, gamma=0.0)
        soft = render_soft(projected, CUBE.face_colors, CAM.image_size, params,
                           seed=SEED)
        rgb, sil = render_hard(projected, CUBE.face_colors, CAM.image_size)
        ok = (soft.rgb == rgb).all() and (soft.silhouette == sil).all()
        _report(4, "sigma=gamma=0 render equals hard render bit for bit", ok)


class TestCriterion5PoseReproduction:
    def test_gaussian_smoothing_solve_rate(self):
        gauss = _pose_run("c5_gauss", params=SmoothingParams(
            sigma=0.1, gamma=0.02, alpha=20.0, samples=8, mode="mc", vr=True))
        ok = gauss.solved_fraction >= 0.75
        _report(5, "20 deg / 50 trials / Gaussian+VR+adaptive solve rate",
                ok, f"solved={gauss.solved_fraction:.2f} (>= 0.75)")

    def test_gaussian_not_worse_than_closed_sigmoid_softmax(self):
        gauss = _pose_run("c5_gauss", params=SmoothingParams(
            sigma=0.1, gamma=0.02, alpha=20.0, samples=8, mode="mc", vr=True))
        closed = _pose_run("c5_closed", params=SmoothingParams(
            sigma=0.1, gamma=0.02, alpha=20.0, raster_prior=LOGISTIC,
            agg_prior=GUMBEL, mode="closed"))
        ok = gauss.solved_fraction >= closed.solved_fraction
        _report(5, "Gaussian >= closed-form sigmoid/softmax config "
                   "(paired seeds)", ok,
                f"{gauss.solved_fraction:.2f} vs {closed.solved_fraction:.2f}")


class TestCriterion6VrSampleEfficiency:
    def test_vr_beats_plain_at_two_samples(self):
        common = dict(trials=16, iterations=400, lr=0.04, adaptive=False)
        vr = _pose_run("c6_vr", params=SmoothingParams(
            sigma=0.1, gamma=0.02, alpha=20.0, samples=2, mode="mc", vr=True),
            **common)
        plain = _pose_run("c6_plain", params=SmoothingParams(
            sigma=0.1, gamma=0.02, alpha=20.0, samples=2, mode="mc", vr=False),
            **common)
        ok = vr.solved_fraction > plain.solved_fraction
        _report(6, "M=2 paired seeds: VR solves strictly more than plain",
                ok, f"{vr.solved_fraction:.2f} vs {plain.solved_fraction:.2f}")


class TestCriterion7AdaptiveSmoothing:
    def test_adaptive_not_worse_and_trajectories_monotone(self):
        common = dict(magnitude_deg=80.0, trials=30, params=SmoothingParams(
            sigma=0.1, gamma=0.02, alpha=20.0, samples=8, mode="mc", vr=True))
        with_as = _pose_run("c7_as", adaptive=True, **common)
        without = _pose_run("c7_no_as", adaptive=False, **common)
        ok_rate = with_as.solved_fraction >= without.solved_fraction
        monotone = all((np.diff(t.sigmas) <= 1e-15).all()
                       and (np.diff(t.gammas) <= 1e-15).all()
                       for t in with_as.trials)
        _report(7, "80 deg: adaptive >= fixed smoothing, trajectories "
                   "nonincreasing", ok_rate and monotone,
                f"{with_as.solved_fraction:.2f} vs {without.solved_fraction:.2f}")


class TestCriterion8PropertySuites:
    def test_weight_simplex_invariant(self):
        rng = np.random.default_rng(SEED)
        from smoothrast.renderer import render_soft as rs
        from smoothrast.scene import ProjectedScene
        ok = True
        for trial in range(1000):
            tris = rng.uniform(-1, 1, (3, 3, 2))
            z = rng.uniform(0.2, 0.9, 3)
            proj = ProjectedScene(verts2d=tris, z_inv=z, z_min=0.1,
                                  visible=np.ones(3, bool),
                                  centroid_depth=1.0 / z)
            mode = "mc" if trial % 2 else "closed"
            prior = GAUSSIAN if trial % 2 else GUMBEL
            params = SmoothingParams(sigma=0.08, gamma=0.03, alpha=10.0,
                                     samples=8, agg_prior=prior, mode=mode)
            r = rs(proj, rng.uniform(0, 1, (3, 3)), (6, 6), params, seed=trial)
            w = r.weights.reshape(-1, 4)
            ok &= bool((w >= 0).all())
            ok &= bool(np.allclose(w.sum(axis=1), 1.0, atol=1e-6))
            ok &= bool(np.allclose(r.silhouette.ravel(), 1 - w[:, -1]))
        _report(8, "per-pixel weights form a simplex; silhouette consistent "
                   "(1000 random scenes)", ok)

    def test_signed_distance_properties(self):
        from smoothrast.scene import signed_distance_grid
        rng = np.random.default_rng(SEED + 1)
        tris = rng.uniform(-1, 1, (40, 3, 2))
        p = rng.uniform(-1.5, 1.5, (300, 2))
        q = p + rng.uniform(-0.2, 0.2, (300, 2))
        dp, _ = signed_distance_grid(p, tris)
        dq, _ = signed_distance_grid(q, tris)
        step = np.linalg.norm(p - q, axis=1)[:, None]
        ok = bool((np.abs(dp - dq) <= step + 1e-9).all())
        _report(8, "signed distance is 1-Lipschitz in the pixel", ok)

    def test_loss_adjoints(self):
        checks = check_loss_adjoints(SEED)
        _report(8, "loss adjoints match finite differences",
                all(c.passed for c in checks))

    def test_determinism_across_thread_counts(self):
        task = dict(mesh=CUBE, camera=Camera(image_size=(24, 24), eye=(0, 0, 3)),
                    true_pose=TRUE_POSE, colors=CUBE.face_colors,
                    params=SmoothingParams(sigma=0.1, gamma=0.02, samples=4,
                                           mode="mc"),
                    magnitude_deg=10.0, trials=3, iterations=10, lr=0.05,
                    adaptive=True, master_seed=SEED)
        one = run_pose_task(PoseTask(**task, threads=1))
        two = run_pose_task(PoseTask(**task, threads=2))
        ok = all(a.final_error_deg == b.final_error_deg
                 and np.array_equal(a.losses, b.losses)
                 for a, b in zip(one.trials, two.trials))
        _report(8, "fixed-seed results identical across thread counts", ok)


class TestCriterion9BenchShape:
    def test_memory_monotone_and_backward_bounded(self):
        config = ExperimentConfig.model_validate({
            "camera": {"image_size": [64, 64]},
            "bench": {"sample_counts": [1, 2, 8, 32, 64], "repeats": 3,
                      "warmup": 1},
            "budget_mb": 4096,
        })
        rows = run_bench(config)
        mc = [r for r in rows if r.mode == "mc"]
        mems = [r.mem_mb for r in mc]
        mono = all(b >= a for a, b in zip(mems, mems[1:]))
        small = [r for r in mc if r.samples <= 8]
        bounded = all(r.backward_ms <= 2.0 * r.forward_ms for r in small)
        _report(9, "memory nondecreasing in M; backward <= 2x forward at "
                   "M <= 8", mono and bounded,
                f"mem={['%.0f' % m for m in mems]}")

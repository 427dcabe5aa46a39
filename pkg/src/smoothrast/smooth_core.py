"""Perturbed-optimizer engine.

The two non-smooth steps of rasterization-based rendering are argmax maps: a
step function (pixel occupancy) and a winner-take-all over inverse depths
(Z-buffer aggregation, with a logarithmic barrier enforcing that empty faces
cannot win).  Both are smoothed by taking expectations under additive noise.
This module provides the hard maps, their smoothed versions with closed-form
and Monte-Carlo evaluation, and score-function Jacobian estimators with a
zero-mean control variate for variance reduction, plus the matching estimator
of the derivative with respect to the smoothing scale.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .priors import GUMBEL, NoisePrior, NoiseStream, PriorSupportError

#: Floor applied to occupancy before the logarithmic barrier; keeps scores
#: finite while driving the weight of empty faces to zero.
OCCUPANCY_FLOOR = 1e-7


@dataclass(frozen=True)
class SmoothingParams:
    """Smoothing configuration for one render.

    sigma is the rasterization noise scale in NDC units, gamma the
    aggregation noise scale in inverse-depth units, alpha the barrier
    strength, samples the Monte-Carlo sample count M.  mode selects closed
    (analytic expectation) or mc evaluation; "auto" picks closed whenever the
    priors admit it.  vr toggles the control-variate (variance-reduced)
    gradient estimators in the backward pass; mc_cull skips Monte-Carlo work
    for pixel/face pairs deeper than 6 sigma outside a triangle.
    """

    sigma: float = 0.1
    gamma: float = 0.02
    alpha: float = 20.0
    samples: int = 8
    raster_prior: NoisePrior = None
    agg_prior: NoisePrior = None
    mode: str = "auto"
    vr: bool = True
    mc_cull: bool = True

    def __post_init__(self):
        from .priors import GAUSSIAN
        if self.raster_prior is None:
            object.__setattr__(self, "raster_prior", GAUSSIAN)
        if self.agg_prior is None:
            object.__setattr__(self, "agg_prior", GAUSSIAN)
        if self.sigma < 0 or self.gamma < 0:
            raise ValueError("noise scales sigma and gamma must be >= 0")
        if self.alpha <= 0:
            raise ValueError("barrier strength alpha must be > 0")
        if self.samples < 1:
            raise ValueError("sample count must be >= 1")
        if self.mode not in ("auto", "closed", "mc"):
            raise ValueError("mode must be one of 'auto', 'closed', 'mc'")

    def with_scales(self, sigma: float, gamma: float) -> "SmoothingParams":
        return replace(self, sigma=sigma, gamma=gamma)


@dataclass(frozen=True)
class PerturbedEstimate:
    """Monte-Carlo estimate of a perturbed optimizer.

    value is the MC mean of the perturbed solutions; jacobian the gradient
    estimate (for sensitivity estimators, the derivative w.r.t. the smoothing
    scale); variance the per-entry sample variance of the per-draw terms,
    from which standard errors follow as sqrt(variance / M).
    """

    value: np.ndarray
    jacobian: np.ndarray
    variance: np.ndarray


# ---------------------------------------------------------------------------
# hard optimizers
# ---------------------------------------------------------------------------


def hard_heaviside(x):
    """Step function: 0 for x <= 0, 1 otherwise."""
    return np.where(np.asarray(x) > 0, 1.0, 0.0)


def hard_simplex_argmax(scores) -> np.ndarray:
    """One-hot vertex of the simplex maximizing <scores, y>.

    Ties break toward the smallest index.  With the background conventionally
    stored in the last slot, the background loses any tie against a face.
    -inf sentinel scores are allowed; an all--inf row is an error.
    """
    s = np.asarray(scores, dtype=np.float64)
    if not np.isfinite(s).any(axis=-1).all():
        raise ValueError("all scores are -inf; nothing can win the argmax")
    idx = np.argmax(s, axis=-1)
    out = np.zeros_like(s)
    np.put_along_axis(out, np.expand_dims(idx, -1), 1.0, axis=-1)
    return out


def barrier_scores(z, occupancy, alpha: float) -> np.ndarray:
    """Aggregation scores: inverse depth plus log-barrier on occupancy.

    Args:
        z: (m+1,) inverse depths, background (fixed z_min) in the last slot.
        occupancy: (..., m) occupancy values in [0, 1].
        alpha: barrier strength.

    Returns:
        (..., m+1) scores.  The background slot carries no barrier term.
    """
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    z = np.asarray(z, dtype=np.float64)
    occ = np.asarray(occupancy, dtype=np.float64)
    scores = np.broadcast_to(z, occ.shape[:-1] + z.shape).copy()
    scores[..., :-1] += np.log(np.maximum(occ, OCCUPANCY_FLOOR)) / alpha
    return scores


# ---------------------------------------------------------------------------
# smoothed optimizers
# ---------------------------------------------------------------------------


def smooth_heaviside(x, sigma: float, prior: NoisePrior, mode: str = "closed",
                     samples: int = 8, stream: NoiseStream | None = None):
    """Expectation of the step function under noise: E[H(x + sigma Z)].

    closed mode evaluates the exact convolution through the prior's CDF; mc
    mode averages hard steps over `samples` draws.  sigma = 0 recovers the
    hard step exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0.0:
        return hard_heaviside(x)
    if mode == "closed":
        return prior.heaviside_cdf(x / sigma)
    if mode != "mc":
        raise ValueError("mode must be 'closed' or 'mc'")
    if stream is None:
        raise ValueError("mc mode requires a NoiseStream")
    draws = prior.sample_block(stream, (samples,) + x.shape)
    return (x[None, ...] + sigma * draws > 0).mean(axis=0)


def smooth_simplex_argmax(scores, gamma: float, prior: NoisePrior,
                          mode: str = "closed", samples: int = 8,
                          stream: NoiseStream | None = None) -> np.ndarray:
    """Expected simplex argmax under per-coordinate i.i.d. noise.

    closed mode is available for the Gumbel prior only, where the expectation
    is exactly softmax(scores / gamma).  gamma = 0 recovers the hard argmax.
    """
    s = np.asarray(scores, dtype=np.float64)
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if gamma == 0.0:
        return hard_simplex_argmax(s)
    if mode == "closed":
        if prior is not GUMBEL and getattr(prior, "name", "") != "gumbel":
            raise PriorSupportError(
                "closed-form simplex argmax exists only for the gumbel prior")
        return softmax(s / gamma)
    if mode != "mc":
        raise ValueError("mode must be 'closed' or 'mc'")
    if stream is None:
        raise ValueError("mc mode requires a NoiseStream")
    draws = prior.sample_block(stream, (samples,) + s.shape)
    idx = np.argmax(s[None, ...] + gamma * draws, axis=-1)
    out = np.zeros_like(s)
    flat = out.reshape(-1, s.shape[-1])
    rows = np.tile(np.arange(flat.shape[0]), samples)
    np.add.at(flat, (rows, idx.reshape(samples, -1).ravel()), 1.0)
    return out / samples


def softmax(u) -> np.ndarray:
    """Row-stable softmax along the last axis; -inf entries get weight 0."""
    u = np.asarray(u, dtype=np.float64)
    m = np.max(u, axis=-1, keepdims=True)
    if not np.isfinite(m).all():
        raise ValueError("softmax needs at least one finite score per row")
    e = np.exp(u - m)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# Monte-Carlo Jacobian and sensitivity estimators
# ---------------------------------------------------------------------------


def _solve_batch(hard_solver, thetas: np.ndarray) -> np.ndarray:
    y = np.asarray(hard_solver(thetas), dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    return y


def _check_estimator_args(eps, prior):
    if eps <= 0:
        raise ValueError("estimators require eps > 0 (eps = 0 is the hard map)")
    if not prior.has_nu_grad:
        raise PriorSupportError(
            f"{prior.name} prior does not support potential-gradient estimators")


def jacobian_plain(hard_solver, theta, eps: float, prior: NoisePrior,
                   samples: int, stream: NoiseStream) -> PerturbedEstimate:
    """Score-function Jacobian estimate of the perturbed optimizer.

    Averages y*(theta + eps Z) nu'(Z)^T / eps over `samples` draws.  The
    solver must map a (M, n) batch of parameter vectors to (M,) or (M, k)
    solutions.
    """
    _check_estimator_args(eps, prior)
    theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    z = prior.sample_block(stream, (samples, theta.size))
    y = _solve_batch(hard_solver, theta[None, :] + eps * z)
    g = prior.nu_grad(z) / eps
    terms = y[:, :, None] * g[:, None, :]
    return PerturbedEstimate(value=y.mean(axis=0),
                             jacobian=terms.mean(axis=0),
                             variance=terms.var(axis=0, ddof=1))


def jacobian_vr(hard_solver, theta, eps: float, prior: NoisePrior,
                samples: int, stream: NoiseStream) -> PerturbedEstimate:
    """Variance-reduced Jacobian estimate.

    Identical in expectation to :func:`jacobian_plain` for symmetric priors
    (the subtracted y*(theta) nu'(Z)^T term has zero mean) but with variance
    that shrinks as fewer perturbed solves cross a decision boundary; samples
    whose perturbed argmax equals the unperturbed one contribute exactly 0.
    """
    _check_estimator_args(eps, prior)
    theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    z = prior.sample_block(stream, (samples, theta.size))
    y = _solve_batch(hard_solver, theta[None, :] + eps * z)
    y0 = _solve_batch(hard_solver, theta[None, :])
    g = prior.nu_grad(z) / eps
    terms = (y - y0)[:, :, None] * g[:, None, :]
    return PerturbedEstimate(value=y.mean(axis=0),
                             jacobian=terms.mean(axis=0),
                             variance=terms.var(axis=0, ddof=1))


def sensitivity_vr(hard_solver, theta, eps: float, prior: NoisePrior,
                   samples: int, stream: NoiseStream) -> PerturbedEstimate:
    """Variance-reduced estimate of d y_eps / d eps.

    The per-draw weight is (nu'(Z) . Z - n) / eps with n the noise dimension;
    n replaces the scalar-case constant 1 so the control variate keeps zero
    mean in any dimension (E[nu'(Z) . Z] = n by parts).  The `jacobian` field
    of the result holds the (k,) sensitivity vector.
    """
    _check_estimator_args(eps, prior)
    theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    n = theta.size
    z = prior.sample_block(stream, (samples, n))
    y = _solve_batch(hard_solver, theta[None, :] + eps * z)
    y0 = _solve_batch(hard_solver, theta[None, :])
    w = ((prior.nu_grad(z) * z).sum(axis=1) - n) / eps
    terms = (y - y0) * w[:, None]
    return PerturbedEstimate(value=y.mean(axis=0),
                             jacobian=terms.mean(axis=0),
                             variance=terms.var(axis=0, ddof=1))

"""Noise priors for randomized smoothing.

Each prior is a standard (location 0, scale 1) univariate distribution with
density mu(z) proportional to exp(-nu(z)).  Smoothing estimators need three
things from a prior: reproducible sampling, the potential gradient nu'(z)
(the score of the log-density, used by the Monte-Carlo Jacobian estimators),
and the CDF for closed-form smoothing paths.  Uniform and Gumbel do not admit
the smooth exponential form required by the score-function estimators and are
only available through their closed-form consequences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, ndtr

# Stage tags for the renderer's deterministic noise streams.
RASTER_STAGE = 1
AGG_STAGE = 2

_OPEN_UNIT_EPS = 2.0 ** -53


class PriorSupportError(ValueError):
    """Requested operation is not defined for this noise prior."""


def derive_seed(*parts: int) -> int:
    """Deterministically mix integer parts into a single 64-bit seed."""
    return int(np.random.SeedSequence(tuple(int(p) for p in parts)).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class NoiseStream:
    """Counter-style deterministic random stream.

    A draw is fully determined by (seed, sample, pixel, face, stage); distinct
    ids give independent streams.  The renderer regenerates identical noise in
    its backward pass from the same ids instead of storing the forward draws.
    """

    seed: int
    sample: int = 0
    pixel: int = 0
    face: int = 0
    stage: int = 0

    def __post_init__(self):
        if self.seed < 0:
            raise ValueError("stream seed must be a nonnegative integer")

    def generator(self) -> np.random.Generator:
        key = (self.seed, self.sample, self.pixel, self.face, self.stage)
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))

    def replace(self, **kwargs) -> "NoiseStream":
        fields = dict(seed=self.seed, sample=self.sample, pixel=self.pixel,
                      face=self.face, stage=self.stage)
        fields.update(kwargs)
        return NoiseStream(**fields)


class NoisePrior:
    """Base class; concrete priors fill in sampling, CDF and score."""

    name: str = "base"
    symmetric: bool = False
    has_nu_grad: bool = False

    # -- sampling ----------------------------------------------------------

    def sample_block(self, stream: NoiseStream, shape, dtype=np.float64) -> np.ndarray:
        """Draw an array of standard variates from a deterministic stream.

        Within one stream the draw at a given array position is reproducible
        as long as the requested shape is unchanged, which is what the
        forward/backward noise-reuse contract requires.
        """
        gen = stream.generator()
        u = gen.random(size=shape, dtype=dtype)
        np.clip(u, _OPEN_UNIT_EPS, 1.0 - _OPEN_UNIT_EPS, out=u)
        return self._from_uniform(u)

    def _from_uniform(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # -- density -----------------------------------------------------------

    def cdf(self, x):
        raise NotImplementedError

    def pdf(self, x):
        raise NotImplementedError

    def nu_grad(self, z):
        """Gradient of the potential nu, i.e. -d/dz log mu(z)."""
        raise PriorSupportError(
            f"{self.name} prior does not admit the score-function estimator "
            "(density is not of the smooth exp(-nu) form)"
        )

    # -- smoothed step function -------------------------------------------

    def heaviside_cdf(self, u):
        """E[H(u + Z)] = P(Z > -u); equals cdf(u) for symmetric priors."""
        if self.symmetric:
            return self.cdf(u)
        x = np.asarray(u, dtype=np.float64)
        return 1.0 - self.cdf(-x)

    def heaviside_pdf(self, u):
        """Derivative of heaviside_cdf; equals pdf(u) for symmetric priors."""
        if self.symmetric:
            return self.pdf(u)
        x = np.asarray(u, dtype=np.float64)
        return self.pdf(-x)


class GaussianPrior(NoisePrior):
    name = "gaussian"
    symmetric = True
    has_nu_grad = True

    def sample_block(self, stream, shape, dtype=np.float64):
        # Direct normal generation is markedly faster than inverse-CDF.
        return stream.generator().standard_normal(size=shape, dtype=dtype)

    def cdf(self, x):
        return ndtr(x)

    def pdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)

    def nu_grad(self, z):
        return np.asarray(z)


class CauchyPrior(NoisePrior):
    name = "cauchy"
    symmetric = True
    has_nu_grad = True

    def _from_uniform(self, u):
        return np.tan(np.pi * (u - 0.5))

    def cdf(self, x):
        return 0.5 + np.arctan(x) / np.pi

    def pdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        return 1.0 / (np.pi * (1.0 + x * x))

    def nu_grad(self, z):
        z = np.asarray(z)
        return 2.0 * z / (1.0 + z * z)


class LogisticPrior(NoisePrior):
    name = "logistic"
    symmetric = True
    has_nu_grad = True

    def _from_uniform(self, u):
        return np.log(u) - np.log1p(-u)

    def cdf(self, x):
        return expit(x)

    def pdf(self, x):
        p = expit(np.asarray(x, dtype=np.float64))
        return p * (1.0 - p)

    def nu_grad(self, z):
        return np.tanh(np.asarray(z) / 2.0)


class UniformPrior(NoisePrior):
    """Uniform on (-1/2, 1/2); closed form only (affine step smoothing)."""

    name = "uniform"
    symmetric = True
    has_nu_grad = False

    def _from_uniform(self, u):
        return u - 0.5

    def cdf(self, x):
        return np.clip(np.asarray(x, dtype=np.float64) + 0.5, 0.0, 1.0)

    def pdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.where((x > -0.5) & (x < 0.5), 1.0, 0.0)


class GumbelPrior(NoisePrior):
    """Gumbel(0,1); closed form only (softmax aggregation via Gumbel-max)."""

    name = "gumbel"
    symmetric = False
    has_nu_grad = False

    def _from_uniform(self, u):
        return -np.log(-np.log(u))

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        with np.errstate(over="ignore"):
            return np.exp(-np.exp(-x))

    def pdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        with np.errstate(over="ignore", invalid="ignore"):
            out = np.exp(-x - np.exp(-x))
        return np.where(np.isfinite(x), out, 0.0)

    def heaviside_cdf(self, u):
        # P(Z > -u) = 1 - exp(-exp(u)), written for tail stability.
        u = np.asarray(u, dtype=np.float64)
        with np.errstate(over="ignore"):
            return -np.expm1(-np.exp(u))


GAUSSIAN = GaussianPrior()
CAUCHY = CauchyPrior()
LOGISTIC = LogisticPrior()
UNIFORM = UniformPrior()
GUMBEL = GumbelPrior()

PRIORS: dict[str, NoisePrior] = {
    p.name: p for p in (GAUSSIAN, CAUCHY, LOGISTIC, UNIFORM, GUMBEL)
}


def get_prior(name: str) -> NoisePrior:
    try:
        return PRIORS[name.lower()]
    except KeyError:
        raise PriorSupportError(
            f"unknown noise prior {name!r}; choose from {sorted(PRIORS)}"
        ) from None


def sample(prior: NoisePrior, stream: NoiseStream) -> float:
    """One standard draw, reproducible under the stream's (seed, id)."""
    return float(prior.sample_block(stream, shape=()))

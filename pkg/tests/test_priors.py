"""Tests for the noise priors: sampling, CDFs, potential gradients."""

import numpy as np
import pytest
from scipy.stats import kstest

from smoothrast.priors import (CAUCHY, GAUSSIAN, GUMBEL, LOGISTIC, PRIORS,
                               UNIFORM, NoiseStream, PriorSupportError,
                               get_prior, sample)

ALL_PRIORS = [GAUSSIAN, CAUCHY, LOGISTIC, UNIFORM, GUMBEL]


class TestSampling:
    def test_same_stream_id_is_deterministic(self):
        s = NoiseStream(seed=123, sample=4, pixel=17, face=2, stage=1)
        assert sample(GAUSSIAN, s) == sample(GAUSSIAN, s)

    def test_distinct_ids_give_distinct_draws(self):
        base = NoiseStream(seed=123)
        draws = {sample(GAUSSIAN, base.replace(sample=i, pixel=j, face=k))
                 for i in range(3) for j in range(3) for k in range(3)}
        assert len(draws) == 27

    def test_negative_seed_rejected(self):
        with pytest.raises(ValueError):
            NoiseStream(seed=-1)

    def test_gaussian_law_of_large_numbers(self):
        z = GAUSSIAN.sample_block(NoiseStream(7), (1_000_000,))
        assert abs(z.mean()) < 4e-3
        assert abs(z.var() - 1.0) < 0.01

    def test_uniform_support(self):
        z = UNIFORM.sample_block(NoiseStream(8), (100_000,))
        assert z.min() > -0.5
        assert z.max() < 0.5

    @pytest.mark.parametrize("prior", ALL_PRIORS, ids=lambda p: p.name)
    def test_empirical_cdf_matches_cdf(self, prior):
        z = prior.sample_block(NoiseStream(11), (100_000,))
        stat = kstest(z, prior.cdf).statistic
        assert stat < 0.01

    def test_block_reproducible(self):
        s = NoiseStream(5, stage=2)
        a = CAUCHY.sample_block(s, (64, 3))
        b = CAUCHY.sample_block(s, (64, 3))
        np.testing.assert_array_equal(a, b)


class TestCdf:
    def test_cauchy_at_one(self):
        assert CAUCHY.cdf(1.0) == pytest.approx(0.75, abs=1e-12)

    @pytest.mark.parametrize("prior", [GAUSSIAN, CAUCHY, LOGISTIC, UNIFORM],
                             ids=lambda p: p.name)
    def test_symmetric_priors_half_at_zero(self, prior):
        assert float(prior.cdf(0.0)) == pytest.approx(0.5, abs=1e-12)

    def test_uniform_affine(self):
        assert float(UNIFORM.cdf(0.25)) == pytest.approx(0.75, abs=1e-12)
        assert float(UNIFORM.cdf(-0.7)) == 0.0
        assert float(UNIFORM.cdf(0.7)) == 1.0

    def test_gumbel_closed_form(self):
        x = 0.3
        assert float(GUMBEL.cdf(x)) == pytest.approx(np.exp(-np.exp(-x)), rel=1e-12)

    @pytest.mark.parametrize("prior", ALL_PRIORS, ids=lambda p: p.name)
    def test_monotone_and_limits(self, prior):
        x = np.linspace(-30.0, 30.0, 2001)
        c = np.asarray(prior.cdf(x), dtype=np.float64)
        assert (np.diff(c) >= -1e-15).all()
        assert float(prior.cdf(-np.inf)) == pytest.approx(0.0, abs=1e-300)
        assert float(prior.cdf(np.inf)) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("prior", ALL_PRIORS, ids=lambda p: p.name)
    def test_pdf_matches_cdf_derivative(self, prior):
        x = np.linspace(-3.0, 3.0, 41)
        h = 1e-6
        fd = (np.asarray(prior.cdf(x + h)) - np.asarray(prior.cdf(x - h))) / (2 * h)
        np.testing.assert_allclose(prior.pdf(x), fd, atol=1e-8)


class TestNuGrad:
    def test_gaussian_identity(self):
        assert float(GAUSSIAN.nu_grad(1.5)) == 1.5

    def test_cauchy_value(self):
        assert float(CAUCHY.nu_grad(1.0)) == pytest.approx(1.0, abs=1e-12)

    def test_cauchy_heavy_tail_limit(self):
        assert abs(float(CAUCHY.nu_grad(1e8))) < 1e-7

    def test_logistic_tanh(self):
        z = 0.8
        assert float(LOGISTIC.nu_grad(z)) == pytest.approx(np.tanh(z / 2), rel=1e-12)

    @pytest.mark.parametrize("prior", [UNIFORM, GUMBEL], ids=lambda p: p.name)
    def test_unsupported_priors_raise(self, prior):
        with pytest.raises(PriorSupportError):
            prior.nu_grad(0.3)

    @pytest.mark.parametrize("prior", [GAUSSIAN, CAUCHY], ids=lambda p: p.name)
    def test_zero_mean_score(self, prior):
        # the control-variate term must have zero expectation
        z = prior.sample_block(NoiseStream(13, stage=9), (1_000_000,))
        g = prior.nu_grad(z)
        se = g.std() / np.sqrt(g.size)
        assert abs(g.mean()) < 4 * se


class TestRegistry:
    def test_lookup_by_name(self):
        assert get_prior("Gaussian") is GAUSSIAN
        assert get_prior("gumbel") is GUMBEL

    def test_unknown_name(self):
        with pytest.raises(PriorSupportError):
            get_prior("laplace")

    def test_all_registered(self):
        assert set(PRIORS) == {"gaussian", "cauchy", "logistic", "uniform",
                               "gumbel"}

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from homotopy_sv.experiment_cli import generate_market_path
from homotopy_sv.model_core import LinearGaussianModel, SteinSteinModel, SteinSteinParams, likelihood_logdensity
from homotopy_sv.numeric_utils import DegenerateWeightsError, RandomStream, effective_sample_size
from homotopy_sv.particle_filter import (
    FilterConfig,
    ParticleCloud,
    full_observations,
    maybe_resample,
    pf_filter,
    pf_init,
    pf_price,
    pf_step,
    reweigh,
)
from homotopy_sv.pricing_stats import discounted_call_payoff, weighted_price

from oracles import FixedNoise, gauss_logpdf, kalman_filter


def cloud_at(x, y=4.6, logw=None):
    x = np.asarray(x, dtype=float)
    n = x.size
    lw = np.full(n, -math.log(n)) if logw is None else np.asarray(logw, float)
    return ParticleCloud(x, np.full(n, y), lw)


class TestConfig:
    @pytest.mark.parametrize("bad", [dict(n_particles=1), dict(ess_threshold=1.5),
                                     dict(resample_scheme="multinomial"), dict(final_weights="mid")])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            FilterConfig(**bad)

    def test_cloud_needs_two_particles(self):
        with pytest.raises(ValueError):
            ParticleCloud(np.zeros(1), np.zeros(1), np.zeros(1))


class TestInit:
    def test_uniform_log_weights(self, bench):
        c = pf_init(SteinSteinModel(bench), 4)
        np.testing.assert_array_equal(c.logw, [math.log(0.25)] * 4)

    def test_initial_log_price(self, bench):
        c = pf_init(SteinSteinModel(bench), 3)
        np.testing.assert_allclose(c.y, 4.60517, atol=1e-5)
        np.testing.assert_array_equal(c.x, 0.25)

    def test_seeded_clouds_identical(self):
        m = LinearGaussianModel()
        a = pf_init(m, 50, RandomStream(5).generator())
        b = pf_init(m, 50, RandomStream(5).generator())
        np.testing.assert_array_equal(a.x, b.x)


class TestWeighting:
    def test_bootstrap_increment_is_likelihood(self, bench, rng):
        cloud = cloud_at(rng.normal(0.25, 0.05, 100), logw=np.log(rng.dirichlet(np.ones(100))))
        out, inc = reweigh(cloud, SteinSteinModel(bench), 4.6, 4.612)
        np.testing.assert_allclose(inc, likelihood_logdensity(bench, cloud.x, 4.6, 4.612), rtol=0, atol=1e-12)
        # new log-weights differ from old + increment by one normalising constant
        shift = out.logw - (cloud.logw + inc)
        np.testing.assert_allclose(shift - shift[0], 0.0, atol=1e-12)
        assert abs(out.weights().sum() - 1.0) < 1e-10

    def test_equal_states_equal_increments(self, bench):
        _, inc = reweigh(cloud_at([0.2, 0.2, 0.3]), SteinSteinModel(bench), 4.6, 4.61)
        assert inc[0] == inc[1]

    def test_two_point_posterior_ratio(self, bench):
        cloud = cloud_at([0.2, 0.3])
        out = pf_step(cloud, 4.6, 4.615, SteinSteinModel(bench), FilterConfig(2, 0.0), FixedNoise())
        w = out.weights()
        dt = bench.dt
        l0 = gauss_logpdf(4.615, 4.6 + (bench.mu - 0.02) * dt, 0.04 * dt)
        l1 = gauss_logpdf(4.615, 4.6 + (bench.mu - 0.045) * dt, 0.09 * dt)
        assert w[0] / w[1] == pytest.approx(math.exp(l0 - l1), rel=1e-12)

    def test_all_zero_vol_is_degenerate(self, bench):
        with pytest.raises(DegenerateWeightsError):
            reweigh(cloud_at([0.0, 0.0, 0.0]), SteinSteinModel(bench), 4.6, 4.61)

    def test_threshold_zero_accumulates(self, bench, rng):
        model = SteinSteinModel(bench)
        cfg = FilterConfig(200, ess_threshold=0.0)
        cloud = cloud_at(rng.normal(0.25, 0.05, 200))
        noise = FixedNoise()
        c1 = pf_step(cloud, 4.6, 4.62, model, cfg, noise)
        c2 = pf_step(c1, 4.62, 4.58, model, cfg, noise)
        assert not c1.resampled and not c2.resampled
        total = (likelihood_logdensity(bench, cloud.x, 4.6, 4.62)
                 + likelihood_logdensity(bench, c1.x, 4.62, 4.58))
        expected = np.exp(total - total.max())
        np.testing.assert_allclose(c2.weights(), expected / expected.sum(), rtol=1e-10, atol=1e-300)


class TestResampling:
    def test_post_resample_ess_is_n(self, rng):
        n = 1000
        cloud = cloud_at(rng.standard_normal(n), logw=np.log(rng.dirichlet(np.ones(n) * 0.1)))
        assert cloud.ess() < n
        out, idx = maybe_resample(cloud, 1.0, rng)
        assert out.resampled and idx.shape == (n,)
        assert out.ess() == pytest.approx(n, rel=1e-12)

    def test_no_resample_above_threshold(self, rng):
        cloud = cloud_at(rng.standard_normal(10))
        out, idx = maybe_resample(cloud, 0.5, rng)
        assert idx is None and not out.resampled

    def test_forced_every_step(self, bench, rng):
        cfg = FilterConfig(100, ess_threshold=1.0)
        cloud = cloud_at(rng.normal(0.25, 0.05, 100))
        out = pf_step(cloud, 4.6, 4.62, SteinSteinModel(bench), cfg, rng)
        np.testing.assert_allclose(out.weights(), 0.01, rtol=1e-14)

    def test_weighted_mean_preserved_over_u_grid(self, bench, rng):
        n = 64
        y = np.log(rng.uniform(70, 130, n))
        w = rng.dirichlet(np.ones(n))
        cloud = ParticleCloud(np.full(n, 0.25), y, np.log(w))
        target = weighted_price(bench, y, w)
        n_grid = 1000
        acc = 0.0
        for u in (np.arange(n_grid) + 0.5) / n_grid:
            out, _ = maybe_resample(cloud, 1.0, FixedNoise(uniform=u))
            acc += weighted_price(bench, out.y)
        assert acc / n_grid == pytest.approx(target, rel=1e-3)


class TestFilter:
    def test_exchangeability(self, bench, rng):
        n = 300
        x = rng.normal(0.25, 0.05, n)
        eps, eta = rng.standard_normal(n), rng.standard_normal(n)
        perm = rng.permutation(n)
        cfg = FilterConfig(n, 0.0)
        model = SteinSteinModel(bench)
        a = pf_step(cloud_at(x), 4.6, 4.61, model, cfg, FixedNoise([eps, eta]))
        b = pf_step(cloud_at(x[perm]), 4.6, 4.61, model, cfg, FixedNoise([eps[perm], eta[perm]]))
        pa = weighted_price(bench, a.y, a.weights())
        pb = weighted_price(bench, b.y, b.weights())
        assert pb == pytest.approx(pa, rel=1e-13)

    def test_noise_free_degenerate_price(self):
        p = SteinSteinParams(sigma=1e-300)
        y_path = np.log(100.0) + np.cumsum(np.full(p.n_steps, 1e-3))
        price = pf_price(p, FilterConfig(50), y_path, FixedNoise())
        exact = math.exp(-p.r * p.maturity) * max(100 * math.exp((p.mu - p.v0 ** 2 / 2) * p.maturity) - p.strike, 0)
        assert price == pytest.approx(exact, rel=1e-12)

    def test_zero_strike_forward_parity(self):
        p = SteinSteinParams(strike=1e-12)
        _, y_path = generate_market_path(p, RandomStream(3, 0))
        price, res = pf_price(p, FilterConfig(20_000), y_path[1:], RandomStream(3, 2), return_result=True)
        w = res.cloud.weights()
        payoff = discounted_call_payoff(p, res.cloud.y)
        var = np.dot(w, (payoff - price) ** 2)
        se = math.sqrt(var / effective_sample_size(w))
        assert abs(price - p.s0) < 3 * se

    def test_weights_normalised_every_step(self, bench):
        _, y_path = generate_market_path(bench, RandomStream(11, 0))
        model = SteinSteinModel(bench)
        obs = full_observations(bench, y_path[1:])
        cloud = pf_init(model, 500)
        rng = RandomStream(11, 1).generator()
        for t in range(1, bench.n_steps + 1):
            cloud = pf_step(cloud, obs[t - 1], obs[t], model, FilterConfig(500), rng)
            assert abs(cloud.weights().sum() - 1.0) < 1e-10
            assert 1.0 <= cloud.ess() <= 500 * (1 + 1e-12)

    def test_pre_final_weights_skip_last_resample(self, bench):
        _, y_path = generate_market_path(bench, RandomStream(2, 0))
        obs = full_observations(bench, y_path[1:])
        res = pf_filter(SteinSteinModel(bench), FilterConfig(300, 1.0, final_weights="pre"), obs,
                        RandomStream(2, 1))
        assert not res.cloud.resampled
        assert res.cloud.ess() < 300

    def test_observation_length_checked(self, bench):
        with pytest.raises(ValueError):
            full_observations(bench, np.zeros(3))

    def test_linear_gaussian_matches_kalman(self):
        # Averaged over independent filters so the tolerance uses the
        # empirical Monte Carlo error, which resampling inflates well above
        # posterior_std / sqrt(n).
        model = LinearGaussianModel(a=0.9, q=0.5, c=1.0, r=1.0, x0_mean=0.0, x0_var=1.0)
        _, y = model.simulate(10, RandomStream(21, 0).generator())
        means, variances = kalman_filter(y, 0.9, 0.5, 1.0, 1.0, 0.0, 1.0)
        n, reps = 10_000, 40
        runs = np.array([pf_filter(model, FilterConfig(n, 0.5), y, RandomStream(21, 100 + k)).vol_means
                         for k in range(reps)])
        se = runs.std(axis=0, ddof=1) / math.sqrt(reps)
        np.testing.assert_array_less(np.abs(runs.mean(axis=0) - means), 3 * se)
        # a single filter still lands within a few posterior std / sqrt(ESS)
        single = pf_filter(model, FilterConfig(n, 0.5), y, RandomStream(21, 1))
        assert np.all(single.ess_history >= 1.0)
        np.testing.assert_array_less(np.abs(single.vol_means - means),
                                     6 * np.sqrt(variances / single.ess_history))

    @given(st.integers(0, 2 ** 31))
    def test_deterministic_given_stream(self, seed):
        p = SteinSteinParams(n_steps=4)
        y = np.log(100) + np.array([0.01, -0.02, 0.0, 0.015])
        a = pf_price(p, FilterConfig(30), y, RandomStream(seed, 1))
        b = pf_price(p, FilterConfig(30), y, RandomStream(seed, 1))
        assert a == b

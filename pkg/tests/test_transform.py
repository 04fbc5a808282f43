import math

import numpy as np
import pytest
from scipy import integrate

from jsqa.errors import RegimeMismatchError
from jsqa.limits import critical_unused_limit, exponential, gaussian, truncated_gaussian
from jsqa.model import BernoulliScaled, Binomial, RngStream, SystemConfig
from jsqa.oracle import build_chain, oracle_mgf, stationary
from jsqa.regimes import RegimeSpec, ScaledSampleSet
from jsqa.simulator import SampleSet, SamplingPlan
from jsqa.transform import (
    classic_residual,
    classic_residual_values,
    critical_ode_residual,
    critical_residual_values,
    empirical_mgf,
    ks_statistic,
    ks_two_sample,
    mgf_from_values,
    moment_report,
    overloaded_ode_residual,
    overloaded_residual_values,
    ssc_estimate,
    unused_service_rate,
)

PLAN = SamplingPlan(warmup_slots=10, num_samples=10, thinning=1, replicas=1)


def make_samples(q, u=None, d=None, gamma=0.1, batches=4, config=None):
    q = np.atleast_2d(np.asarray(q, dtype=np.int64).T).T if np.ndim(q) == 1 else np.asarray(q, dtype=np.int64)
    n = q.shape[1]
    if config is None:
        config = SystemConfig(
            n=n, gamma=gamma, arrivals=Binomial(2, 0.3), services=(Binomial(2, 0.3),) * n
        )
    size = q.shape[0]
    u = np.zeros(size, dtype=np.int64) if u is None else np.asarray(u, dtype=np.int64)
    d = np.zeros(size, dtype=np.int64) if d is None else np.asarray(d, dtype=np.int64)
    batch = (np.arange(size) * batches // size).astype(np.int64)
    return SampleSet(q=q, u_total=u, d_total=d, batch=batch, config=config, plan=PLAN, seed=0)


class TestEmpiricalMgf:
    def test_degenerate_samples_give_one(self):
        est = mgf_from_values(np.zeros(10), np.zeros(10, dtype=int), 1.0, [-1.0, 0.7])
        assert np.allclose(est.values, 1.0)

    def test_two_point_example(self):
        x = np.array([1.0, -1.0] * 50)
        est = mgf_from_values(x, np.zeros(100, dtype=int), 1.0, [1.0])
        assert est.values[0] == pytest.approx((math.e + math.exp(-1)) / 2, rel=1e-12)
        assert est.derivatives[0] == pytest.approx((math.e - math.exp(-1)) / 2, rel=1e-12)

    def test_value_at_zero_exact(self):
        x = RngStream(0).generator().exponential(3.0, 1000)
        est = mgf_from_values(x, np.arange(1000) % 8, 0.25, [-1.0, 0.0, 1.0])
        assert est.values[1] == 1.0

    def test_matches_exact_stationary_mgf(self):
        # iid draws from the exact stationary law vs the exact transform
        config = SystemConfig(
            n=1, gamma=0.1, arrivals=BernoulliScaled(1, 0.3), services=(BernoulliScaled(1, 0.4),)
        )
        chain = build_chain(config, 100)
        pi = stationary(chain)
        gen = RngStream(5).generator()
        draws = gen.choice(chain.cap + 1, size=200_000, p=pi)
        est = mgf_from_values(draws.astype(float), np.arange(draws.size) % 32, 0.1, [-0.5])
        exact = oracle_mgf(chain, pi, 0.1, -0.5)
        assert abs(est.values[0] - exact) < 4 * est.stderr[0]

    def test_analytic_derivative_matches_finite_difference(self):
        x = RngStream(2).generator().gamma(2.0, 1.0, 5000)
        h = 1e-4
        for phi in (-0.8, -0.1, 0.3):
            est = mgf_from_values(x, np.arange(5000) % 8, 0.5, [phi - h, phi, phi + h])
            fd = (est.values[2] - est.values[0]) / (2 * h)
            assert abs(est.derivatives[1] - fd) < 1e-6

    def test_overflow_guard_flags_point(self):
        x = np.full(100, 5000.0)
        est = mgf_from_values(x, np.zeros(100, dtype=int), 1.0, [0.5])
        assert not est.usable[0]
        assert np.isnan(est.values[0])

    def test_grid_domain_enforced(self):
        with pytest.raises(ValueError, match=r"\[-2, 2\]"):
            mgf_from_values(np.ones(4), np.zeros(4, dtype=int), 0.1, [3.0])

    def test_statistic_extraction(self):
        samples = make_samples(np.array([[1, 3], [2, 0], [4, 4], [0, 1]]), gamma=0.25)
        grid = [0.5]
        total = empirical_mgf(samples, 0.25, grid, "total")
        expect = np.exp(0.5 * 0.5 * samples.totals()).mean()
        assert total.values[0] == pytest.approx(expect, rel=1e-12)
        pooled = empirical_mgf(samples, 0.25, grid, "per-queue")
        expect = np.exp(0.5 * 0.5 * samples.q.reshape(-1)).mean()
        assert pooled.values[0] == pytest.approx(expect, rel=1e-12)
        with pytest.raises(ValueError):
            empirical_mgf(samples, 0.25, grid, "median")


class TestSsc:
    def test_collapsed_samples_have_zero_perp(self):
        samples = make_samples(np.tile([[3, 3, 3]], (40, 1)))
        est = ssc_estimate(samples)
        assert est.perp_second_moment == pytest.approx(0.0, abs=1e-12)

    def test_hand_projection(self):
        samples = make_samples(np.array([[1, 0]]), batches=1)
        est = ssc_estimate(samples)
        assert est.perp_second_moment == pytest.approx(0.5)

    def test_pythagoras_identity(self):
        samples = make_samples(np.array([[3, 1, 2]]), batches=1)
        est = ssc_estimate(samples)
        assert est.perp_second_moment == pytest.approx(14 - 36 / 3)

    def test_bounded_by_total(self):
        gen = RngStream(3).generator()
        samples = make_samples(gen.integers(0, 20, size=(500, 3)))
        est = ssc_estimate(samples)
        assert 0.0 <= est.perp_second_moment <= est.total_second_moment

    def test_single_queue_rejected(self):
        with pytest.raises(ValueError):
            ssc_estimate(make_samples(np.array([[1], [2]])))


class TestUnusedRate:
    def test_zeros(self):
        est = unused_service_rate(make_samples(np.ones((20, 1), dtype=int)), 0.04)
        assert est.raw == 0.0 and est.critical_scaled == 0.0

    def test_scaling(self):
        samples = make_samples(np.ones((20, 1), dtype=int), u=np.tile([0, 1], 10))
        est = unused_service_rate(samples, 0.04)
        assert est.raw == pytest.approx(0.5)
        assert est.critical_scaled == pytest.approx(0.5 / 0.2)


TWO_BINOMIAL = (Binomial(2, 0.25), Binomial(2, 0.25))


class TestResidualFixedPoints:
    def test_classic_limit_is_exact_root(self):
        sigma2, c_f = 1.5, 0.5
        dist = exponential(sigma2 / (2 * c_f))
        grid = np.linspace(-1, 0.6, 20)
        m = np.array([dist.mgf(p) for p in grid])
        res = classic_residual_values(m, grid, -c_f, sigma2)
        assert np.abs(res).max() < 1e-12

    @pytest.mark.parametrize("c_c,sigma2", [(0.0, 2.0), (0.5, 1.5), (-0.7, 1.2)])
    def test_critical_limit_solves_ode(self, c_c, sigma2):
        dist = truncated_gaussian(c_c, sigma2 / 2)
        u_lim = critical_unused_limit(c_c, sigma2)
        grid = np.linspace(-1, 0, 9)
        m = np.array([dist.mgf(p) for p in grid])
        # derivative by quadrature against the truncated density, independent
        # of the erf closed form being tested
        md = np.array(
            [
                integrate.quad(
                    lambda x: x * math.exp(p * x) * dist.pdf(x), 0, 80, epsrel=1e-11, limit=400
                )[0]
                for p in grid
            ]
        )
        res = critical_residual_values(m, md, grid, c_c, sigma2, u_lim)
        assert np.abs(res).max() < 1e-8

    def test_overloaded_limit_solves_ode(self):
        bar_sigma2 = 1.79
        dist = gaussian(bar_sigma2 / 2)
        grid = np.linspace(-0.5, 0.5, 11)
        m = np.array([dist.mgf(p) for p in grid])
        md = grid * (bar_sigma2 / 2) * m
        res = overloaded_residual_values(m, md, grid, bar_sigma2)
        assert np.abs(res).max() < 1e-12


class TestResidualOps:
    def test_classic_zero_at_phi_zero(self):
        spec = RegimeSpec("classic", 0.5, 0.25, TWO_BINOMIAL, 4)
        config = SystemConfig(n=2, gamma=1e-3, arrivals=Binomial(4, 0.25), services=TWO_BINOMIAL)
        gen = RngStream(1).generator()
        samples = make_samples(gen.integers(0, 30, size=(400, 2)), gamma=1e-3, config=config)
        mgf = empirical_mgf(samples, 1e-3, [-0.5, 0.0, 0.5], "total", exponent=0.25)
        points = classic_residual(mgf, config, spec)
        assert points[1].residual == pytest.approx(0.0, abs=1e-12)

    def test_critical_phi_zero_is_drift_identity(self):
        gamma = 0.04
        config = SystemConfig(
            n=1, gamma=gamma, arrivals=BernoulliScaled(1, 0.3), services=(BernoulliScaled(1, 0.4),)
        )
        gen = RngStream(2).generator()
        q = gen.integers(0, 12, size=(600, 1))
        u = gen.integers(0, 2, size=600)
        samples = make_samples(q, u=u, gamma=gamma, config=config)
        mgf = empirical_mgf(samples, gamma, [-0.5, 0.0], "total")
        points = critical_ode_residual(mgf, config)
        expect = (gamma * q.sum(1).mean() - config.drift - u.mean()) / math.sqrt(gamma)
        assert points[1].residual == pytest.approx(expect, rel=1e-10)

    def test_regime_mismatch_errors(self):
        spec = RegimeSpec("critical", 0.0, 0.5, TWO_BINOMIAL, 4)
        config = SystemConfig(n=2, gamma=0.01, arrivals=Binomial(4, 0.25), services=TWO_BINOMIAL)
        samples = make_samples(np.ones((40, 2), dtype=int), gamma=0.01, config=config)
        mgf = empirical_mgf(samples, 0.01, [0.0], "total")
        with pytest.raises(RegimeMismatchError):
            classic_residual(mgf, config, spec)
        centered = empirical_mgf(samples, 0.01, [0.0], "centered-total")
        with pytest.raises(RegimeMismatchError):
            critical_ode_residual(centered, config)
        with pytest.raises(RegimeMismatchError):
            overloaded_ode_residual(mgf, config)


class TestKs:
    def test_single_sample_at_origin(self):
        assert ks_statistic([0.0], exponential(1.0)) == pytest.approx(1.0)

    def test_exact_quantiles_nearly_perfect(self):
        n = 999
        dist = exponential(0.8)
        quantiles = [-0.8 * math.log(1 - k / (n + 1)) for k in range(1, n + 1)]
        assert ks_statistic(quantiles, dist) <= 2 / (n + 1)

    def test_true_samples_within_critical_value(self):
        n = 100_000
        gen = RngStream(4).generator()
        draws = gen.exponential(0.8, n)
        assert ks_statistic(draws, exponential(0.8)) < 1.95 / math.sqrt(n)

    def test_within_unit_interval(self):
        gen = RngStream(5).generator()
        draws = gen.normal(10.0, 1.0, 1000)
        assert 0.0 <= ks_statistic(draws, exponential(0.1)) <= 1.0

    def test_two_sample_identical(self):
        x = np.arange(10.0)
        assert ks_two_sample(x, x) == 0.0

    def test_two_sample_disjoint(self):
        assert ks_two_sample([1.0, 2.0], [5.0, 6.0]) == pytest.approx(1.0)


class TestMomentReport:
    def test_degenerate_first_moment(self):
        scaled = ScaledSampleSet(
            x=np.full((100, 1), 3.0),
            x_total=np.full(100, 3.0),
            batch=(np.arange(100) // 25).astype(np.int64),
            kind="classic",
            gamma=0.01,
        )
        rows = moment_report(scaled, exponential(1.0), 1)
        assert rows[0].empirical == pytest.approx(3.0)
        assert rows[0].stderr == 0.0

    def test_cross_rows_present_for_two_queues(self):
        gen = RngStream(6).generator()
        x = gen.exponential(1.0, size=(4000, 2))
        scaled = ScaledSampleSet(
            x=x, x_total=x.sum(1), batch=(np.arange(4000) // 500).astype(np.int64),
            kind="classic", gamma=0.01,
        )
        rows = moment_report(scaled, exponential(1.0), 2)
        labels = [r.label for r in rows]
        assert "cross m1=1 m2=1" in labels
        # independent coordinates: E[x1 x2] = 1, far from E[Y^2] = 2
        cross = next(r for r in rows if r.label == "cross m1=1 m2=1")
        assert cross.zscore < -4

    def test_order_cap(self):
        scaled = ScaledSampleSet(
            x=np.ones((10, 1)), x_total=np.ones(10), batch=np.zeros(10, dtype=np.int64),
            kind="classic", gamma=0.1,
        )
        with pytest.raises(ValueError):
            moment_report(scaled, exponential(1.0), 5)

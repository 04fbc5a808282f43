import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jsqa.errors import ConfigError, ResourceLimitError
from jsqa.model import BernoulliScaled, Binomial, Constant, QueueState, RngStream, SystemConfig
from jsqa.oracle import build_chain, oracle_moments, stationary
from jsqa.simulator import (
    SamplingPlan,
    collect_steady_state,
    default_plan,
    jsq_dispatch,
    sample_abandonments,
    simulate_coupled_domination,
    step,
    step_many,
)

SSQ = SystemConfig(
    n=1, gamma=0.1, arrivals=BernoulliScaled(1, 0.3), services=(BernoulliScaled(1, 0.4),)
)


def _gen(seed=0):
    return RngStream(seed).generator()


class TestDispatch:
    def test_unique_minimum(self):
        gen = _gen()
        assert all(jsq_dispatch((3, 1, 2), gen) == 1 for _ in range(20))

    def test_two_way_tie_is_fair(self):
        gen = _gen(1)
        q = np.array([2, 2])
        hits = sum(jsq_dispatch(q, gen) == 0 for _ in range(1_000_000))
        assert abs(hits - 500_000) < 2000

    def test_three_way_tie_is_fair(self):
        gen = _gen(2)
        q = np.array([0, 0, 0])
        counts = np.zeros(3)
        trials = 1_000_000
        for _ in range(trials):
            counts[jsq_dispatch(q, gen)] += 1
        assert np.abs(counts / trials - 1 / 3).max() < 0.002


class TestAbandonments:
    def test_gamma_zero_and_one(self):
        gen = _gen()
        q = np.array([4, 7, 0])
        assert not sample_abandonments(q, 0.0, gen).any()
        assert np.array_equal(sample_abandonments(q, 1.0, gen), q)

    def test_mean_matches_binomial(self):
        gen = _gen(3)
        draws = np.array([sample_abandonments(np.array([5]), 0.1, gen)[0] for _ in range(1_000_000)])
        assert abs(draws.mean() - 0.5) < 0.003

    def test_never_exceeds_queue(self):
        gen = _gen(4)
        q = np.array([3, 1, 6])
        for _ in range(200):
            assert (sample_abandonments(q, 0.7, gen) <= q).all()

    def test_gamma_out_of_range(self):
        with pytest.raises(ValueError):
            sample_abandonments(np.array([1]), 1.5, _gen())


class TestStep:
    def test_arrival_batch_to_short_queue(self):
        # from (0,0): no abandonments possible; find a seed dispatching to 0
        config = SystemConfig(
            n=2, gamma=0.5, arrivals=Constant(2), services=(Constant(1), Constant(0))
        )
        for seed in range(20):
            nxt, out = step(QueueState((0, 0)), config, RngStream(seed))
            if out.destination == 0:
                assert nxt.q == (1, 0)
                assert out.unused == (0, 0)
                break
        else:
            pytest.fail("no seed dispatched to queue 0")

    def test_unused_service_is_shortfall(self):
        config = SystemConfig(n=1, gamma=0.5, arrivals=Constant(0), services=(Constant(1),))
        nxt, out = step(QueueState((0,)), config, RngStream(0))
        assert nxt.q == (0,)
        assert out.unused == (1,)

    def test_full_abandonment_keeps_only_new_batch(self):
        config = SystemConfig(
            n=2, gamma=1.0, arrivals=Constant(1), services=(Constant(0), Constant(0))
        )
        nxt, out = step(QueueState((4, 4)), config, RngStream(5))
        assert out.abandonments == (4, 4)
        assert sorted(nxt.q) == [0, 1]
        assert nxt.q[out.destination] == 1
        assert out.unused == (0, 0)

    @given(
        q=st.lists(st.integers(min_value=0, max_value=30), min_size=1, max_size=4),
        gamma=st.floats(min_value=0.01, max_value=1.0),
        seed=st.integers(min_value=0, max_value=2**31),
    )
    @settings(max_examples=60, deadline=None)
    def test_slot_invariants_property(self, q, gamma, seed):
        n = len(q)
        config = SystemConfig(
            n=n, gamma=gamma, arrivals=Binomial(3, 0.4), services=(Binomial(2, 0.5),) * n
        )
        state = QueueState(tuple(q))
        nxt, out = step(state, config, RngStream(seed))
        a = np.zeros(n, dtype=int)
        a[out.destination] = out.arrivals
        pre = np.array(q) + a - np.array(out.services) - np.array(out.abandonments)
        assert np.array_equal(np.array(nxt.q), np.maximum(pre, 0))
        assert all(d <= qi for d, qi in zip(out.abandonments, q))
        assert all(0 <= u <= s for u, s in zip(out.unused, out.services))
        assert all(qi * u == 0 for qi, u in zip(nxt.q, out.unused))


class TestCollect:
    def test_absorbing_empty_state(self):
        config = SystemConfig(n=1, gamma=1.0, arrivals=Constant(0), services=(Constant(0),))
        plan = SamplingPlan(warmup_slots=10, num_samples=500, thinning=1, replicas=4)
        samples = collect_steady_state(config, plan, seed=0)
        assert not samples.q.any()
        assert not samples.u_total.any()

    def test_determinism_contract(self):
        plan = default_plan(SSQ, num_samples=20_000, replicas=8)
        a = collect_steady_state(SSQ, plan, seed=123)
        b = collect_steady_state(SSQ, plan, seed=123)
        assert np.array_equal(a.q, b.q)
        assert np.array_equal(a.u_total, b.u_total)
        assert np.array_equal(a.d_total, b.d_total)

    def test_thread_count_does_not_change_results(self):
        plan = default_plan(SSQ, num_samples=50_000, replicas=96)
        a = collect_steady_state(SSQ, plan, seed=7, threads=1)
        b = collect_steady_state(SSQ, plan, seed=7, threads=4)
        assert np.array_equal(a.q, b.q)

    def test_mean_matches_exact_chain(self):
        chain = build_chain(SSQ, 100)
        exact = oracle_moments(chain, stationary(chain), order=1)["total_m1"]
        plan = default_plan(SSQ, num_samples=400_000, replicas=64)
        samples = collect_steady_state(SSQ, plan, seed=11)
        totals = samples.totals().astype(float)
        nb = samples.num_batches
        means = np.array([totals[samples.batch == b].mean() for b in range(nb)])
        se = means.std(ddof=1) / math.sqrt(nb)
        assert abs(totals.mean() - exact) < 4 * se

    def test_stationarity_drift_identity(self):
        # mean of gamma * total - u_total equals the drift in steady state
        plan = default_plan(SSQ, num_samples=400_000, replicas=64)
        samples = collect_steady_state(SSQ, plan, seed=13)
        vals = SSQ.gamma * samples.totals() - samples.u_total
        nb = samples.num_batches
        means = np.array([vals[samples.batch == b].mean() for b in range(nb)])
        se = means.std(ddof=1) / math.sqrt(nb)
        assert abs(vals.mean() - SSQ.drift) < 4 * se

    def test_memory_cap(self):
        plan = SamplingPlan(warmup_slots=10, num_samples=10_000, thinning=1, replicas=2)
        with pytest.raises(ResourceLimitError):
            collect_steady_state(SSQ, plan, seed=0, max_cells=1000)

    def test_invalid_plan_rejected(self):
        with pytest.raises(ConfigError):
            SamplingPlan(warmup_slots=0, num_samples=10, thinning=1, replicas=1).check()
        with pytest.raises(ConfigError):
            SamplingPlan(warmup_slots=2, num_samples=10, thinning=5, replicas=1).check()

    def test_invalid_config_rejected(self):
        bad = SystemConfig(n=1, gamma=0.0, arrivals=Constant(1), services=(Constant(1),))
        plan = SamplingPlan(warmup_slots=10, num_samples=10, thinning=1, replicas=1)
        with pytest.raises(ConfigError):
            collect_steady_state(bad, plan, seed=0)

    def test_sample_row_view(self):
        plan = SamplingPlan(warmup_slots=10, num_samples=50, thinning=1, replicas=2)
        samples = collect_steady_state(SSQ, plan, seed=3)
        row = samples.row(0)
        assert row.q == tuple(samples.q[0])
        assert row.u_total == samples.u_total[0]


class TestStepMany:
    def test_matches_scalar_semantics(self):
        config = SystemConfig(
            n=2, gamma=0.3, arrivals=Binomial(2, 0.5), services=(Binomial(2, 0.3),) * 2
        )
        gen = _gen(17)
        q = np.array([[0, 5], [3, 3], [10, 0]], dtype=np.int64)
        q_next, a, dest, s, d, u = step_many(q, config, gen)
        add = np.zeros_like(q)
        add[np.arange(3), dest] = a
        pre = q + add - s - d
        assert np.array_equal(q_next, np.maximum(pre, 0))
        assert np.array_equal(u, q_next - pre)
        assert (d <= q).all()
        assert (q_next * u == 0).all()


class TestDomination:
    def test_no_abandonment_cap_dominates(self):
        # cap 0 exposes no jobs for the upper chain while gamma=1 drains q
        config = SystemConfig(
            n=1, gamma=1.0, arrivals=BernoulliScaled(1, 0.3), services=(BernoulliScaled(1, 0.4),)
        )
        report = simulate_coupled_domination(config, c_tilde=0.5, horizon=20_000, seed=2)
        assert report.holds

    def test_default_constant_zero_violations(self):
        c_tilde = SSQ.drift + SSQ.bound * math.sqrt(SSQ.gamma)
        report = simulate_coupled_domination(SSQ, c_tilde, horizon=100_000, seed=5)
        assert report.slots_checked == 100_000
        assert report.violations == 0

    def test_empty_horizon_vacuous(self):
        report = simulate_coupled_domination(SSQ, 0.3, horizon=0, seed=0)
        assert report.slots_checked == 0 and report.holds

    def test_requires_single_queue(self):
        config = SystemConfig(
            n=2, gamma=0.1, arrivals=Constant(1), services=(Constant(1), Constant(1))
        )
        with pytest.raises(ConfigError):
            simulate_coupled_domination(config, 0.3, horizon=10, seed=0)

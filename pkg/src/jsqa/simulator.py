"""Exact slot-by-slot evolution of the queue-length Markov chain, steady-state
sample collection, and the coupled-domination construction for the
single-queue case.

One slot, starting from queue vector q:
  d_i ~ Binomial(q_i, gamma) independently (abandonments, pre-slot state),
  the arrival batch a joins a queue of minimal pre-slot length (uniform ties),
  s_i ~ service law i, and
  q+_i = max(0, q_i + a*1{i=dest} - s_i - d_i),
with the unused service u_i making up the clamp, so q+_i * u_i = 0 always.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ResourceLimitError
from .model import (
    QueueState,
    RngStream,
    SlotOutcome,
    SystemConfig,
    require_valid,
    sample_many,
)

__all__ = [
    "SamplingPlan",
    "SteadyStateSample",
    "SampleSet",
    "DominationReport",
    "jsq_dispatch",
    "sample_abandonments",
    "step",
    "step_many",
    "relaxation_slots",
    "default_plan",
    "plan_from_dict",
    "collect_steady_state",
    "simulate_coupled_domination",
]

# Replicas are simulated in fixed-size vectorized groups, one random stream
# per group; the fixed group size keeps results identical for any thread count.
GROUP_SIZE = 64

# Memory cap for collect_steady_state, in int64 cells (q plus per-sample totals).
MAX_SAMPLE_CELLS = 1 << 28


@dataclass(frozen=True)
class SamplingPlan:
    """How steady-state samples are gathered: per-replica warmup, retained
    sample count (total across replicas), slots between retained samples, and
    the number of independent replicas."""

    warmup_slots: int
    num_samples: int
    thinning: int
    replicas: int

    def check(self) -> None:
        if min(self.warmup_slots, self.num_samples, self.thinning, self.replicas) < 1:
            raise ConfigError("sampling plan fields must all be positive")
        if self.warmup_slots < self.thinning:
            raise ConfigError("warmup_slots must be >= thinning")

    def to_dict(self) -> dict:
        return {
            "warmup_slots": self.warmup_slots,
            "num_samples": self.num_samples,
            "thinning": self.thinning,
            "replicas": self.replicas,
        }


def plan_from_dict(obj: dict) -> SamplingPlan:
    try:
        return SamplingPlan(
            warmup_slots=int(obj["warmup_slots"]),
            num_samples=int(obj["num_samples"]),
            thinning=int(obj["thinning"]),
            replicas=int(obj["replicas"]),
        )
    except KeyError as exc:
        raise ConfigError(f"sampling plan is missing field {exc}") from exc


@dataclass(frozen=True)
class SteadyStateSample:
    """One retained state plus the slot totals of the transition into it."""

    q: tuple[int, ...]
    u_total: int
    d_total: int


@dataclass
class SampleSet:
    """Column store of retained steady-state samples.

    `q` is (N, n); `u_total` and `d_total` are the unused-service and
    abandonment totals of the slot that produced each state. `batch` assigns
    each sample to a contiguous within-replica batch; batch spans are sized
    against the chain's relaxation time so batch means give honest standard
    errors.
    """

    q: np.ndarray
    u_total: np.ndarray
    d_total: np.ndarray
    batch: np.ndarray
    config: SystemConfig
    plan: SamplingPlan
    seed: int

    def __len__(self) -> int:
        return self.q.shape[0]

    @property
    def n(self) -> int:
        return self.q.shape[1]

    @property
    def gamma(self) -> float:
        return self.config.gamma

    @property
    def num_batches(self) -> int:
        return int(self.batch.max()) + 1 if len(self) else 0

    def row(self, i: int) -> SteadyStateSample:
        return SteadyStateSample(
            q=tuple(int(v) for v in self.q[i]),
            u_total=int(self.u_total[i]),
            d_total=int(self.d_total[i]),
        )

    def totals(self) -> np.ndarray:
        return self.q.sum(axis=1)


def jsq_dispatch(q, rng: np.random.Generator | RngStream) -> int:
    """Index of a shortest queue, ties broken uniformly at random."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    arr = q.as_array() if isinstance(q, QueueState) else np.asarray(q, dtype=np.int64)
    # adding U(0,1) noise keys the argmin on queue length first and breaks
    # integer ties uniformly
    return int(np.argmin(arr + gen.random(arr.shape[0])))


def sample_abandonments(q, gamma: float, rng: np.random.Generator | RngStream) -> np.ndarray:
    """Per-queue abandonment counts, Binomial(q_i, gamma) independently."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    arr = q.as_array() if isinstance(q, QueueState) else np.asarray(q, dtype=np.int64)
    return gen.binomial(arr, gamma).astype(np.int64)


def step(q, config: SystemConfig, rng: np.random.Generator | RngStream):
    """Advance one slot; returns (next QueueState, SlotOutcome)."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    arr = q.as_array() if isinstance(q, QueueState) else np.asarray(q, dtype=np.int64)
    d = sample_abandonments(arr, config.gamma, gen)
    dest = jsq_dispatch(arr, gen)
    a = config.arrivals.sample(gen)
    s = np.array([svc.sample(gen) for svc in config.services], dtype=np.int64)
    pre = arr - s - d
    pre[dest] += a
    nxt = np.maximum(pre, 0)
    u = nxt - pre
    outcome = SlotOutcome(
        arrivals=int(a),
        destination=dest,
        services=tuple(int(v) for v in s),
        abandonments=tuple(int(v) for v in d),
        unused=tuple(int(v) for v in u),
    )
    return QueueState(tuple(int(v) for v in nxt)), outcome


def relaxation_slots(config: SystemConfig) -> float:
    """Rough relaxation time of the chain, in slots.

    Underloaded chains equilibrate on the diffusive scale variance/drift^2;
    the abandonment restoring force acts on scale 1/gamma and is what matters
    at or above critical load.
    """
    gamma = config.gamma
    drift = config.drift
    t_abandon = 1.0 / gamma if gamma > 0 else math.inf
    if drift < 0:
        t_drift = max(config.variance, 1e-12) / drift**2
        return max(1.0, min(t_drift, t_abandon))
    return max(1.0, t_abandon)


def default_plan(
    config: SystemConfig,
    num_samples: int = 1_000_000,
    replicas: int = 64,
) -> SamplingPlan:
    """Sampling plan with warmup and thinning derived from the relaxation time."""
    relax = relaxation_slots(config)
    warmup = min(int(math.ceil(30.0 * relax)), 100_000_000)
    thinning = max(1, min(64, int(math.ceil(relax / 32.0))))
    return SamplingPlan(
        warmup_slots=max(warmup, thinning),
        num_samples=num_samples,
        thinning=thinning,
        replicas=replicas,
    )


def _batches_for(counts: np.ndarray, thinning: int, relax: float) -> np.ndarray:
    """Assign contiguous within-replica batch ids sized >= ~10 relaxation times."""
    min_span_samples = max(1, int(math.ceil(10.0 * relax / thinning)))
    ids = []
    next_id = 0
    for cnt in counts:
        b = max(1, min(32, cnt // min_span_samples))
        edges = np.linspace(0, cnt, b + 1).astype(np.int64)
        lab = np.repeat(np.arange(b) + next_id, np.diff(edges))
        ids.append(lab)
        next_id += b
    return np.concatenate(ids) if ids else np.zeros(0, dtype=np.int64)


def step_many(q: np.ndarray, config: SystemConfig, gen: np.random.Generator, hook=None):
    """Advance every row of the (replicas, n) state matrix by one slot.

    Returns (q_next, arrivals, destinations, services, abandonments, unused),
    all as arrays over replicas. `hook` may replace the abandonment matrix
    (test instrumentation).
    """
    r, n = q.shape
    gamma = config.gamma
    d = gen.binomial(q, gamma)
    if hook is not None:
        d = hook(d, q)
    dest = np.argmin(q + gen.random((r, n)), axis=1)
    a = sample_many(config.arrivals, gen, r)
    services = config.services
    if all(svc == services[0] for svc in services):
        s = sample_many(services[0], gen, (r, n))
    else:
        s = np.stack([sample_many(svc, gen, r) for svc in services], axis=1)
    pre = q - s - d
    pre[np.arange(r), dest] += a
    q_next = np.maximum(pre, 0)
    u = q_next - pre
    return q_next, a, dest, s, d, u


def _run_group(config, counts, warmup, thinning, stream, hook=None):
    """Simulate one vectorized group of replicas; returns stacked samples."""
    gen = stream.generator()
    r = len(counts)
    n = config.n
    q = np.zeros((r, n), dtype=np.int64)
    u_tot = np.zeros(r, dtype=np.int64)
    d_tot = np.zeros(r, dtype=np.int64)
    max_count = int(max(counts))
    out_q = np.empty((r, max_count, n), dtype=np.int64)
    out_u = np.empty((r, max_count), dtype=np.int64)
    out_d = np.empty((r, max_count), dtype=np.int64)

    def advance():
        nonlocal q, u_tot, d_tot
        q, _, _, _, d, u = step_many(q, config, gen, hook=hook)
        u_tot = u.sum(axis=1)
        d_tot = d.sum(axis=1)

    for _ in range(warmup):
        advance()
    for k in range(max_count):
        for _ in range(thinning):
            advance()
        out_q[:, k, :] = q
        out_u[:, k] = u_tot
        out_d[:, k] = d_tot

    qs = [out_q[i, : counts[i]] for i in range(r)]
    us = [out_u[i, : counts[i]] for i in range(r)]
    ds = [out_d[i, : counts[i]] for i in range(r)]
    return np.concatenate(qs), np.concatenate(us), np.concatenate(ds)


def collect_steady_state(
    config: SystemConfig,
    plan: SamplingPlan,
    seed: int,
    threads: int = 1,
    max_cells: int = MAX_SAMPLE_CELLS,
    abandonment_hook=None,
) -> SampleSet:
    """Run independent replicas from the empty state and collect thinned
    steady-state samples.

    Each replica discards `plan.warmup_slots` slots, then retains one state
    every `plan.thinning` slots; retained counts are split as evenly as
    possible across replicas so that exactly `plan.num_samples` samples come
    back, in replica order. Identical (config, plan, seed) always produce the
    identical sample set, for any `threads`.

    `abandonment_hook` is test instrumentation: it may replace the sampled
    abandonment vector and deliberately corrupt the dynamics.
    """
    require_valid(config)
    plan.check()
    if plan.num_samples * (config.n + 2) > max_cells:
        raise ResourceLimitError(
            f"plan retains {plan.num_samples} samples x {config.n + 2} cells, "
            f"exceeding the cap of {max_cells} cells"
        )

    base, rem = divmod(plan.num_samples, plan.replicas)
    counts = np.full(plan.replicas, base, dtype=np.int64)
    counts[:rem] += 1
    counts = counts[counts > 0]

    groups = []
    for g0 in range(0, len(counts), GROUP_SIZE):
        groups.append((g0 // GROUP_SIZE, counts[g0 : g0 + GROUP_SIZE]))

    def work(item):
        gid, cnts = item
        return _run_group(
            config, cnts, plan.warmup_slots, plan.thinning,
            RngStream(seed, gid), hook=abandonment_hook,
        )

    if threads > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, groups))
    else:
        results = [work(g) for g in groups]

    q = np.concatenate([r[0] for r in results])
    u = np.concatenate([r[1] for r in results])
    d = np.concatenate([r[2] for r in results])
    batch = _batches_for(counts, plan.thinning, relaxation_slots(config))
    return SampleSet(q=q, u_total=u, d_total=d, batch=batch, config=config, plan=plan, seed=seed)


@dataclass(frozen=True)
class DominationReport:
    """Result of running the three coupled chains with shared randomness."""

    slots_checked: int
    violations: int
    max_violation: int

    @property
    def holds(self) -> bool:
        return self.violations == 0


def simulate_coupled_domination(
    config: SystemConfig,
    c_tilde: float,
    horizon: int,
    seed: int,
) -> DominationReport:
    """Run the single-queue chain together with two coupled chains and check
    the sandwich ordering lower <= q <= upper at every slot.

    All three chains share the same arrival and service draws and the same
    sequence of per-job abandonment marks. The upper chain exposes at most
    floor(c_tilde / gamma) jobs to the marks, the lower chain at least
    ceil(c_tilde / gamma). With shared marks the per-slot abandonment gap
    between two chains never exceeds their queue gap, so the ordering holds
    path by path, not just in distribution.
    """
    require_valid(config)
    if config.n != 1:
        raise ConfigError("coupled domination is defined for single-queue systems only")
    if horizon < 0:
        raise ConfigError("horizon must be >= 0")
    gamma = config.gamma
    cap_heads = max(0, math.floor(c_tilde / gamma))
    floor_heads = max(0, math.ceil(c_tilde / gamma))

    gen = RngStream(seed, 0).generator()
    chunk = 1 << 14
    q = q_hi = q_lo = 0
    violations = 0
    max_violation = 0
    done = 0
    while done < horizon:
        m = min(chunk, horizon - done)
        a = sample_many(config.arrivals, gen, m)
        s = sample_many(config.services[0], gen, m)
        for t in range(m):
            c = int(a[t]) - int(s[t])
            h_mid = q
            h_hi = min(cap_heads, q_hi)
            h_lo = max(floor_heads, q_lo)
            top = max(h_mid, h_hi, h_lo)
            if top > 0:
                marks = gen.random(top) < gamma
                pref = np.cumsum(marks)
                d_mid = int(pref[h_mid - 1]) if h_mid else 0
                d_hi = int(pref[h_hi - 1]) if h_hi else 0
                d_lo = int(pref[h_lo - 1]) if h_lo else 0
            else:
                d_mid = d_hi = d_lo = 0
            q = max(0, q + c - d_mid)
            q_hi = max(0, q_hi + c - d_hi)
            q_lo = max(0, q_lo + c - d_lo)
            if not q_lo <= q <= q_hi:
                violations += 1
                max_violation = max(max_violation, q_lo - q, q - q_hi)
        done += m
    return DominationReport(slots_checked=horizon, violations=violations, max_violation=max_violation)

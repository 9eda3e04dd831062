"""Empirical and analytic privacy verification for announced bin counts.

The auditor builds neighboring inputs (swap one non-matching record),
then checks the indistinguishability claim three ways:

- white-box: exact probability-ratio maximization over announced-count
  events at the affected bins, using the noise pmf directly. Authoritative.
- black-box: frequency estimation of the same events from sampled
  announcements, with Clopper-Pearson intervals. Sanity layer; a violation
  is only called when the interval separates the claimed bound.
- construction: a worked instance where the suppressing noise variant
  provably leaks, with the exact event probabilities alongside empirical
  frequencies.

Audited events are per-bin counts and the joint count vector over the
affected bins only. The announcement distribution factorizes bin-wise, so
these events carry the whole distinguishing power; everything else in the
view is identical across the two inputs. This is still an event family, so
the empirical verdict is a lower bound on leakage, never an upper bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import beta

from .blocking import (
    TAXI_LAT0,
    TAXI_LAT1,
    TAXI_LON0,
    TAXI_LON1,
    BlockingFn,
    GridBlocking,
)
from .model import Dataset, MatchRule, Record, evaluate_match, plaintext_join
from .noise import SignedLaplace, TruncatedLaplace, signed_pad_bins


class NoNonMatchingRecord(ValueError):
    """Every record of the dataset matches; no swappable candidate."""


class PreconditionViolated(ValueError):
    """The leak construction needs a smaller failure probability."""


class InsufficientTrials(RuntimeError):
    """Not enough samples for the intervals to decide anything."""


@dataclass(frozen=True)
class NeighborPair:
    """Two datasets that differ by one exchanged non-matching record."""

    ds_b: Dataset
    ds_b_prime: Dataset
    removed: Record
    added: Record

    def validate(self, ds_a: Dataset, rule: MatchRule) -> None:
        if len(self.ds_b) != len(self.ds_b_prime):
            raise ValueError("neighbors must have equal sizes")
        for probe in (self.removed, self.added):
            for a in ds_a.records:
                if evaluate_match(rule, a, probe):
                    raise ValueError(f"swapped record {probe.rid} matches {a.rid}")
        if plaintext_join(rule, ds_a, self.ds_b) != plaintext_join(
            rule, ds_a, self.ds_b_prime
        ):
            raise ValueError("join output changed across the swap")


@dataclass
class AuditVerdict:
    protocol: str
    eps: float
    delta: float
    trials: int
    eps_hat: float
    violated: bool
    mode: str
    detail: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {
            "protocol": self.protocol,
            "eps": self.eps,
            "delta": self.delta,
            "trials": self.trials,
            "eps_hat": None if math.isinf(self.eps_hat) else self.eps_hat,
            "violated": self.violated,
            "mode": self.mode,
        }
        out.update(self.detail)
        return out


def clopper_pearson(hits: int, n: int, conf: float = 0.99) -> tuple[float, float]:
    """Exact two-sided binomial confidence interval."""
    if n <= 0:
        raise ValueError("empty sample")
    a = (1.0 - conf) / 2.0
    lo = 0.0 if hits == 0 else float(beta.ppf(a, hits, n - hits + 1))
    hi = 1.0 if hits == n else float(beta.ppf(1.0 - a, hits + 1, n - hits))
    return lo, hi


# ---------------------------------------------------------------------------
# neighbor generation


def _random_replacement(variant: str, rng: np.random.Generator, rid: int, days: int) -> Record:
    if variant == "grid":
        return Record(
            rid=rid,
            variant=variant,
            day=int(rng.integers(0, days)),
            slot=int(rng.integers(0, 24)),
            lat_e6=int(rng.integers(TAXI_LAT0, TAXI_LAT1)),
            lon_e6=int(rng.integers(TAXI_LON0, TAXI_LON1)),
        )
    return Record(
        rid=rid,
        variant=variant,
        day=int(rng.integers(0, days)),
        slot=int(rng.integers(0, 32)),
        bits=int(rng.integers(0, 1 << 50)),
        nbits=50,
    )


def gen_neighbor(
    ds_a: Dataset,
    ds_b: Dataset,
    rule: MatchRule,
    rng: np.random.Generator,
    max_tries: int = 1000,
) -> NeighborPair:
    """Swap one non-matching record of ds_b for a fresh non-matching one."""

    def matches_someone(r: Record) -> bool:
        return any(evaluate_match(rule, a, r) for a in ds_a.records)

    candidates = [r for r in ds_b.records if not matches_someone(r)]
    if not candidates:
        raise NoNonMatchingRecord("every record matches the other side")
    removed = candidates[int(rng.integers(0, len(candidates)))]

    nbits = removed.nbits if rule.variant == "bits" else 50
    days = max((r.day for r in ds_b.records), default=0) + 1
    taken = {r.rid for r in ds_b.records} | {r.rid for r in ds_a.records}
    rid = max(taken) + 1
    added = None
    for _ in range(max_tries):
        probe = _random_replacement(rule.variant, rng, rid, days)
        if rule.variant == "bits" and nbits != 50:
            probe = replace(probe, bits=probe.bits & ((1 << nbits) - 1), nbits=nbits)
        if not matches_someone(probe):
            added = probe
            break
    if added is None:
        raise NoNonMatchingRecord("no fresh non-matching replacement found")

    records = [added if r.rid == removed.rid else r for r in ds_b.records]
    prime = Dataset(name=ds_b.name + "'", variant=ds_b.variant, records=records)
    pair = NeighborPair(ds_b=ds_b, ds_b_prime=prime, removed=removed, added=added)
    pair.validate(ds_a, rule)
    return pair


def swapped_bin_deltas(pair: NeighborPair, blocking: BlockingFn) -> dict[int, tuple[int, int]]:
    """Bins whose count differs across the swap, as {bin: (count, count')}."""
    h = blocking.histogram(pair.ds_b)
    hp = blocking.histogram(pair.ds_b_prime)
    return {i: (h[i], hp[i]) for i in range(blocking.k) if h[i] != hp[i]}


# ---------------------------------------------------------------------------
# white-box: exact ratio over announced-count events


def _announced_offset_pmf(dist: TruncatedLaplace | None, span: int = 80) -> list[float]:
    """pmf of (announced - real) for one bin under additive clamped noise.

    Index j holds Pr[count = real + j]; j = 0 absorbs every non-positive
    draw since records are only ever added.
    """
    if dist is None:
        g = [0.0] * (span + 1)
        g[0] = 1.0
        return g
    top = dist.eta0 + span
    g = [dist.prob_negative() + dist.pmf(0)]
    g.extend(dist.pmf(j) for j in range(1, top + 1))
    return g


def _direction_scan(g: list[float], grown: int, shrunk: int) -> tuple[float, float]:
    """Max log-ratio and impossible-event mass for one neighbor direction.

    `grown` bins gained a record in the second input and `shrunk` bins lost
    one. For a grown bin the event "count equals the first input's real
    count" cannot occur under the second input; its mass is the failure
    budget. Everywhere else the per-bin ratio is between adjacent pmf
    values.
    """
    up = max(
        (g[j] / g[j + 1] for j in range(len(g) - 1) if g[j + 1] > 0 and g[j] > 0),
        default=1.0,
    )
    down = max(
        (g[j] / g[j - 1] for j in range(1, len(g)) if g[j - 1] > 0 and g[j] > 0),
        default=1.0,
    )
    log_ratio = shrunk * math.log(up) + grown * math.log(down)
    boundary = 1.0 - (1.0 - g[0]) ** grown
    return log_ratio, boundary


def whitebox_count_audit(
    pair: NeighborPair,
    blocking: BlockingFn,
    eps: float,
    delta: float,
    noise: str = "truncated",
) -> AuditVerdict:
    """Exact worst-case ratio of announced-count events at the swapped bins."""
    deltas = swapped_bin_deltas(pair, blocking)
    shifts = sum(abs(c - cp) for c, cp in deltas.values())
    if shifts > blocking.sensitivity():
        raise ValueError("swap moved more mass than the sensitivity bound")
    grown_fwd = sum(1 for c, cp in deltas.values() if cp > c)
    shrunk_fwd = sum(1 for c, cp in deltas.values() if cp < c)

    dist = TruncatedLaplace(eps, delta, blocking.sensitivity()) if noise == "truncated" else None
    g = _announced_offset_pmf(dist)
    fwd = _direction_scan(g, grown_fwd, shrunk_fwd)
    bwd = _direction_scan(g, shrunk_fwd, grown_fwd)
    boundary = max(fwd[1], bwd[1])
    if boundary > 0 and dist is None:
        eps_hat = math.inf
    else:
        eps_hat = max(fwd[0], bwd[0])
    violated = eps_hat > eps + 1e-9 or boundary > delta
    return AuditVerdict(
        protocol="lp" if noise == "truncated" else "deterministic",
        eps=eps,
        delta=delta,
        trials=0,
        eps_hat=eps_hat,
        violated=violated,
        mode="white-box",
        detail={
            "affected_bins": len(deltas),
            "boundary_mass": boundary,
            "instance": f"count events at bins {sorted(deltas)}",
        },
    )


# ---------------------------------------------------------------------------
# black-box: sampled announcement frequencies


def _sample_joint_counts(
    reals: list[int],
    dist: TruncatedLaplace | None,
    trials: int,
    rng: np.random.Generator,
) -> np.ndarray:
    base = np.array(reals, dtype=np.int64)
    if dist is None:
        return np.tile(base, (trials, 1))
    draws = dist.sample(rng, size=(trials, len(reals)))
    return base + np.clip(draws, 0, None)


def audit_bincounts(
    protocol: str,
    pair: NeighborPair,
    blocking: BlockingFn,
    eps: float,
    delta: float,
    trials: int = 100_000,
    seed: int = 0,
    min_trials: int = 10_000,
    conf: float = 0.99,
) -> AuditVerdict:
    """Frequency audit of the joint announced counts at the swapped bins.

    Samples the announcement pipeline directly (real count plus clamped
    noise per affected bin), which is exactly what a full protocol run
    announces; transcript-level agreement is covered by its own test.
    """
    if trials < min_trials:
        raise InsufficientTrials(f"need at least {min_trials} trials, got {trials}")
    if protocol not in ("lp", "apc", "deterministic"):
        raise ValueError(f"no count audit for protocol {protocol!r}")
    if protocol == "apc":
        # all-pairs announces only the input sizes, equal by construction
        bins = []
        reals_b = [len(pair.ds_b)]
        reals_bp = [len(pair.ds_b_prime)]
        dist = None
    else:
        deltas = swapped_bin_deltas(pair, blocking)
        bins = sorted(deltas)
        reals_b = [deltas[i][0] for i in bins]
        reals_bp = [deltas[i][1] for i in bins]
        dist = TruncatedLaplace(eps, delta, blocking.sensitivity()) if protocol == "lp" else None
    ss = np.random.SeedSequence(seed).spawn(2)
    counts_b = _sample_joint_counts(reals_b, dist, trials, np.random.default_rng(ss[0]))
    counts_bp = _sample_joint_counts(reals_bp, dist, trials, np.random.default_rng(ss[1]))

    freq_b: dict[tuple, int] = {}
    freq_bp: dict[tuple, int] = {}
    for row in counts_b:
        key = tuple(int(v) for v in row)
        freq_b[key] = freq_b.get(key, 0) + 1
    for row in counts_bp:
        key = tuple(int(v) for v in row)
        freq_bp[key] = freq_bp.get(key, 0) + 1
    if max(max(freq_b.values()), max(freq_bp.values())) < 10:
        raise InsufficientTrials("every event too rare to bound")

    bound = math.exp(eps)
    eps_hat = 0.0
    violated = False
    worst = None
    for event in set(freq_b) | set(freq_bp):
        for p_hits, q_hits in ((freq_b.get(event, 0), freq_bp.get(event, 0)),
                               (freq_bp.get(event, 0), freq_b.get(event, 0))):
            p_lo, _ = clopper_pearson(p_hits, trials, conf)
            _, q_hi = clopper_pearson(q_hits, trials, conf)
            if p_lo <= 0:
                continue
            ratio = p_lo / q_hi if q_hi > 0 else math.inf
            if math.log(ratio) > eps_hat:
                eps_hat = math.log(ratio)
                worst = event
            if p_lo > bound * q_hi + delta:
                violated = True
    return AuditVerdict(
        protocol=protocol,
        eps=eps,
        delta=delta,
        trials=trials,
        eps_hat=eps_hat,
        violated=violated,
        mode="black-box",
        detail={
            "affected_bins": len(bins),
            "worst_event": list(worst) if worst else None,
            "instance": "announced input sizes" if protocol == "apc"
            else f"count events at bins {bins}",
        },
    )


# ---------------------------------------------------------------------------
# the suppressing-noise leak construction


def _leak_instance(n1: int) -> tuple[Dataset, NeighborPair, GridBlocking]:
    """Two-bin planar instance: n1 exact matches east, the swap crosses cells.

    West cell holds the removed record, east cell the matchers plus the
    added one; spacing keeps every cross pair beyond the threshold.
    """
    blocking = GridBlocking(t_days=1, rows=1, cols=2, hour_buckets=1)
    east_lon = TAXI_LON0 + 50_000
    a_recs = []
    b_recs = []
    for i in range(n1):
        lat = TAXI_LAT0 + 10_000 + 3_000 * i
        a_recs.append(Record(rid=i, variant="grid", day=0, slot=0, lat_e6=lat, lon_e6=east_lon))
        b_recs.append(
            Record(rid=1_000 + i, variant="grid", day=0, slot=0, lat_e6=lat, lon_e6=east_lon)
        )
    removed = Record(
        rid=2_000, variant="grid", day=0, slot=0, lat_e6=TAXI_LAT0 + 10_000, lon_e6=TAXI_LON0 + 5_000
    )
    added = Record(
        rid=2_001, variant="grid", day=0, slot=0, lat_e6=TAXI_LAT0 + 60_000, lon_e6=east_lon
    )
    ds_a = Dataset(name="leak-a", variant="grid", records=a_recs)
    ds_b = Dataset(name="leak-b", variant="grid", records=b_recs + [removed])
    ds_bp = Dataset(name="leak-b'", variant="grid", records=b_recs + [added])
    pair = NeighborPair(ds_b=ds_b, ds_b_prime=ds_bp, removed=removed, added=added)
    rule = MatchRule(kind="euclid", theta=1000)
    pair.validate(ds_a, rule)
    return ds_a, pair, blocking


def _leak_event_hits(
    ds: Dataset,
    blocking: GridBlocking,
    matcher_ids: frozenset[int],
    n1: int,
    dist: SignedLaplace,
    rule: MatchRule,
    trials: int,
    rng: np.random.Generator,
) -> int:
    """Count trials whose padded bins show (1, n1) with every matcher kept.

    Runs the protocol's own padding step per trial; the event is exactly
    the announcement plus full matching output.
    """
    bins = blocking.assign_bins(ds)
    hits = 0
    for _ in range(trials):
        padded, _ = signed_pad_bins(bins, dist, rng, rule, 0, 50)
        if len(padded[0]) != 1 or len(padded[1]) != n1:
            continue
        if matcher_ids <= {r.rid for r in padded[1]}:
            hits += 1
    return hits


def lp2_counterexample(
    eps: float,
    delta: float,
    n1: int | None = None,
    trials: int = 100_000,
    seed: int = 0,
    conf: float = 0.99,
) -> tuple[Dataset, NeighborPair, AuditVerdict]:
    """A worked leak for zero-mean suppressing noise.

    With two count shifts of alpha = eps/2 each, the all-zero-noise view
    has probability p^2 where p = (1-q)/(1+q), q = e^-alpha. Under the
    swapped input the same view needs one added dummy, one suppression,
    and the suppression landing on the swapped record: p^2 e^-eps/(n1+1).
    The ratio e^eps (n1+1) clears the claimed bound by a factor n1+1.
    """
    alpha = eps / 2.0
    q = math.exp(-alpha)
    p = (1.0 - q) / (1.0 + q)
    precondition = p * p / (2.0 * math.exp(eps))
    if delta >= precondition:
        raise PreconditionViolated(
            f"need delta < p^2/(2 e^eps) = {precondition:.6g}, got {delta}"
        )
    n1_max = p * p * math.exp(-eps) / delta - 1.0
    if n1 is None:
        n1 = min(10, int(n1_max) - 1) if n1_max < 11 else 10
    if not 1 <= n1 < n1_max:
        raise PreconditionViolated(f"n1 must lie in [1, {n1_max:.3f}), got {n1}")

    ds_a, pair, blocking = _leak_instance(n1)
    rule = MatchRule(kind="euclid", theta=1000)
    prob_d = p * p
    prob_dp = p * p * math.exp(-eps) / (n1 + 1)
    ratio = prob_d / prob_dp

    dist = SignedLaplace(eps, blocking.sensitivity())
    matcher_ids = frozenset(r.rid for r in pair.ds_b.records if 1_000 <= r.rid < 2_000)
    ss = np.random.SeedSequence(seed).spawn(2)
    hits_d = _leak_event_hits(
        pair.ds_b, blocking, matcher_ids, n1, dist, rule, trials, np.random.default_rng(ss[0])
    )
    hits_dp = _leak_event_hits(
        pair.ds_b_prime, blocking, matcher_ids, n1, dist, rule, trials, np.random.default_rng(ss[1])
    )
    lo_d, _ = clopper_pearson(hits_d, trials, conf)
    _, hi_dp = clopper_pearson(hits_dp, trials, conf)
    empirically_violated = lo_d > math.exp(eps) * hi_dp + delta
    analytic_violated = prob_d > math.exp(eps) * prob_dp + delta
    eps_hat = math.log(lo_d / hi_dp) if hi_dp > 0 and lo_d > 0 else math.inf
    verdict = AuditVerdict(
        protocol="lp2",
        eps=eps,
        delta=delta,
        trials=trials,
        eps_hat=eps_hat,
        violated=analytic_violated and empirically_violated,
        mode="construction",
        detail={
            "n1": n1,
            "n1_max": n1_max,
            "precondition_bound": precondition,
            "p": p,
            "prob_view_d": prob_d,
            "prob_view_dprime": prob_dp,
            "analytic_ratio": ratio,
            "analytic_violated": analytic_violated,
            "empirical": {
                "freq_d": hits_d / trials,
                "freq_dprime": hits_dp / trials,
                "ci_lower_d": lo_d,
                "ci_upper_dprime": hi_dp,
                "violated": empirically_violated,
            },
            "instance": f"two bins, {n1} exact matches, swap crosses cells",
        },
    )
    return ds_a, pair, verdict


# ---------------------------------------------------------------------------
# randomized-report audit


def rr_report_audit(
    eps: float, k: int, trials: int = 50_000, seed: int = 0, conf: float = 0.99
) -> AuditVerdict:
    """Per-record report-distribution ratio across two true bins.

    The report pmf is p at the true bin, (1-p)/(k-1) elsewhere, so any two
    records' report distributions differ by at most p/q = e^eps per value.
    The analytic bound is exact; sampled frequencies must stay within it.
    """
    from .protocols.randomized import rr_probs

    p, q = rr_probs(eps, k)
    analytic = p / q
    rng = np.random.default_rng(seed)
    probs_u = np.full(k, q)
    probs_u[0] = p
    probs_v = np.full(k, q)
    probs_v[1] = p
    rep_u = np.bincount(rng.choice(k, size=trials, p=probs_u), minlength=k)
    rep_v = np.bincount(rng.choice(k, size=trials, p=probs_v), minlength=k)
    violated = False
    eps_hat = 0.0
    for b in range(k):
        for hits_p, hits_q in ((rep_u[b], rep_v[b]), (rep_v[b], rep_u[b])):
            lo, _ = clopper_pearson(int(hits_p), trials, conf)
            _, hi = clopper_pearson(int(hits_q), trials, conf)
            if lo <= 0:
                continue
            eps_hat = max(eps_hat, math.log(lo / hi) if hi > 0 else math.inf)
            if hi > 0 and lo / hi > analytic * (1 + 1e-12):
                violated = True
    return AuditVerdict(
        protocol="rr",
        eps=eps,
        delta=0.0,
        trials=trials,
        eps_hat=eps_hat,
        violated=violated,
        mode="black-box",
        detail={
            "k": k,
            "analytic_ratio": analytic,
            "instance": f"report distributions of two records, {k} bins",
        },
    )

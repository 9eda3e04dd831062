"""Neighbor construction and the audit modes, checked against closed forms.

Oracle notes:
- [DERIVED] white-box budget for clamped noise: with one grown and one
  shrunk bin the worst event ratio is the product of the two adjacent
  pmf ratios, and for the truncated two-sided geometric that product is
  e^{2 alpha} = e^eps exactly. At (eps=1.6, delta=1e-5, sens=2) the shift
  is ceil(13.10...) = 14, so the impossible-event mass is
  q^14/(1+q) = 9.434846335309999e-06 with q = e^{-0.8}; one shift less
  would give 2.1e-05 > delta, so the pass rides on the integer rounding.
- [DERIVED] suppressing-noise leak at (eps=1.6, delta=1e-3, n1=10):
  p = (1-q)/(1+q) = 0.3799489622552249, all-zero-noise view probability
  p^2 = 0.1443612139188223 on one side versus p^2 e^-eps/(n1+1) =
  0.0026496387657901642 on the other, ratio e^eps (n1+1) = 54.48335666...
  Feasibility: n1 < p^2 e^-eps/delta - 1 = 28.146..., and the whole
  construction needs delta < p^2/(2 e^eps) = 0.014573...
- [DERIVED] per-record report ratio for randomized reports is p/q with
  p = e^eps/(k-1+e^eps) and q = (1-p)/(k-1), which collapses to e^eps.
- [TRIVIAL] Clopper-Pearson endpoints at x=0 and x=n are 0 and 1.
"""

from __future__ import annotations

import json
import math
from dataclasses import replace

import numpy as np
import pytest

from privlink.audit import (
    InsufficientTrials,
    NeighborPair,
    NoNonMatchingRecord,
    PreconditionViolated,
    audit_bincounts,
    clopper_pearson,
    gen_neighbor,
    lp2_counterexample,
    rr_report_audit,
    swapped_bin_deltas,
    whitebox_count_audit,
)
from privlink.blocking import TAXI_LAT0, TAXI_LON0, GridBlocking
from privlink.model import GRID, Dataset, MatchRule, Record, evaluate_match, plaintext_join
from privlink.noise import TruncatedLaplace
from privlink.protocols import ProtocolConfig, run_lp

from conftest import make_bits_dataset, flip_bits

EUCLID = MatchRule(kind="euclid", theta=1000)
FULL_GRID = GridBlocking(t_days=2)


@pytest.fixture(scope="module")
def neighbor(grid_pair):
    ds_a, ds_b = grid_pair
    pair = gen_neighbor(ds_a, ds_b, EUCLID, np.random.default_rng(0))
    return ds_a, pair


@pytest.fixture(scope="module")
def leak():
    # one shared 2x20k-trial run; the frequency assertions below all read it
    return lp2_counterexample(1.6, 1e-3, trials=20_000, seed=0)


class TestNeighborGeneration:
    def test_swap_exchanges_exactly_one_record(self, neighbor):
        _, pair = neighbor
        rids_b = {r.rid for r in pair.ds_b.records}
        rids_bp = {r.rid for r in pair.ds_b_prime.records}
        assert len(pair.ds_b) == len(pair.ds_b_prime)
        assert rids_b - rids_bp == {pair.removed.rid}
        assert rids_bp - rids_b == {pair.added.rid}

    def test_join_output_unchanged(self, neighbor):
        ds_a, pair = neighbor
        before = plaintext_join(EUCLID, ds_a, pair.ds_b)
        after = plaintext_join(EUCLID, ds_a, pair.ds_b_prime)
        assert before == after
        assert len(before) > 0

    def test_swapped_records_match_nobody(self, neighbor):
        ds_a, pair = neighbor
        for probe in (pair.removed, pair.added):
            assert not any(evaluate_match(EUCLID, a, probe) for a in ds_a.records)

    def test_bin_histograms_differ_in_two_positions(self, neighbor):
        _, pair = neighbor
        deltas = swapped_bin_deltas(pair, FULL_GRID)
        (bin_added,) = FULL_GRID.bins_of(pair.added)
        (bin_removed,) = FULL_GRID.bins_of(pair.removed)
        assert deltas == {bin_added: (0, 1), bin_removed: (1, 0)}
        assert sum(abs(c - cp) for c, cp in deltas.values()) == 2

    def test_all_matching_dataset_rejected(self, grid_pair):
        ds_a, _ = grid_pair
        clones = [replace(r, rid=r.rid + 1_000) for r in ds_a.records]
        twin = Dataset(name="twin", variant=GRID, records=clones)
        with pytest.raises(NoNonMatchingRecord):
            gen_neighbor(ds_a, twin, EUCLID, np.random.default_rng(0))

    def test_validate_rejects_matching_replacement(self, neighbor):
        ds_a, pair = neighbor
        bad = NeighborPair(
            ds_b=pair.ds_b,
            ds_b_prime=pair.ds_b_prime,
            removed=pair.removed,
            added=ds_a.records[0],
        )
        with pytest.raises(ValueError, match="matches"):
            bad.validate(ds_a, EUCLID)

    def test_validate_rejects_size_mismatch(self, neighbor):
        ds_a, pair = neighbor
        short = Dataset(
            name="short",
            variant=GRID,
            records=pair.ds_b_prime.records[:-1],
        )
        bad = NeighborPair(
            ds_b=pair.ds_b, ds_b_prime=short, removed=pair.removed, added=pair.added
        )
        with pytest.raises(ValueError, match="equal sizes"):
            bad.validate(ds_a, EUCLID)

    def test_code_variant_swap_keeps_width(self):
        ds_a = make_bits_dataset(30, 141, nbits=8)
        ds_b = flip_bits(ds_a, 142, tag=9_000)
        rule = MatchRule(kind="hamming", theta=2)
        pair = gen_neighbor(ds_a, ds_b, rule, np.random.default_rng(1))
        assert pair.added.nbits == 8
        assert 0 <= pair.added.bits < 256


class TestWhiteboxAudit:
    def test_clamped_noise_meets_budget_exactly(self, neighbor):
        _, pair = neighbor
        v = whitebox_count_audit(pair, FULL_GRID, eps=1.6, delta=1e-5)
        assert v.eps_hat == pytest.approx(1.6, abs=1e-9)
        assert not v.violated
        assert v.mode == "white-box"
        assert v.detail["affected_bins"] == 2

    def test_boundary_mass_frozen_and_within_delta(self, neighbor):
        _, pair = neighbor
        v = whitebox_count_audit(pair, FULL_GRID, eps=1.6, delta=1e-5)
        boundary = v.detail["boundary_mass"]
        assert boundary == pytest.approx(9.434846335309999e-06, rel=1e-12)
        assert boundary <= 1e-5
        # one shift step less would blow the budget; rounding up creates the slack
        dist = TruncatedLaplace(1.6, 1e-5, 2)
        assert boundary / dist.q > 1e-5

    def test_missing_noise_gives_infinite_ratio(self, neighbor):
        _, pair = neighbor
        v = whitebox_count_audit(pair, FULL_GRID, eps=1.6, delta=1e-5, noise="none")
        assert math.isinf(v.eps_hat)
        assert v.violated
        assert v.to_json()["eps_hat"] is None

    def test_multi_record_swap_exceeds_sensitivity(self):
        strip = GridBlocking(t_days=1, rows=1, cols=4, hour_buckets=1)
        width = strip.lon1 - strip.lon0

        def rec(rid, frac):
            return Record(
                rid=rid,
                variant=GRID,
                day=0,
                slot=0,
                lat_e6=TAXI_LAT0 + 10_000,
                lon_e6=TAXI_LON0 + int(frac * width),
            )

        ds_b = Dataset(name="b", variant=GRID, records=[rec(0, 0.1), rec(1, 0.3)])
        ds_bp = Dataset(name="b'", variant=GRID, records=[rec(2, 0.6), rec(3, 0.9)])
        pair = NeighborPair(
            ds_b=ds_b, ds_b_prime=ds_bp, removed=ds_b.records[0], added=ds_bp.records[0]
        )
        with pytest.raises(ValueError, match="sensitivity"):
            whitebox_count_audit(pair, strip, eps=1.6, delta=1e-5)


class TestBlackboxAudit:
    def test_clamped_noise_within_budget(self, neighbor):
        _, pair = neighbor
        v = audit_bincounts("lp", pair, FULL_GRID, 1.6, 1e-5, trials=20_000, seed=3)
        assert not v.violated
        assert 0.0 < v.eps_hat <= 1.6
        assert v.mode == "black-box"
        assert v.trials == 20_000

    def test_bare_counts_flagged(self, neighbor):
        _, pair = neighbor
        v = audit_bincounts(
            "deterministic", pair, FULL_GRID, 1.6, 1e-5, trials=20_000, seed=3
        )
        assert v.violated
        assert v.eps_hat > 1.6
        assert v.detail["worst_event"] is not None

    def test_all_pairs_view_carries_nothing(self, neighbor):
        _, pair = neighbor
        v = audit_bincounts("apc", pair, FULL_GRID, 1.6, 1e-5, trials=20_000, seed=3)
        assert not v.violated
        assert v.eps_hat == 0.0
        assert v.detail["affected_bins"] == 0

    def test_trial_floor(self, neighbor):
        _, pair = neighbor
        with pytest.raises(InsufficientTrials):
            audit_bincounts("lp", pair, FULL_GRID, 1.6, 1e-5, trials=500)

    def test_rare_events_refused(self, neighbor):
        _, pair = neighbor
        with pytest.raises(InsufficientTrials, match="rare"):
            audit_bincounts(
                "lp", pair, FULL_GRID, 1.6, 1e-5, trials=12, min_trials=1, seed=5
            )

    def test_unknown_protocol(self, neighbor):
        _, pair = neighbor
        with pytest.raises(ValueError, match="rr"):
            audit_bincounts("rr", pair, FULL_GRID, 1.6, 1e-5, trials=20_000)

    def test_interval_endpoints(self):
        assert clopper_pearson(0, 100) == (0.0, pytest.approx(0.0515, abs=2e-3))
        lo, hi = clopper_pearson(100, 100)
        assert hi == 1.0 and lo > 0.9
        with pytest.raises(ValueError):
            clopper_pearson(0, 0)


class TestLeakConstruction:
    def test_frozen_event_probabilities(self, leak):
        _, _, v = leak
        d = v.detail
        assert d["p"] == pytest.approx(0.3799489622552249, rel=1e-12)
        assert d["prob_view_d"] == pytest.approx(0.1443612139188223, rel=1e-12)
        assert d["prob_view_dprime"] == pytest.approx(0.0026496387657901642, rel=1e-12)
        assert d["analytic_ratio"] == pytest.approx(54.48335666834626, rel=1e-12)
        assert d["n1_max"] == pytest.approx(28.146026423691806, rel=1e-12)
        assert d["precondition_bound"] == pytest.approx(0.014573013211845903, rel=1e-12)
        assert d["analytic_violated"]

    def test_certifies_violation_empirically(self, leak):
        _, _, v = leak
        emp = v.detail["empirical"]
        assert v.violated
        assert emp["violated"]
        assert emp["freq_d"] == pytest.approx(0.1443612139188223, abs=0.012)
        assert emp["freq_dprime"] == pytest.approx(0.0026496387657901642, abs=0.003)
        assert emp["ci_lower_d"] > math.exp(1.6) * emp["ci_upper_dprime"] + 1e-3
        assert v.eps_hat > 1.6

    def test_instance_is_a_valid_neighbor(self, leak):
        ds_a, pair, _ = leak
        pair.validate(ds_a, EUCLID)
        truth = plaintext_join(EUCLID, ds_a, pair.ds_b)
        assert truth == frozenset((i, 1_000 + i) for i in range(10))

    def test_failure_budget_too_large_refused(self):
        with pytest.raises(PreconditionViolated, match="delta"):
            lp2_counterexample(1.6, 0.05, trials=1_000)

    def test_match_count_bounds_enforced(self):
        with pytest.raises(PreconditionViolated, match="n1"):
            lp2_counterexample(1.6, 1e-3, n1=29, trials=1_000)
        with pytest.raises(PreconditionViolated, match="n1"):
            lp2_counterexample(1.6, 1e-3, n1=0, trials=1_000)

    def test_verdict_serializes(self, leak):
        _, _, v = leak
        blob = json.loads(json.dumps(v.to_json()))
        assert blob["protocol"] == "lp2"
        assert blob["violated"] is True
        assert blob["eps_hat"] > 1.6


class TestRandomizedReportAudit:
    def test_per_record_ratio_within_budget(self):
        v = rr_report_audit(1.6, 16, trials=50_000, seed=2)
        assert not v.violated
        assert v.detail["analytic_ratio"] == pytest.approx(math.exp(1.6), rel=1e-12)
        assert 0.0 < v.eps_hat <= 1.6

    def test_two_bin_domain(self):
        v = rr_report_audit(0.4, 2, trials=30_000, seed=4)
        assert not v.violated
        assert v.eps_hat <= 0.4


class TestEngineTieIn:
    def test_swap_invisible_in_protocol_output(self, neighbor):
        ds_a, pair = neighbor
        cfg = ProtocolConfig(
            rule=EUCLID,
            blocking=GridBlocking(t_days=2, rows=4, cols=4, hour_buckets=6),
            eps=1.6,
            delta=1e-5,
        )
        r1 = run_lp(ds_a, pair.ds_b, cfg, seed=11)
        r2 = run_lp(ds_a, pair.ds_b_prime, cfg, seed=11)
        assert r1.output.pairs == r2.output.pairs
        assert len(r1.output.pairs) > 0

"""Two-party linkage engine and the run harness.

One message-level engine drives every blocking-based protocol; the variants
differ only in configuration: which blocking function, which padding noise,
whether bins are locally scattered before announcement, whether low-count
bin pairs are sorted and pruned, and whether matches clean later bins. Both
parties execute the same code with a role flag, so every branch that touches
the channel is written to keep the two ends in lockstep.

The engine has two execution modes. "crypto" runs the actual ciphertext
protocol: Alice's records cross the wire encrypted, Bob folds and blinds
distances homomorphically, and verdicts come from the comparison oracle.
"fast" reproduces the identical decisions and costs from plaintext; padded
comparisons involving dummies are counted in bulk rather than enumerated,
which is what makes desk-scale sweeps affordable. Both modes bill one unit
of cost per remaining-load product, so cost and output agree per instance.
"""

from __future__ import annotations

import math
import queue
import threading
import time
from dataclasses import dataclass, replace
from hashlib import sha256

import numpy as np

from ..blocking import BlockingFn
from ..crypto import (
    ComparisonOracle,
    TrustedSimulator,
    blinded_distance,
    encrypt_record,
    generate_keypair,
)
from ..model import (
    BITS,
    Dataset,
    MatchOutput,
    MatchRule,
    Record,
    RecallValue,
    evaluate_match,
    plaintext_join,
    precision,
    recall,
)
from ..noise import (
    NoiseReceipt,
    SignedLaplace,
    TruncatedLaplace,
    pad_bins,
    signed_pad_bins,
)
from ..transport import (
    Abort,
    BinCountsAnnounce,
    BlindedDistance,
    Channel,
    ChannelAbort,
    CompareVerdict,
    EncRecordBatch,
    MatchAnnounce,
    OutputSync,
    Transcript,
    inprocess_pair,
    tcp_pair,
)


class ProtocolError(RuntimeError):
    """A party observed something that should not happen and stopped."""


class OutputMismatch(ProtocolError):
    """The two parties disagreed on the final output."""


SP_PERCENTILES = tuple(range(90, -1, -10))

# below this candidate volume the python loop beats array setup
_VECTOR_CUTOFF = 4096


@dataclass
class ProtocolConfig:
    """Knobs shared by the blocking-based protocols.

    eps/delta apply per party; both use the same budget. sp_stop of None
    disables sorting entirely; 0 sorts but processes every group, which
    prunes nothing and only reorders work.
    """

    rule: MatchRule
    blocking: BlockingFn | None = None
    eps: float = 1.6
    delta: float = 1e-5
    noise: str = "truncated"  # truncated | signed | zero
    sp_stop: int | None = None
    sp_checkpoints: bool = False
    gmc: bool = False
    rr: bool = False
    mode: str = "fast"  # fast | crypto
    key_bits: int = 512
    nbits: int = 50


@dataclass(frozen=True)
class Checkpoint:
    """Cumulative state right after one sorted group finished."""

    percentile: int
    cost: int
    matches: frozenset
    recall: float


@dataclass
class RunResult:
    protocol: str
    output: MatchOutput
    cost: int
    recall: RecallValue
    precision: RecallValue
    truth_size: int
    transcript: Transcript
    receipts_a: list[NoiseReceipt]
    receipts_b: list[NoiseReceipt]
    checkpoints: list[Checkpoint]
    wall_ms: float
    seed: int
    mode: str
    gamma: int | None = None
    oracle_queries: int = 0


# ---------------------------------------------------------------------------
# pure helpers, shared with the tests and the audits


def output_digest(pairs) -> bytes:
    h = sha256()
    for a, b in sorted(pairs):
        h.update(a.to_bytes(8, "big", signed=True))
        h.update(b.to_bytes(8, "big", signed=True))
    return h.digest()


def pad_counts(
    bin_ids, dist: TruncatedLaplace, rng: np.random.Generator
) -> tuple[dict[int, int], list[NoiseReceipt]]:
    """Dummy counts without materializing dummy records.

    Same draw order as pad_bins: one draw per bin in sorted bin order. Used
    by fast mode, where dummies only ever enter counts, never comparisons.
    """
    order = sorted(bin_ids)
    draws = dist.sample(rng, size=len(order))
    counts: dict[int, int] = {}
    receipts: list[NoiseReceipt] = []
    for bin_id, raw in zip(order, draws):
        raw = int(raw)
        counts[bin_id] = max(raw, 0)
        receipts.append(NoiseReceipt(bin_id, raw, max(raw, 0)))
    return counts, receipts


def sp_thresholds(pool, stop: int) -> list[tuple[int, int]]:
    """(percentile, threshold) levels, largest percentile first.

    Thresholds are lower-interpolation percentiles of the pooled announced
    loads, so every level is an actually announced count. The 0th level is
    forced to -1: stopping at 0 means "sort but keep everything", and a
    strict > min(pool) cut would silently drop the lightest bins.
    """
    levels = []
    arr = np.asarray(sorted(pool))
    for p in SP_PERCENTILES:
        if p < stop:
            break
        t = -1 if p == 0 else int(np.percentile(arr, p, method="lower"))
        levels.append((p, t))
    return levels


def sp_groups(
    loads_a: dict[int, int],
    loads_b: dict[int, int],
    pairs: list[tuple[int, int]],
    stop: int,
) -> list[tuple[int, list[tuple[int, int]]]]:
    """Partition the strategy into per-level groups, heaviest level first.

    A pair lands in the highest level whose threshold both its announced
    loads strictly exceed; pairs below the stop level are pruned. Duplicate
    thresholds leave the later level empty rather than re-listing pairs.
    """
    pool = list(loads_a.values()) + list(loads_b.values())
    levels = sp_thresholds(pool, stop)
    grouped: list[tuple[int, list[tuple[int, int]]]] = [(p, []) for p, _ in levels]
    for i, j in sorted(pairs):
        low = min(loads_a.get(i, 0), loads_b.get(j, 0))
        for idx, (_, t) in enumerate(levels):
            if low > t:
                grouped[idx][1].append((i, j))
                break
    return grouped


def blocked_join(
    rule: MatchRule, blocking: BlockingFn, ds_a: Dataset, ds_b: Dataset
) -> set[tuple[int, int]]:
    """Non-private reference: the join restricted to the blocking strategy."""
    bins_a = blocking.assign_bins(ds_a)
    bins_b = blocking.assign_bins(ds_b)
    out: set[tuple[int, int]] = set()
    for i, j in blocking.strategy_pairs():
        hits = pair_matches(
            rule,
            [(r.rid, r) for r in bins_a[i]],
            [(r.rid, r) for r in bins_b[j]],
        )
        out.update(hits)
    return out


def rr_keep_prob(eps: float, k: int) -> float:
    """Probability randomized response keeps the true bin among k."""
    if math.isinf(eps):
        return 1.0
    e = math.exp(eps)
    return e / (k - 1 + e)


def rr_scatter(
    bins: dict[int, list[Record]], k: int, eps: float, rng: np.random.Generator
) -> dict[int, list[Record]]:
    """Randomized response over bin ids: keep with probability
    e^eps / (k - 1 + e^eps), otherwise report a uniform other bin."""
    p = rr_keep_prob(eps, k)
    out: dict[int, list[Record]] = {i: [] for i in range(k)}
    for i in sorted(bins):
        for r in bins[i]:
            if k == 1 or rng.random() < p:
                j = i
            else:
                j = (i + 1 + int(rng.integers(k - 1))) % k
            out[j].append(r)
    return {i: sorted(rs, key=lambda r: r.rid) for i, rs in out.items()}


def pair_matches(
    rule: MatchRule,
    alist: list[tuple[int, Record]],
    blist: list[tuple[int, Record]],
) -> list[tuple[int, int]]:
    """Labelled matching pairs; exact, vectorized when it pays off.

    Inputs are (label, record) lists; the result holds label pairs. The
    vector path mirrors distance() term for term in int64, which the value
    ranges cannot overflow.
    """
    if not alist or not blist:
        return []
    volume = len(alist) * len(blist)
    use_vector = volume >= _VECTOR_CUTOFF and (
        rule.variant != BITS or max(r.nbits for _, r in alist + blist) <= 64
    )
    if not use_vector:
        return sorted(
            (pa, pb)
            for pa, a in alist
            for pb, b in blist
            if evaluate_match(rule, a, b)
        )
    kw = rule.key_weight
    kd_a = np.array([(r.day * 32 + r.slot) * kw for _, r in alist], dtype=np.int64)
    kd_b = np.array([(r.day * 32 + r.slot) * kw for _, r in blist], dtype=np.int64)
    vt_a = np.array([r.vtag for _, r in alist], dtype=np.int64)
    vt_b = np.array([r.vtag for _, r in blist], dtype=np.int64)
    d = (kd_a[:, None] - kd_b[None, :]) ** 2 + (vt_a[:, None] - vt_b[None, :]) ** 2
    if rule.kind == "euclid":
        lat_a = np.array([r.lat_e6 for _, r in alist], dtype=np.int64)
        lat_b = np.array([r.lat_e6 for _, r in blist], dtype=np.int64)
        lon_a = np.array([r.lon_e6 for _, r in alist], dtype=np.int64)
        lon_b = np.array([r.lon_e6 for _, r in blist], dtype=np.int64)
        d += (lat_a[:, None] - lat_b[None, :]) ** 2
        d += (lon_a[:, None] - lon_b[None, :]) ** 2
    else:
        bits_a = np.array([r.bits for _, r in alist], dtype=np.uint64)
        bits_b = np.array([r.bits for _, r in blist], dtype=np.uint64)
        d += np.bitwise_count(bits_a[:, None] ^ bits_b[None, :]).astype(np.int64)
    ia, ib = np.nonzero(d <= rule.threshold)
    la = [p for p, _ in alist]
    lb = [p for p, _ in blist]
    return sorted((la[x], lb[y]) for x, y in zip(ia.tolist(), ib.tolist()))


# ---------------------------------------------------------------------------
# the engine


class _Rendezvous:
    """In-process meeting point for the comparison oracle.

    The ciphertext round leaves Alice holding decrypted blinded values and
    Bob holding the blinds; the comparison needs both. Alice drops her
    values here, Bob blocks until they arrive and collects the verdict
    bits. Only the bits ever go back on the wire.
    """

    def __init__(self, oracle: ComparisonOracle):
        self.oracle = oracle
        self._q: queue.Queue = queue.Queue()

    def put_values(self, values: list[int]) -> None:
        self._q.put(values)

    def verdicts(self, bounds: list[int]) -> list[bool]:
        values = self._q.get(timeout=120)
        if len(values) != len(bounds):
            raise ProtocolError("comparison volume mismatch")
        return [self.oracle.le(v, b) for v, b in zip(values, bounds)]


@dataclass
class _Shared:
    """State the harness wires across both party threads."""

    pub: object = None
    priv: object = None
    rendezvous: _Rendezvous | None = None


_KEY_CACHE: dict[int, tuple] = {}
_KEY_LOCK = threading.Lock()


def cached_keypair(bits: int):
    """Deterministic per-size keypair, generated once per process.

    Key generation dominates small ciphertext runs; reusing one key per
    size keeps tests affordable. Ciphertext randomness still comes from
    the run's own rng streams.
    """
    with _KEY_LOCK:
        if bits not in _KEY_CACHE:
            _KEY_CACHE[bits] = generate_keypair(bits, np.random.default_rng(0x90F7 + bits))
        return _KEY_CACHE[bits]


def _stable_seed(name: str, seed: int) -> np.random.SeedSequence:
    tag = int.from_bytes(sha256(name.encode()).digest()[:4], "big")
    return np.random.SeedSequence([tag, seed])


class _Party:
    """One end of the engine; role is "a" or "b"."""

    def __init__(
        self,
        role: str,
        chan: Channel,
        ds: Dataset,
        cfg: ProtocolConfig,
        rng: np.random.Generator,
        shared: _Shared,
    ):
        self.role = role
        self.is_a = role == "a"
        self.chan = chan
        self.ds = ds
        self.cfg = cfg
        self.rng = rng
        self.shared = shared
        self.rule = cfg.rule
        self.blocking = cfg.blocking
        # my bins
        self.my_real: dict[int, list[Record]] = {}
        self.my_members: dict[int, list[Record]] = {}  # crypto: reals + dummies
        self.my_pos: dict[int, dict[int, Record]] = {}  # bin -> pos -> real record
        self.my_rid_pos: dict[int, tuple[int, int]] = {}
        self.receipts: list[NoiseReceipt] = []
        # announced loads and removal state, for both sides
        self.loads: dict[str, dict[int, int]] = {}
        self.removed: dict[str, dict[int, set[int]]] = {"a": {}, "b": {}}
        # partner knowledge
        self.partner_recs: dict[int, Record] = {}
        self.partner_pos: dict[int, tuple[int, int]] = {}  # rid -> (bin, pos)
        self.partner_units: dict[int, list] = {}
        self.partner_plain: dict[int, dict[int, Record]] = {}
        self.revealed: set[int] = set()
        self._scanned: set[int] = set()  # partner rids the cascade digested
        self._all_reals: list[tuple[int, Record]] = []
        # outcome
        self.output: set[tuple[int, int]] = set()
        self.cost = 0
        self.cp_raw: list[tuple[int, int, frozenset]] = []

    # -- small helpers ------------------------------------------------------

    def _exchange(self, msg):
        """Symmetric one-for-one swap; Alice talks first."""
        if self.is_a:
            self.chan.send(msg)
            return self.chan.recv()
        got = self.chan.recv()
        self.chan.send(msg)
        return got

    def _remaining(self, side: str, bin_id: int) -> int:
        return self.loads[side].get(bin_id, 0) - len(self.removed[side].get(bin_id, ()))

    def _live_positions(self, side: str, bin_id: int) -> list[int]:
        gone = self.removed[side].get(bin_id, set())
        return [p for p in range(self.loads[side].get(bin_id, 0)) if p not in gone]

    def _remove(self, side: str, bin_id: int, pos: int) -> None:
        self.removed[side].setdefault(bin_id, set()).add(pos)

    def my_record(self, rid: int) -> Record:
        b, pos = self.my_rid_pos[rid]
        return self.my_pos[b][pos]

    # -- phases -------------------------------------------------------------

    def _block_and_pad(self) -> None:
        cfg = self.cfg
        table = self.blocking.assign_bins(self.ds)
        reals = {i: sorted(rs, key=lambda r: r.rid) for i, rs in table.items()}
        if cfg.rr:
            reals = rr_scatter(reals, self.blocking.k, cfg.eps, self.rng)
        parity = 1 if self.is_a else 0
        dummy_n = {i: 0 for i in reals}
        if cfg.noise == "truncated":
            dist = TruncatedLaplace(cfg.eps, cfg.delta, self.blocking.sensitivity())
            if cfg.mode == "fast":
                dummy_n, self.receipts = pad_counts(reals.keys(), dist, self.rng)
            else:
                padded, self.receipts = pad_bins(
                    reals, dist, self.rng, self.rule, parity, cfg.nbits
                )
                reals = {i: [r for r in rs if not r.is_dummy] for i, rs in padded.items()}
                self.my_members = {
                    i: sorted(rs, key=lambda r: r.rid) for i, rs in padded.items()
                }
        elif cfg.noise == "signed":
            dist = SignedLaplace(cfg.eps, self.blocking.sensitivity())
            padded, self.receipts = signed_pad_bins(
                reals, dist, self.rng, self.rule, parity, cfg.nbits
            )
            reals = {i: [r for r in rs if not r.is_dummy] for i, rs in padded.items()}
            self.my_members = {
                i: sorted(rs, key=lambda r: r.rid) for i, rs in padded.items()
            }
        elif cfg.noise != "zero":
            raise ProtocolError(f"unknown noise kind {cfg.noise!r}")
        self.my_real = reals
        if not self.my_members:
            # fast/zero path: no materialized dummies, members are the reals
            self.my_members = reals
        loads = {}
        for i in self.my_members:
            loads[i] = len(self.my_members[i])
            if cfg.mode == "fast" and cfg.noise == "truncated":
                loads[i] += dummy_n.get(i, 0)
        self.loads[self.role] = loads
        for i, members in self.my_members.items():
            at = {}
            for pos, r in enumerate(members):
                if not r.is_dummy:
                    at[pos] = r
                    self.my_rid_pos[r.rid] = (i, pos)
            self.my_pos[i] = at
        self._all_reals = sorted(
            ((r.rid, r) for rs in reals.values() for r in rs), key=lambda t: t[0]
        )

    def _announce(self) -> None:
        got = self._exchange(BinCountsAnnounce(self.role, self.loads[self.role]))
        other = "b" if self.is_a else "a"
        if got.party != other:
            raise ProtocolError("announcement from the wrong party")
        self.loads[other] = dict(got.counts)

    def _ship_records(self) -> None:
        """Alice's records cross once, up front; removals later only shrink
        which positions still get compared."""
        cfg = self.cfg
        if cfg.mode == "fast":
            if self.is_a:
                entries = [
                    (i, pos, r)
                    for i in sorted(self.my_pos)
                    for pos, r in sorted(self.my_pos[i].items())
                ]
                self.chan.send(EncRecordBatch(0, 0, records=entries))
            else:
                batch = self.chan.recv()
                for b, pos, r in batch.records or []:
                    self.partner_plain.setdefault(b, {})[pos] = r
                    self.partner_recs[r.rid] = r
                    self.partner_pos[r.rid] = (b, pos)
            return
        if self.is_a:
            for i in sorted(self.my_members):
                members = self.my_members[i]
                if not members:
                    continue
                units = [
                    encrypt_record(self.shared.pub, r, self.rule, self.rng)
                    for r in members
                ]
                self.chan.send(EncRecordBatch(i, 0, units=units))
        else:
            for i in sorted(self.loads["a"]):
                if self.loads["a"][i] == 0:
                    continue
                batch = self.chan.recv()
                if batch.bin_id != i or len(batch.units or []) != self.loads["a"][i]:
                    raise ProtocolError("record batch does not match announcement")
                self.partner_units[i] = batch.units

    def _verdict_round(self, i: int, j: int) -> list[tuple[int, int]]:
        """One bin pair: cost accounting plus the actual comparisons."""
        cfg = self.cfg
        live_a = self._live_positions("a", i)
        live_b = self._live_positions("b", j)
        n_pairs = len(live_a) * len(live_b)
        self.cost += n_pairs
        if n_pairs == 0:
            return []
        if cfg.mode == "fast":
            if self.is_a:
                return self.chan.recv().matches
            known_a = self.partner_plain.get(i, {})
            alist = [(pos, known_a[pos]) for pos in live_a if pos in known_a]
            gone = self.removed["b"].get(j, ())
            blist = [
                (pos, r)
                for pos, r in sorted(self.my_pos.get(j, {}).items())
                if pos not in gone
            ]
            matches = pair_matches(self.rule, alist, blist)
            self.chan.send(CompareVerdict(i, j, n_pairs, matches))
            return matches
        if self.is_a:
            msg = self.chan.recv()
            if len(msg.ciphers) != n_pairs:
                raise ProtocolError("comparison volume mismatch")
            values = [self.shared.priv.decrypt(c) for c in msg.ciphers]
            self.shared.rendezvous.put_values(values)
            return self.chan.recv().matches
        ciphers: list[int] = []
        bounds: list[int] = []
        labels: list[tuple[int, int]] = []
        units = self.partner_units.get(i, [])
        for pa in live_a:
            for pb in live_b:
                rec = self.my_members[j][pb]
                c, blind = blinded_distance(
                    self.shared.pub, units[pa], rec, self.rule, self.rng
                )
                ciphers.append(c)
                bounds.append(blind + self.rule.threshold)
                labels.append((pa, pb))
        self.chan.send(BlindedDistance(i, j, ciphers))
        flags = self.shared.rendezvous.verdicts(bounds)
        matches = []
        for (pa, pb), ok in zip(labels, flags):
            if ok:
                if self.my_members[j][pb].is_dummy:
                    raise ProtocolError("a dummy record matched")
                matches.append((pa, pb))
        matches.sort()
        self.chan.send(CompareVerdict(i, j, n_pairs, matches))
        return matches

    def _reveal_exchange(self, new_rids) -> None:
        """Swap plaintext for freshly matched records, Alice first.

        Matched records become mutual knowledge by design: each party
        learns the partner record it matched; the cascade feeds on exactly
        this set. Already revealed records are never resent.
        """
        entries = []
        for rid in sorted(new_rids):
            if rid in self.revealed:
                continue
            self.revealed.add(rid)
            b, pos = self.my_rid_pos[rid]
            entries.append((b, pos, self.my_pos[b][pos]))
        got = self._exchange(EncRecordBatch(0, 0, records=entries))
        for b, pos, r in got.records or []:
            self.partner_recs[r.rid] = r
            self.partner_pos[r.rid] = (b, pos)
            self.partner_plain.setdefault(b, {})[pos] = r

    def _pair_rids(self, i: int, j: int, matches) -> set[tuple[int, int]]:
        out = set()
        for pa, pb in matches:
            if self.is_a:
                a_rid = self.my_pos[i][pa].rid
                b_rid = self.partner_plain[j][pb].rid
            else:
                a_rid = self.partner_plain[i][pa].rid
                b_rid = self.my_pos[j][pb].rid
            out.add((a_rid, b_rid))
        return out

    def _mark_removed(self, pairs) -> None:
        my_side, other_side = ("a", "b") if self.is_a else ("b", "a")
        for a_rid, b_rid in pairs:
            my_rid, other_rid = (a_rid, b_rid) if self.is_a else (b_rid, a_rid)
            if my_rid in self.my_rid_pos:
                b, pos = self.my_rid_pos[my_rid]
                self._remove(my_side, b, pos)
            if other_rid in self.partner_pos:
                b, pos = self.partner_pos[other_rid]
                self._remove(other_side, b, pos)

    def _cascade(self) -> None:
        """Chase the closure: revealed partner records against all my reals.

        Already matched records stay in the pool on purpose: a revealed
        record can vouch for further partners, and dropping it would lose
        pairs the unsorted protocol finds. Each partner record needs one
        scan ever; my side of the pool never changes mid-run.
        """
        cap = sum(self.loads["a"].values()) + sum(self.loads["b"].values()) + 1
        for _ in range(cap):
            todo = [
                (rid, self.partner_recs[rid])
                for rid in sorted(self.partner_recs)
                if rid not in self._scanned
            ]
            self._scanned.update(rid for rid, _ in todo)
            fresh = set()
            for prid, mrid in pair_matches(self.rule, todo, self._all_reals):
                pair = (mrid, prid) if self.is_a else (prid, mrid)
                if pair not in self.output:
                    fresh.add(pair)
            got = self._exchange(MatchAnnounce(sorted(fresh)))
            new = (fresh | set(got.pairs)) - self.output
            if not new:
                return
            self.output |= new
            mine_new = [
                rid
                for pair in new
                if (rid := pair[0] if self.is_a else pair[1]) in self.my_rid_pos
            ]
            self._reveal_exchange(mine_new)
            self._mark_removed(new)
        raise ProtocolError("match cascade did not terminate")

    def _finish(self) -> None:
        digest = output_digest(self.output)
        try:
            if self.is_a:
                self.chan.send(MatchAnnounce(sorted(self.output)))
                sync = self.chan.recv()
                if sync.digest != digest or sync.size != len(self.output):
                    self.chan.send(Abort("output digest mismatch"))
                    raise OutputMismatch("output digest mismatch")
                self.chan.send(OutputSync(len(self.output), digest))
            else:
                ann = self.chan.recv()
                if set(ann.pairs) != self.output:
                    self.chan.send(Abort("output set mismatch"))
                    raise OutputMismatch("output set mismatch")
                self.chan.send(OutputSync(len(self.output), digest))
                self.chan.recv()
        except ChannelAbort as exc:
            raise OutputMismatch(exc.reason) from None

    def run(self) -> None:
        cfg = self.cfg
        self._block_and_pad()
        self._announce()
        pairs = self.blocking.strategy_pairs()
        if cfg.sp_stop is not None or cfg.sp_checkpoints:
            stop = cfg.sp_stop if cfg.sp_stop is not None else 0
            plan = sp_groups(self.loads["a"], self.loads["b"], pairs, stop)
        else:
            plan = [(None, sorted(pairs))]
        self._ship_records()
        for label, group in plan:
            for i, j in group:
                matches = self._verdict_round(i, j)
                if matches:
                    if self.is_a:
                        mine_new = sorted({self.my_pos[i][pa].rid for pa, _ in matches})
                    else:
                        mine_new = sorted({self.my_pos[j][pb].rid for _, pb in matches})
                    self._reveal_exchange(mine_new)
                    new_pairs = self._pair_rids(i, j, matches)
                    self.output |= new_pairs
                    if cfg.gmc:
                        self._mark_removed(new_pairs)
                        self._cascade()
            if label is not None:
                self.cp_raw.append((label, self.cost, frozenset(self.output)))
        self._finish()


# ---------------------------------------------------------------------------
# harness


def _make_channels(transport: str):
    if transport == "inproc":
        return inprocess_pair()
    if transport == "tcp":
        return tcp_pair()
    raise ValueError(f"unknown transport {transport!r}")


def _fold_width(cfg: ProtocolConfig, *datasets: Dataset) -> ProtocolConfig:
    if cfg.rule.variant != BITS:
        return cfg
    widths = {r.nbits for ds in datasets for r in ds.records}
    if len(widths) > 1:
        raise ValueError(f"mixed code widths {sorted(widths)}")
    if widths and widths != {cfg.nbits}:
        # dummies must be indistinguishable in shape from real codes
        cfg = replace(cfg, nbits=widths.pop())
    return cfg


def run_engine(
    name: str,
    ds_a: Dataset,
    ds_b: Dataset,
    cfg: ProtocolConfig,
    seed: int = 0,
    transport: str = "inproc",
) -> RunResult:
    """Drive both parties over a channel pair and assemble the result."""
    if cfg.blocking is None:
        raise ValueError("engine protocols need a blocking function")
    cfg = _fold_width(cfg, ds_a, ds_b)
    chan_a, chan_b, transcript = _make_channels(transport)
    rng_a, rng_b = (np.random.default_rng(s) for s in _stable_seed(name, seed).spawn(2))
    shared = _Shared()
    oracle = TrustedSimulator()
    if cfg.mode == "crypto":
        pub, priv = cached_keypair(cfg.key_bits)
        shared.pub, shared.priv = pub, priv
        shared.rendezvous = _Rendezvous(oracle)
    pa = _Party("a", chan_a, ds_a, cfg, rng_a, shared)
    pb = _Party("b", chan_b, ds_b, cfg, rng_b, shared)
    t0 = time.perf_counter()
    _drive_pair(pa, pb)
    wall_ms = (time.perf_counter() - t0) * 1e3
    if pa.output != pb.output or pa.cost != pb.cost:
        raise OutputMismatch("parties finished with different state")
    truth = plaintext_join(cfg.rule, ds_a, ds_b)
    checkpoints = [
        Checkpoint(p, c, pairs, recall(pairs, truth).value) for p, c, pairs in pa.cp_raw
    ]
    for want, have in zip(pa.cp_raw, pb.cp_raw):
        if want != have:
            raise OutputMismatch("checkpoint trajectories diverged")
    return RunResult(
        protocol=name,
        output=MatchOutput(frozenset(pa.output)),
        cost=pa.cost,
        recall=recall(pa.output, truth),
        precision=precision(pa.output, truth),
        truth_size=len(truth),
        transcript=transcript,
        receipts_a=pa.receipts,
        receipts_b=pb.receipts,
        checkpoints=checkpoints,
        wall_ms=wall_ms,
        seed=seed,
        mode=cfg.mode,
        oracle_queries=oracle.queries,
    )


@dataclass
class PartyResult:
    """What one endpoint of a split run knows when the protocol finishes."""

    role: str
    output: frozenset
    cost: int
    receipts: list[NoiseReceipt]
    wall_ms: float


def run_party(
    name: str,
    role: str,
    ds: Dataset,
    cfg: ProtocolConfig,
    chan: Channel,
    seed: int = 0,
) -> PartyResult:
    """Run one endpoint over an externally supplied channel.

    For genuine two-process runs: each side calls this with its own dataset
    and a connected channel, and both must agree on (name, cfg, seed) out of
    band. Crypto mode needs the in-process key rendezvous, so split runs are
    fast-mode only. Recall is not computed here; the caller owns evaluation.
    """
    if cfg.blocking is None:
        raise ValueError("engine protocols need a blocking function")
    if cfg.mode == "crypto":
        raise ValueError("split runs are fast-mode only; crypto needs one process")
    if role not in ("a", "b"):
        raise ValueError(f"role must be 'a' or 'b', got {role!r}")
    cfg = _fold_width(cfg, ds)
    streams = _stable_seed(name, seed).spawn(2)
    rng = np.random.default_rng(streams[0 if role == "a" else 1])
    party = _Party(role, chan, ds, cfg, rng, _Shared())
    t0 = time.perf_counter()
    party.run()
    wall_ms = (time.perf_counter() - t0) * 1e3
    return PartyResult(role, frozenset(party.output), party.cost, party.receipts, wall_ms)


def drive_parties(run_a, run_b, chan_a: Channel, chan_b: Channel) -> None:
    """Run both party callables to completion; on failure, poison the peer.

    A failing party pushes an abort frame before dying so the peer's next
    recv raises instead of blocking forever; the original exception, not
    the induced abort, is what propagates to the caller.
    """
    errors: dict[str, BaseException] = {}

    def _drive(role: str, fn, chan: Channel):
        try:
            fn()
        except BaseException as exc:
            errors[role] = exc
            try:
                chan.send(Abort(f"{role}: {exc}"))
            except Exception:
                pass

    ta = threading.Thread(target=_drive, args=("a", run_a, chan_a), daemon=True)
    tb = threading.Thread(target=_drive, args=("b", run_b, chan_b), daemon=True)
    ta.start()
    tb.start()
    ta.join(timeout=600)
    tb.join(timeout=600)
    if ta.is_alive() or tb.is_alive():
        raise ProtocolError("party thread hung")
    if errors:
        for exc in errors.values():
            if not isinstance(exc, ChannelAbort):
                raise exc
        raise next(iter(errors.values()))


def _drive_pair(pa: _Party, pb: _Party) -> None:
    drive_parties(pa.run, pb.run, pa.chan, pb.chan)

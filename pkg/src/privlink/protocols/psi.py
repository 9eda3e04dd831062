"""Private set intersection over record keys, with optional expansion.

The exact protocol packs each record into one integer key and intersects
the key sets through encrypted bucket polynomials: Alice sends encrypted
coefficients whose roots are her keys, Bob returns each of his keys masked
as r * p(b) + b, and only intersection members decrypt back to a key Alice
knows. Leaked information is the set sizes; the wire work is one ciphertext
per coefficient plus one per Bob record, which is what the cost counter
bills.

Expansion turns similarity into intersection: Alice inserts every key
within the match radius of each record, so a fuzzy match of the distance
rule becomes an exact hit on some expanded key. The blow-up factor gamma
(Hamming ball or lattice disk size) decides whether that trade is sane;
callers get an ExpansionOverflow instead of a silent monster query.
"""

from __future__ import annotations

import math
import time

import numpy as np

from ..blocking import TAXI_LAT0, TAXI_LON0
from ..crypto import (
    PsiQuery,
    PsiResponse,
    disk_lattice_size,
    expand_hamming_ball,
    hamming_ball_size,
    psi_extract,
    psi_prepare,
    psi_respond,
)
from ..model import (
    BITS,
    Dataset,
    MatchOutput,
    MatchRule,
    Record,
    plaintext_join,
    precision,
    recall,
)
from ..transport import (
    Abort,
    BinCountsAnnounce,
    BlindedDistance,
    ChannelAbort,
    MatchAnnounce,
    OutputSync,
)
from .common import (
    OutputMismatch,
    ProtocolConfig,
    ProtocolError,
    RunResult,
    _make_channels,
    _stable_seed,
    cached_keypair,
    drive_parties,
    output_digest,
)


class ExpansionOverflow(ProtocolError):
    """The expansion budget cannot cover radius x record volume."""


# total expanded keys a query may hold before the trade stops making sense
DEFAULT_EXPANSION_BUDGET = 250_000

_GRID_BIAS = 1 << 19  # keeps spatial offsets nonnegative after expansion
_KEY_BITS_PAYLOAD = 50


def record_key(rule: MatchRule, r: Record) -> int:
    """Pack a record into one integer; equal keys == exact-equality match."""
    ks = r.day * 32 + r.slot
    if rule.variant == BITS:
        if r.nbits > _KEY_BITS_PAYLOAD:
            raise ValueError(f"{r.nbits} payload bits exceed {_KEY_BITS_PAYLOAD}")
        return (ks << _KEY_BITS_PAYLOAD) | r.bits
    dlat = r.lat_e6 - TAXI_LAT0 + _GRID_BIAS
    dlon = r.lon_e6 - TAXI_LON0 + _GRID_BIAS
    if not (0 <= dlat < 1 << 20 and 0 <= dlon < 1 << 20):
        raise ValueError("coordinates leave the supported bounding box")
    return (ks << 40) | (dlat << 20) | dlon


def expansion_factor(rule: MatchRule, nbits: int, radius: int) -> int:
    """Keys per record after expansion: ball size for payload-bit rules,
    lattice disk size for planar ones; a radius of 0 expands nothing."""
    if radius == 0:
        return 1
    if rule.variant == BITS:
        return hamming_ball_size(nbits, radius)
    return disk_lattice_size(radius)


def expand_record_keys(rule: MatchRule, r: Record, radius: int) -> list[int]:
    """Every key whose record would match r under the rule's distance."""
    base = record_key(rule, r)
    if radius == 0:
        return [base]
    if rule.variant == BITS:
        prefix = base >> _KEY_BITS_PAYLOAD << _KEY_BITS_PAYLOAD
        return [prefix | e for e in expand_hamming_ball(r.bits, r.nbits, radius)]
    out = []
    for u in range(-radius, radius + 1):
        span = math.isqrt(radius * radius - u * u)
        for v in range(-span, span + 1):
            out.append(base + (u << 20) + v)
    return out


def _alice(chan, ds: Dataset, rule: MatchRule, radius: int, priv, rng, state) -> None:
    origins: dict[int, list[int]] = {}
    for r in sorted(ds.records, key=lambda r: r.rid):
        for key in expand_record_keys(rule, r, radius):
            origins.setdefault(key, []).append(r.rid)
    unique = sorted(origins)
    chan.send(BinCountsAnnounce("a", {0: len(ds)}))
    chan.recv()
    query = psi_prepare(priv.public, unique, rng)
    for idx, coeffs in enumerate(query.coeffs):
        chan.send(BlindedDistance(idx, query.nbuckets, coeffs))
    resp = chan.recv()
    hits = psi_extract(priv, PsiResponse(list(resp.ciphers)), unique)
    announce = sorted((rid, key) for key in hits for rid in origins[key])
    chan.send(MatchAnnounce(announce))
    final = set(chan.recv().pairs)
    state["output"] = final
    try:
        chan.send(OutputSync(len(final), output_digest(final)))
        chan.recv()
    except ChannelAbort as exc:
        raise OutputMismatch(exc.reason) from None


def _bob(chan, ds: Dataset, rule: MatchRule, pub, rng, state) -> None:
    chan.recv()
    chan.send(BinCountsAnnounce("b", {0: len(ds)}))
    keymap: dict[int, list[int]] = {}
    ordered = sorted(ds.records, key=lambda r: r.rid)
    for r in ordered:
        keymap.setdefault(record_key(rule, r), []).append(r.rid)
    first = chan.recv()
    nbuckets = first.pair_bin
    batches = [first] + [chan.recv() for _ in range(nbuckets - 1)]
    batches.sort(key=lambda b: b.bin_id)
    if [b.bin_id for b in batches] != list(range(nbuckets)):
        raise ProtocolError("bucket polynomials arrived inconsistently")
    query = PsiQuery(nbuckets, [list(b.ciphers) for b in batches])
    response = psi_respond(pub, query, [record_key(rule, r) for r in ordered], rng)
    chan.send(BlindedDistance(0, 0, response.responses))
    announced = chan.recv().pairs
    final = {
        (aid, brid) for aid, key in announced for brid in keymap.get(key, ())
    }
    state["output"] = final
    chan.send(MatchAnnounce(sorted(final)))
    sync = chan.recv()
    if sync.digest != output_digest(final) or sync.size != len(final):
        chan.send(Abort("intersection outputs disagree"))
        raise OutputMismatch("intersection outputs disagree")
    chan.send(OutputSync(len(final), sync.digest))


def _run_psi_family(
    name: str,
    ds_a: Dataset,
    ds_b: Dataset,
    cfg: ProtocolConfig,
    seed: int,
    transport: str,
    radius: int,
    budget: int,
) -> RunResult:
    rule = cfg.rule
    nbits = cfg.nbits
    if rule.variant == BITS:
        widths = {r.nbits for r in ds_a.records} | {r.nbits for r in ds_b.records}
        if len(widths) > 1:
            raise ValueError(f"mixed code widths {sorted(widths)}")
        if widths:
            nbits = widths.pop()
    gamma = expansion_factor(rule, nbits, radius)
    if gamma * max(len(ds_a), 1) > budget:
        raise ExpansionOverflow(
            f"{gamma} keys per record x {len(ds_a)} records exceeds the "
            f"{budget} expansion budget"
        )
    chan_a, chan_b, transcript = _make_channels(transport)
    rng_a, rng_b = (np.random.default_rng(s) for s in _stable_seed(name, seed).spawn(2))
    pub, priv = cached_keypair(cfg.key_bits)
    state_a: dict = {}
    state_b: dict = {}
    t0 = time.perf_counter()
    drive_parties(
        lambda: _alice(chan_a, ds_a, rule, radius, priv, rng_a, state_a),
        lambda: _bob(chan_b, ds_b, rule, pub, rng_b, state_b),
        chan_a,
        chan_b,
    )
    wall_ms = (time.perf_counter() - t0) * 1e3
    if state_a.get("output") != state_b.get("output"):
        raise OutputMismatch("parties finished with different state")
    output = state_a["output"]
    truth = plaintext_join(rule, ds_a, ds_b)
    return RunResult(
        protocol=name,
        output=MatchOutput(frozenset(output)),
        cost=transcript.cipher_total,
        recall=recall(output, truth),
        precision=precision(output, truth),
        truth_size=len(truth),
        transcript=transcript,
        receipts_a=[],
        receipts_b=[],
        checkpoints=[],
        wall_ms=wall_ms,
        seed=seed,
        mode="crypto",
        gamma=gamma,
    )


def run_psi(
    ds_a: Dataset,
    ds_b: Dataset,
    cfg: ProtocolConfig,
    seed: int = 0,
    transport: str = "inproc",
) -> RunResult:
    """Exact-equality intersection; finds only duplicates, never fuzz."""
    return _run_psi_family("psi", ds_a, ds_b, cfg, seed, transport, 0, 1 << 62)


def run_psix(
    ds_a: Dataset,
    ds_b: Dataset,
    cfg: ProtocolConfig,
    seed: int = 0,
    transport: str = "inproc",
    budget: int = DEFAULT_EXPANSION_BUDGET,
) -> RunResult:
    """Similarity join by expanding every key to its match neighborhood."""
    return _run_psi_family(
        "psix", ds_a, ds_b, cfg, seed, transport, cfg.rule.theta, budget
    )

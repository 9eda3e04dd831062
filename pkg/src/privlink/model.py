"""Records, datasets, match rules, and the plaintext join oracle.

Two payload variants are supported: grid points (fixed-point coordinates in
micro-degrees plus a day/hour stamp) and bit vectors (product fingerprints
plus a day/brand stamp). A match rule pairs a distance with a threshold and
an equality key; two records match when the key agrees and the distance does
not exceed the threshold. All distances are computed in exact integer
arithmetic so that the plaintext evaluation and the encrypted evaluation can
never disagree by rounding.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator

GRID = "grid"
BITS = "bits"

# Sentinel distance returned for pairs that can never match (dummy records,
# mixed payload variants). Larger than any representable threshold.
NEVER_MATCH = 1 << 62


@dataclass(frozen=True)
class Record:
    """One party's record.

    rid:    integer id, unique within its dataset. Real records use ids >= 0;
            padding dummies draw from the negative range so a collision with
            a real id is structurally impossible.
    day:    day index, 0-based.
    slot:   hour (grid variant) or brand (bits variant).
    lat_e6, lon_e6: fixed-point coordinates, degrees * 1e6 (grid variant).
    bits, nbits:    fingerprint as an int plus its width (bits variant).
    vtag:   hidden domain tag. 0 for every real record; dummies carry a value
            whose squared difference from any other record's tag exceeds the
            match threshold, so a dummy can never match anything.
    """

    rid: int
    variant: str
    day: int
    slot: int
    lat_e6: int = 0
    lon_e6: int = 0
    bits: int = 0
    nbits: int = 0
    vtag: int = 0

    @property
    def is_dummy(self) -> bool:
        return self.rid < 0


@dataclass
class Dataset:
    """An ordered collection of records belonging to one party."""

    name: str
    variant: str
    records: list[Record] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[Record]:
        return iter(self.records)

    def by_id(self) -> dict[int, Record]:
        return {r.rid: r for r in self.records}

    def validate(self) -> None:
        seen: set[int] = set()
        for r in self.records:
            if r.variant != self.variant:
                raise ValueError(
                    f"record {r.rid} has variant {r.variant!r}, dataset is {self.variant!r}"
                )
            if r.rid in seen:
                raise ValueError(f"duplicate record id {r.rid}")
            seen.add(r.rid)


@dataclass(frozen=True)
class MatchRule:
    """Distance rule: key equality plus a thresholded distance.

    kind "euclid": same (day, hour) and squared planar distance <= theta^2,
    theta in micro-degrees.
    kind "hamming": same (day, brand) and Hamming distance <= theta.
    """

    kind: str
    theta: int

    @property
    def variant(self) -> str:
        return GRID if self.kind == "euclid" else BITS

    @property
    def threshold(self) -> int:
        """Threshold for the combined integer distance (see distance())."""
        return self.theta * self.theta if self.kind == "euclid" else self.theta

    @property
    def key_weight(self) -> int:
        # Weight for the folded (day, slot) key coordinate: any key mismatch
        # must contribute more than the threshold on its own, so the smallest
        # w with w*w > threshold.
        return math.isqrt(self.threshold) + 1

    def key_coord(self, r: Record) -> int:
        return (r.day * 32 + r.slot) * self.key_weight


def distance(rule: MatchRule, a: Record, b: Record) -> int:
    """Combined integer distance; match iff distance <= rule.threshold.

    The day/slot key and the hidden domain tag are folded in as squared
    coordinates, so a key mismatch or a dummy participant always pushes the
    value past the threshold. This is the same accumulation the encrypted
    comparison performs, term for term.
    """
    if a.variant != b.variant or a.variant != rule.variant:
        return NEVER_MATCH
    dk = a.day * 32 + a.slot - (b.day * 32 + b.slot)
    d = (dk * rule.key_weight) ** 2 + (a.vtag - b.vtag) ** 2
    if rule.kind == "euclid":
        d += (a.lat_e6 - b.lat_e6) ** 2 + (a.lon_e6 - b.lon_e6) ** 2
    else:
        d += (a.bits ^ b.bits).bit_count()
    return d


def evaluate_match(rule: MatchRule, a: Record, b: Record) -> bool:
    return distance(rule, a, b) <= rule.threshold


def plaintext_join(rule: MatchRule, da: Dataset, db: Dataset) -> set[tuple[int, int]]:
    """Exhaustive join; the ground-truth oracle for every protocol.

    Grouping by the exact-equality key is only a shortcut: records in
    different key groups are non-matches by definition of the rule.
    """
    groups: dict[tuple[int, int], list[Record]] = {}
    for b in db.records:
        if not b.is_dummy:
            groups.setdefault((b.day, b.slot), []).append(b)
    out: set[tuple[int, int]] = set()
    for a in da.records:
        if a.is_dummy:
            continue
        for b in groups.get((a.day, a.slot), ()):
            if evaluate_match(rule, a, b):
                out.add((a.rid, b.rid))
    return out


@dataclass(frozen=True)
class MatchOutput:
    """Protocol output: the set of announced (id_a, id_b) pairs."""

    pairs: frozenset[tuple[int, int]]

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class RecallValue:
    value: float
    undefined: bool = False

    def __float__(self) -> float:
        return self.value


def recall(output: Iterable[tuple[int, int]], truth: set[tuple[int, int]]) -> RecallValue:
    """Fraction of true pairs recovered.

    An empty ground truth makes the ratio undefined; by convention the value
    is 1.0 with undefined=True so downstream aggregation keeps working.
    """
    if not truth:
        return RecallValue(1.0, undefined=True)
    hit = sum(1 for p in output if p in truth)
    return RecallValue(hit / len(truth))


def precision(output: Iterable[tuple[int, int]], truth: set[tuple[int, int]]) -> RecallValue:
    pairs = list(output)
    if not pairs:
        return RecallValue(1.0, undefined=True)
    hit = sum(1 for p in pairs if p in truth)
    return RecallValue(hit / len(pairs))


# ---------------------------------------------------------------------------
# Dataset files: one record per line, a header naming the payload variant.

_GRID_COLS = ["id", "lat_e6", "lon_e6", "day", "hour"]
_BITS_COLS = ["id", "bits_hex", "day", "brand"]


def write_dataset(ds: Dataset, path: str) -> None:
    with open(path, "w", encoding="ascii") as f:
        dump_dataset(ds, f)


def dump_dataset(ds: Dataset, f: io.TextIOBase) -> None:
    f.write(f"# privlink-dataset v1 variant={ds.variant} name={ds.name}\n")
    cols = _GRID_COLS if ds.variant == GRID else _BITS_COLS
    f.write(",".join(cols) + "\n")
    for r in ds.records:
        if ds.variant == GRID:
            f.write(f"{r.rid},{r.lat_e6},{r.lon_e6},{r.day},{r.slot}\n")
        else:
            width = max(1, (r.nbits + 3) // 4)
            f.write(f"{r.rid},{r.bits:0{width}x},{r.day},{r.slot}\n")


def read_dataset(path: str, nbits: int = 50) -> Dataset:
    with open(path, "r", encoding="ascii") as f:
        return load_dataset(f, nbits=nbits)


def load_dataset(f: io.TextIOBase, nbits: int = 50) -> Dataset:
    head = f.readline().strip()
    if not head.startswith("# privlink-dataset v1"):
        raise ValueError(f"not a dataset file (header {head!r})")
    fields = dict(tok.split("=", 1) for tok in head.split()[2:] if "=" in tok)
    variant = fields.get("variant", "")
    if variant not in (GRID, BITS):
        raise ValueError(f"unknown payload variant {variant!r}")
    cols = f.readline().strip().split(",")
    want = _GRID_COLS if variant == GRID else _BITS_COLS
    if cols != want:
        raise ValueError(f"column header {cols} != {want}")
    ds = Dataset(name=fields.get("name", "dataset"), variant=variant)
    for line in f:
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if variant == GRID:
            rid, lat, lon, day, hour = (int(x) for x in parts)
            ds.records.append(Record(rid, GRID, day, hour, lat_e6=lat, lon_e6=lon))
        else:
            rid = int(parts[0])
            bits = int(parts[1], 16)
            day, brand = int(parts[2]), int(parts[3])
            ds.records.append(Record(rid, BITS, day, brand, bits=bits, nbits=nbits))
    ds.validate()
    return ds


def strip_dummies(ds: Dataset) -> Dataset:
    return replace(ds, records=[r for r in ds.records if not r.is_dummy])

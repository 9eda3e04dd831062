"""Synthetic benchmark inputs: city pickup points and product fingerprints.

Two families:

- taxi: per-day pickup locations over a fixed bounding box. Cell popularity
  follows a rank power law along a serpentine walk of a 16x16 grid, rolled
  to a random anchor per seed, so hot cells cluster spatially and the
  hotspot moves between seeds; positions are uniform inside a cell, and
  skew=0 turns the clustering off entirely. The partner set jitters every
  point uniformly on the [-theta, theta]^2 square, clamped to the box. A
  jittered point can land just outside the Euclidean matching ball of its
  origin, so ground truth is always recomputed by the exhaustive oracle,
  never assumed to be the identity pairing.
- ab: per-day product codes with a brand stamp. A controlled fraction of
  partner records are near duplicates (at most theta bit flips of their
  origin, same day and brand); the rest are fresh draws.

Record ids are 0..n-1 on the first side and 1_000_000+i on the second, so
any id collision between the sides is structurally impossible.
"""

from __future__ import annotations

import numpy as np

from .blocking import TAXI_LAT0, TAXI_LAT1, TAXI_LON0, TAXI_LON1
from .model import BITS, GRID, Dataset, MatchRule, Record, plaintext_join

TAXI_THETA = 1_000  # micro-degrees
AB_THETA = 5
AB_BITS = 50
AB_BRANDS = 16

B_TAG = 1_000_000


def taxi_rule(theta: int = TAXI_THETA) -> MatchRule:
    return MatchRule(kind="euclid", theta=theta)


def ab_rule(theta: int = AB_THETA) -> MatchRule:
    return MatchRule(kind="hamming", theta=theta)


def _serpentine_order(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Cells by popularity rank: a boustrophedon walk, randomly re-anchored.

    Rolling the walk (and flipping its direction half the time) moves the
    hottest cell anywhere along the path while keeping popular cells
    spatially contiguous, which is what makes pruning cold bins cheap.
    """
    path = []
    for r in range(rows):
        cs = range(cols) if r % 2 == 0 else range(cols - 1, -1, -1)
        path.extend(r * cols + c for c in cs)
    walk = np.array(path)
    walk = np.roll(walk, int(rng.integers(rows * cols)))
    if rng.random() < 0.5:
        walk = walk[::-1]
    return walk


def gen_taxi(
    t_days: int = 1,
    per_day: int = 3_000,
    theta: int = TAXI_THETA,
    seed: int = 0,
    skew: float = 2.0,
    rows: int = 16,
    cols: int = 16,
) -> tuple[Dataset, Dataset, set[tuple[int, int]]]:
    """Pickup points plus a jittered partner copy and the exact truth set."""
    if per_day < 1:
        raise ValueError("per_day must be positive")
    rng = np.random.default_rng(seed)
    n = t_days * per_day
    ncells = rows * cols

    if skew > 0:
        order = _serpentine_order(rows, cols, rng)
        ranked = (np.arange(ncells) + 1.0) ** -skew
        weights = np.empty(ncells)
        weights[order] = ranked
        weights /= weights.sum()
        cells = rng.choice(ncells, size=n, p=weights)
    else:
        cells = rng.integers(0, ncells, size=n)

    r, c = np.divmod(cells, cols)
    lat_span = TAXI_LAT1 - TAXI_LAT0
    lon_span = TAXI_LON1 - TAXI_LON0
    lat = TAXI_LAT0 + ((r + rng.random(n)) * lat_span / rows).astype(np.int64)
    lon = TAXI_LON0 + ((c + rng.random(n)) * lon_span / cols).astype(np.int64)
    day = rng.integers(0, t_days, size=n)
    slot = rng.integers(0, 24, size=n)

    jlat = np.clip(lat + rng.integers(-theta, theta + 1, size=n), TAXI_LAT0, TAXI_LAT1)
    jlon = np.clip(lon + rng.integers(-theta, theta + 1, size=n), TAXI_LON0, TAXI_LON1)

    recs_a = [
        Record(rid=i, variant=GRID, day=int(day[i]), slot=int(slot[i]),
               lat_e6=int(lat[i]), lon_e6=int(lon[i]))
        for i in range(n)
    ]
    recs_b = [
        Record(rid=B_TAG + i, variant=GRID, day=int(day[i]), slot=int(slot[i]),
               lat_e6=int(jlat[i]), lon_e6=int(jlon[i]))
        for i in range(n)
    ]
    ds_a = Dataset(name="taxi-a", variant=GRID, records=recs_a)
    ds_b = Dataset(name="taxi-b", variant=GRID, records=recs_b)
    truth = plaintext_join(taxi_rule(theta), ds_a, ds_b)
    return ds_a, ds_b, truth


def gen_ab(
    t_days: int = 1,
    per_day: int = 500,
    bits: int = AB_BITS,
    theta: int = AB_THETA,
    brands: int = AB_BRANDS,
    seed: int = 0,
    dup_rate: float = 0.5,
) -> tuple[Dataset, Dataset, set[tuple[int, int]]]:
    """Product fingerprints plus a partner set with controlled duplicates."""
    if per_day < 1:
        raise ValueError("per_day must be positive")
    rng = np.random.default_rng(seed)
    n = t_days * per_day

    def fresh(rid: int) -> Record:
        return Record(
            rid=rid,
            variant=BITS,
            day=int(rng.integers(0, t_days)),
            slot=int(rng.integers(0, brands)),
            bits=int(rng.integers(0, 1 << bits)),
            nbits=bits,
        )

    recs_a = [fresh(i) for i in range(n)]
    recs_b = []
    for i, origin in enumerate(recs_a):
        if rng.random() < dup_rate:
            code = origin.bits
            nflips = int(rng.integers(0, theta + 1))
            for pos in rng.choice(bits, size=nflips, replace=False):
                code ^= 1 << int(pos)
            recs_b.append(
                Record(rid=B_TAG + i, variant=BITS, day=origin.day,
                       slot=origin.slot, bits=code, nbits=bits)
            )
        else:
            recs_b.append(fresh(B_TAG + i))
    ds_a = Dataset(name="ab-a", variant=BITS, records=recs_a)
    ds_b = Dataset(name="ab-b", variant=BITS, records=recs_b)
    truth = plaintext_join(ab_rule(theta), ds_a, ds_b)
    return ds_a, ds_b, truth


# ---------------------------------------------------------------------------
# ground-truth files, the third artifact next to the two dataset files

def write_truth(truth: set[tuple[int, int]], path: str) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write("# privlink-truth v1\n")
        f.write("rid_a,rid_b\n")
        for a, b in sorted(truth):
            f.write(f"{a},{b}\n")


def read_truth(path: str) -> set[tuple[int, int]]:
    with open(path, "r", encoding="ascii") as f:
        head = f.readline().strip()
        if head != "# privlink-truth v1":
            raise ValueError(f"not a truth file (header {head!r})")
        f.readline()
        out: set[tuple[int, int]] = set()
        for line in f:
            line = line.strip()
            if not line:
                continue
            a, b = line.split(",")
            out.add((int(a), int(b)))
        return out

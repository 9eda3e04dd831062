"""Shared dataset builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from privlink.blocking import TAXI_LAT0, TAXI_LAT1, TAXI_LON0, TAXI_LON1
from privlink.model import BITS, GRID, Dataset, Record


def make_grid_dataset(n: int, seed: int, days: int = 2, tag: int = 0, name: str = "a") -> Dataset:
    rng = np.random.default_rng(seed)
    recs = [
        Record(
            rid=i + tag,
            variant=GRID,
            day=int(rng.integers(0, days)),
            slot=int(rng.integers(0, 24)),
            lat_e6=int(rng.integers(TAXI_LAT0, TAXI_LAT1)),
            lon_e6=int(rng.integers(TAXI_LON0, TAXI_LON1)),
        )
        for i in range(n)
    ]
    return Dataset(name=name, variant=GRID, records=recs)


def perturb_grid(
    ds: Dataset,
    seed: int,
    match_frac: float = 0.5,
    radius: int = 400,
    days: int = 2,
    tag: int = 50_000,
    name: str = "b",
) -> Dataset:
    """Partner dataset: a fraction of near-duplicates, the rest resampled."""
    rng = np.random.default_rng(seed)
    recs = []
    for r in ds.records:
        if rng.random() < match_frac:
            recs.append(
                Record(
                    rid=r.rid + tag,
                    variant=GRID,
                    day=r.day,
                    slot=r.slot,
                    lat_e6=r.lat_e6 + int(rng.integers(-radius, radius + 1)),
                    lon_e6=r.lon_e6 + int(rng.integers(-radius, radius + 1)),
                )
            )
        else:
            recs.append(
                Record(
                    rid=r.rid + tag,
                    variant=GRID,
                    day=int(rng.integers(0, days)),
                    slot=int(rng.integers(0, 24)),
                    lat_e6=int(rng.integers(TAXI_LAT0, TAXI_LAT1)),
                    lon_e6=int(rng.integers(TAXI_LON0, TAXI_LON1)),
                )
            )
    return Dataset(name=name, variant=GRID, records=recs)


def make_bits_dataset(
    n: int,
    seed: int,
    nbits: int = 50,
    days: int = 2,
    slots: int = 4,
    tag: int = 0,
    name: str = "a",
) -> Dataset:
    rng = np.random.default_rng(seed)
    recs = [
        Record(
            rid=i + tag,
            variant=BITS,
            day=int(rng.integers(0, days)),
            slot=int(rng.integers(0, slots)),
            bits=int(rng.integers(0, 1 << nbits)),
            nbits=nbits,
        )
        for i in range(n)
    ]
    return Dataset(name=name, variant=BITS, records=recs)


def flip_bits(
    ds: Dataset,
    seed: int,
    match_frac: float = 0.5,
    flips: int = 2,
    tag: int = 50_000,
    name: str = "b",
) -> Dataset:
    """Partner codes: a fraction within `flips` bit flips, the rest random."""
    rng = np.random.default_rng(seed)
    recs = []
    for r in ds.records:
        if rng.random() < match_frac:
            bits = r.bits
            for pos in rng.choice(r.nbits, size=rng.integers(0, flips + 1), replace=False):
                bits ^= 1 << int(pos)
            recs.append(
                Record(
                    rid=r.rid + tag,
                    variant=BITS,
                    day=r.day,
                    slot=r.slot,
                    bits=bits,
                    nbits=r.nbits,
                )
            )
        else:
            recs.append(
                Record(
                    rid=r.rid + tag,
                    variant=BITS,
                    day=r.day,
                    slot=r.slot,
                    bits=int(rng.integers(0, 1 << r.nbits)),
                    nbits=r.nbits,
                )
            )
    return Dataset(name=name, variant=BITS, records=recs)


@pytest.fixture(scope="session")
def grid_pair():
    ds_a = make_grid_dataset(40, 131)
    ds_b = perturb_grid(ds_a, 132)
    return ds_a, ds_b


@pytest.fixture(scope="session")
def bits_pair():
    ds_a = make_bits_dataset(30, 141, nbits=8)
    ds_b = flip_bits(ds_a, 142, tag=9_000)
    return ds_a, ds_b

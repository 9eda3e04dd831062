"""Blocking with noisy padded bin counts.

The main protocol: both parties bin their records, pad every bin with
enough dummies that the announced counts are differentially private with
respect to swapping one non-matching record, then compare candidate bin
pairs under encryption. Sorting (process heavy bin pairs first, optionally
stop at a count percentile) and match-driven cleaning (drop matched records
from later bins, chase the closure of revealed records) are opt-in refinements
on the same engine.

The "signed" variant pads with zero-mean noise whose negative draws
suppress records. Its announced counts pass a per-bin ratio check, yet the
full output is not private; the audit module constructs the witness pair.
"""

from __future__ import annotations

from dataclasses import replace

from ..blocking import GridBlocking
from ..model import Dataset
from .common import ProtocolConfig, RunResult, run_engine


def _with_blocking(cfg: ProtocolConfig) -> ProtocolConfig:
    if cfg.blocking is None:
        cfg = replace(cfg, blocking=GridBlocking())
    return cfg


def lp_config(cfg: ProtocolConfig) -> ProtocolConfig:
    cfg = _with_blocking(replace(cfg, rr=False))
    if cfg.noise == "signed":
        cfg = replace(cfg, noise="truncated")
    return cfg


def run_lp(
    ds_a: Dataset,
    ds_b: Dataset,
    cfg: ProtocolConfig,
    seed: int = 0,
    transport: str = "inproc",
) -> RunResult:
    return run_engine("lp", ds_a, ds_b, lp_config(cfg), seed, transport)


def lp2_config(cfg: ProtocolConfig) -> ProtocolConfig:
    return _with_blocking(replace(cfg, noise="signed", rr=False))


def run_lp2(
    ds_a: Dataset,
    ds_b: Dataset,
    cfg: ProtocolConfig,
    seed: int = 0,
    transport: str = "inproc",
) -> RunResult:
    return run_engine("lp2", ds_a, ds_b, lp2_config(cfg), seed, transport)

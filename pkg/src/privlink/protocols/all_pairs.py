"""All-pairs comparison: the no-blocking baseline.

Everything lands in one bin and the strategy compares the full cross
product, so the cost is exactly |D_A| * |D_B| and the output equals the
plaintext join. This is the quadratic yardstick the blocking protocols
are measured against.
"""

from __future__ import annotations

from dataclasses import replace

from ..blocking import SingleBinBlocking
from ..model import Dataset
from .common import ProtocolConfig, RunResult, run_engine


def apc_config(cfg: ProtocolConfig) -> ProtocolConfig:
    return replace(
        cfg,
        blocking=SingleBinBlocking(),
        noise="zero",
        sp_stop=None,
        sp_checkpoints=False,
        gmc=False,
        rr=False,
    )


def run_apc(
    ds_a: Dataset,
    ds_b: Dataset,
    cfg: ProtocolConfig,
    seed: int = 0,
    transport: str = "inproc",
) -> RunResult:
    return run_engine("apc", ds_a, ds_b, apc_config(cfg), seed, transport)

"""Protocol registry: one uniform entry point per linkage protocol.

Every runner takes (ds_a, ds_b, cfg, seed, transport) and returns a
RunResult; run() dispatches by name. The engine-based protocols share the
message flow in common; the intersection family has its own.
"""

from .all_pairs import apc_config, run_apc
from .common import (
    Checkpoint,
    OutputMismatch,
    PartyResult,
    ProtocolConfig,
    ProtocolError,
    RunResult,
    blocked_join,
    run_engine,
    run_party,
)
from .laplace import lp2_config, lp_config, run_lp, run_lp2
from .psi import ExpansionOverflow, run_psi, run_psix
from .randomized import rr_config, run_rr

PROTOCOLS = {
    "apc": run_apc,
    "lp": run_lp,
    "lp2": run_lp2,
    "rr": run_rr,
    "psi": run_psi,
    "psix": run_psix,
}

# cfg normalizers for the engine family, for callers that split the run
# across two processes and must agree on the effective config up front
CONFIGS = {
    "apc": apc_config,
    "lp": lp_config,
    "lp2": lp2_config,
    "rr": rr_config,
}


def run(
    name: str, ds_a, ds_b, cfg: ProtocolConfig, seed: int = 0, transport: str = "inproc"
) -> RunResult:
    try:
        runner = PROTOCOLS[name]
    except KeyError:
        raise ValueError(f"unknown protocol {name!r}") from None
    return runner(ds_a, ds_b, cfg, seed=seed, transport=transport)


__all__ = [
    "CONFIGS",
    "Checkpoint",
    "ExpansionOverflow",
    "OutputMismatch",
    "PROTOCOLS",
    "PartyResult",
    "ProtocolConfig",
    "ProtocolError",
    "RunResult",
    "blocked_join",
    "run",
    "run_apc",
    "run_engine",
    "run_lp",
    "run_lp2",
    "run_party",
    "run_psi",
    "run_psix",
    "run_rr",
]

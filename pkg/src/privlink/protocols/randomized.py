"""Blocking behind local randomized response.

Instead of hiding bin counts, each party scatters the bin id itself: the
true bin survives with probability e^eps / (k - 1 + e^eps), otherwise a
uniform other bin is reported. Counts then need no padding; the price is
recall, because a matching pair is compared only when both reports land in
the same strategy window. The closed forms below quantify that trade and
drive the recall-optimal variants.
"""

from __future__ import annotations

import math
from dataclasses import replace

from ..blocking import ModHashBlocking
from ..model import Dataset
from .common import ProtocolConfig, RunResult, rr_keep_prob, run_engine


class DomainError(ValueError):
    """A strategy parameter left its admissible range."""


def rr_probs(eps: float, k: int) -> tuple[float, float]:
    """(keep, move) probabilities of k-ary randomized response."""
    p = rr_keep_prob(eps, k)
    q = (1.0 - p) / (k - 1) if k > 1 else 0.0
    return p, q


def rr_pair_prob(eps_a: float, eps_b: float, k: int) -> float:
    """Probability a truly co-binned pair is compared under the identity
    strategy: both keep, or both move to the same of the k-1 others."""
    pa, qa = rr_probs(eps_a, k)
    pb, qb = rr_probs(eps_b, k)
    return pa * pb + (k - 1) * qa * qb

def rr_one_sided_probs(eps: float, k: int, width: int) -> tuple[float, float]:
    """Report distribution maximizing recall when only one party perturbs
    and the strategy compares a window of `width` bins per report.

    All admissible distributions put some p_top on each window bin and
    p_bot elsewhere with p_top / p_bot <= e^eps; recall width * p_top is
    maximized at equality.
    """
    if not 1 <= width <= k:
        raise DomainError(f"window width {width} outside [1, {k}]")
    e = math.exp(eps)
    p_top = e / (k - width + width * e)
    p_bot = 1.0 / (k - width + width * e)
    return p_top, p_bot


def rr_one_sided_recall(eps: float, k: int, width: int) -> float:
    p_top, _ = rr_one_sided_probs(eps, k, width)
    return width * p_top


def rr_window_fraction_recall(eps: float, rho: float) -> float:
    """Same optimum parametrized by the window fraction rho = width / k."""
    e = math.exp(eps)
    return rho * e / (1.0 - rho + rho * e)


def rr_restricted_prob(eps: float, k: int, width: int, x: int) -> float:
    """Pair-compare probability when both parties report through a
    restricted response that spreads its top mass over x forward bins.

    Each party puts p_top on the x bins {t, ..., t+x-1} forward of the true
    bin t and p_bot on the rest; the strategy compares reports (i, j) with
    (j - i) mod k in [0, width). Counting aligned (shift_a, shift_b)
    combinations gives the three coefficient groups below; they total
    k * width, one term per (report pair) event inside the window.
    """
    if not 1 <= x <= width:
        raise DomainError(f"top spread {x} outside [1, {width}]")
    if width > k:
        raise DomainError(f"window width {width} exceeds {k}")
    e = math.exp(eps)
    p_top = e / (k - x + x * e)
    p_bot = 1.0 / (k - x + x * e)
    both_top = x * (x + 1) / 2
    mixed = 2 * width * x - x * (x + 1)
    both_bot = k * width - (2 * width * x - both_top)
    return both_top * p_top**2 + mixed * p_top * p_bot + both_bot * p_bot**2


def rr_restricted_best(eps: float, k: int, width: int) -> int:
    """Top spread maximizing the restricted pair-compare probability."""
    best = max(range(1, width + 1), key=lambda x: rr_restricted_prob(eps, k, width, x))
    return best


def rr_config(cfg: ProtocolConfig) -> ProtocolConfig:
    if cfg.blocking is None:
        cfg = replace(cfg, blocking=ModHashBlocking(k=16, width=1))
    return replace(cfg, noise="zero", rr=True, sp_stop=None, sp_checkpoints=False)


def run_rr(
    ds_a: Dataset,
    ds_b: Dataset,
    cfg: ProtocolConfig,
    seed: int = 0,
    transport: str = "inproc",
) -> RunResult:
    """Linkage over randomized-response reports.

    The blocking must hash records into k bins with a window strategy; the
    default pairs each report only with its own bin.
    """
    return run_engine("rr", ds_a, ds_b, rr_config(cfg), seed, transport)

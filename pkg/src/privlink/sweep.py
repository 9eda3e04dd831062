"""Experiment sweeps: JSON config schema, bounded parallel execution, and a
frozen CSV result format.

The CSV is the only contract with downstream chart tooling, so its shape is
versioned by the first header line and never extended in place:

    # privlink-results v1
    protocol,n_a,n_b,eps,delta,trial,cost,recall,wall_ms,stop_percentile,gamma

One row per finished run, or one row per percentile checkpoint when
checkpointing is on (the percentile-0 row is the full run). Runs that raise
are recorded as trailing "# failed ..." comment lines and the sweep keeps
going. Identical spec and seed reproduce the file byte for byte except for
the wall_ms column.

Cost semantics are uniform across protocols: the comparator/ciphertext
count measured from the transcript, never a closed-form estimate. The gamma
column carries the expansion factor for the intersection family so estimate
formulas stay recomputable downstream.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .blocking import (
    BlockingFn,
    DayBrandBlocking,
    GridBlocking,
    ModHashBlocking,
    SingleBinBlocking,
)
from .datagen import AB_THETA, TAXI_THETA, ab_rule, gen_ab, gen_taxi, taxi_rule
from .model import Dataset, MatchRule, read_dataset
from .protocols import PROTOCOLS, ProtocolConfig, run_lp

CSV_MAGIC = "# privlink-results v1"
COLUMNS = [
    "protocol", "n_a", "n_b", "eps", "delta", "trial",
    "cost", "recall", "wall_ms", "stop_percentile", "gamma",
]

# pseudo-protocol: the padded protocol with match-driven cleaning on
_PSEUDO = {"gmc"}


@dataclass
class DatasetSpec:
    kind: str = "taxi"  # taxi | ab | file
    t_days: int = 1
    per_day: int = 3_000
    theta: int | None = None
    skew: float = 2.0
    bits: int = 50
    brands: int = 16
    dup_rate: float = 0.5
    path_a: str | None = None
    path_b: str | None = None

    def rule(self, variant_hint: str | None = None) -> MatchRule:
        if self.kind == "taxi" or variant_hint == "grid":
            return taxi_rule(self.theta if self.theta is not None else TAXI_THETA)
        return ab_rule(self.theta if self.theta is not None else AB_THETA)

    def build(self, seed: int) -> tuple[Dataset, Dataset, MatchRule]:
        if self.kind == "taxi":
            ds_a, ds_b, _ = gen_taxi(
                self.t_days, self.per_day,
                self.theta if self.theta is not None else TAXI_THETA,
                seed, self.skew,
            )
            return ds_a, ds_b, self.rule()
        if self.kind == "ab":
            ds_a, ds_b, _ = gen_ab(
                self.t_days, self.per_day, self.bits,
                self.theta if self.theta is not None else AB_THETA,
                self.brands, seed, self.dup_rate,
            )
            return ds_a, ds_b, self.rule()
        if self.kind == "file":
            if not self.path_a or not self.path_b:
                raise ValueError("file dataset needs path_a and path_b")
            ds_a = read_dataset(self.path_a, nbits=self.bits)
            ds_b = read_dataset(self.path_b, nbits=self.bits)
            if ds_a.variant != ds_b.variant:
                raise ValueError("dataset files disagree on payload variant")
            return ds_a, ds_b, self.rule(ds_a.variant)
        raise ValueError(f"unknown dataset kind {self.kind!r}")


def blocking_from_config(cfg: dict | None, dataset: DatasetSpec) -> BlockingFn:
    """Blocking block of the experiment JSON; defaults fit the dataset kind."""
    if cfg is None:
        cfg = {}
    variant = cfg.get("variant", "grid" if dataset.kind != "ab" else "daybrand")
    if variant == "grid":
        return GridBlocking(
            t_days=cfg.get("t_days", dataset.t_days),
            rows=cfg.get("rows", 16),
            cols=cfg.get("cols", 16),
            hour_buckets=cfg.get("hour_buckets", 24),
            identity_pairs=cfg.get("identity_pairs", False),
        )
    if variant == "daybrand":
        return DayBrandBlocking(
            t_days=cfg.get("t_days", dataset.t_days),
            brands=cfg.get("brands", dataset.brands),
        )
    if variant == "modhash":
        return ModHashBlocking(k=cfg.get("k", 16), width=cfg.get("width", 1))
    if variant == "single":
        return SingleBinBlocking()
    raise ValueError(f"unknown blocking variant {variant!r}")


@dataclass
class CaseSpec:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    blocking: dict | None = None


@dataclass
class ExperimentSpec:
    cases: list[CaseSpec] = field(default_factory=lambda: [CaseSpec()])
    protocols: list[str] = field(default_factory=lambda: ["apc", "lp"])
    eps: list[float] = field(default_factory=lambda: [1.6])
    delta: list[float] = field(default_factory=lambda: [1e-5])
    trials: int = 3
    seed: int = 0
    sp_stop: int | None = None
    checkpoints: bool = False
    workers: int = 4
    mode: str = "fast"  # fast | crypto

    def validate(self) -> None:
        unknown = [p for p in self.protocols if p not in PROTOCOLS and p not in _PSEUDO]
        if unknown:
            raise ValueError(f"unknown protocols {unknown}")
        if self.trials < 1:
            raise ValueError("trials must be positive")
        if not self.cases:
            raise ValueError("empty case list")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, blob: dict) -> "ExperimentSpec":
        blob = dict(blob)
        cases = [
            CaseSpec(dataset=DatasetSpec(**c.get("dataset", {})), blocking=c.get("blocking"))
            for c in blob.pop("cases", [{}])
        ]
        spec = cls(cases=cases, **blob)
        spec.validate()
        return spec

    @classmethod
    def load(cls, path: str) -> "ExperimentSpec":
        with open(path, "r", encoding="ascii") as f:
            return cls.from_json(json.load(f))


@dataclass(frozen=True)
class ResultRow:
    protocol: str
    n_a: int
    n_b: int
    eps: float
    delta: float
    trial: int
    cost: int
    recall: float
    wall_ms: float
    stop_percentile: int
    gamma: int | None = None

    def to_csv(self) -> str:
        g = "" if self.gamma is None else str(self.gamma)
        return (
            f"{self.protocol},{self.n_a},{self.n_b},{self.eps!r},{self.delta!r},"
            f"{self.trial},{self.cost},{self.recall:.6f},{self.wall_ms:.3f},"
            f"{self.stop_percentile},{g}"
        )

    @classmethod
    def from_csv(cls, line: str) -> "ResultRow":
        parts = line.split(",")
        if len(parts) != len(COLUMNS):
            raise ValueError(f"row has {len(parts)} fields, want {len(COLUMNS)}")
        return cls(
            protocol=parts[0],
            n_a=int(parts[1]),
            n_b=int(parts[2]),
            eps=float(parts[3]),
            delta=float(parts[4]),
            trial=int(parts[5]),
            cost=int(parts[6]),
            recall=float(parts[7]),
            wall_ms=float(parts[8]),
            stop_percentile=int(parts[9]),
            gamma=int(parts[10]) if parts[10] else None,
        )


@dataclass
class SweepResult:
    spec: ExperimentSpec
    rows: list[ResultRow]
    failures: list[str]

    def to_csv(self) -> str:
        lines = [CSV_MAGIC, ",".join(COLUMNS)]
        lines.extend(r.to_csv() for r in self.rows)
        lines.extend(f"# failed {f}" for f in self.failures)
        return "\n".join(lines) + "\n"

    def write(self, path: str) -> None:
        with open(path, "w", encoding="ascii") as f:
            f.write(self.to_csv())

    def final_rows(self) -> list[ResultRow]:
        """One row per run: the lowest-percentile checkpoint or the lone row."""
        best: dict[tuple, ResultRow] = {}
        for r in self.rows:
            key = (r.protocol, r.n_a, r.n_b, r.eps, r.delta, r.trial)
            cur = best.get(key)
            if cur is None or r.stop_percentile < cur.stop_percentile:
                best[key] = r
        return list(best.values())

    def summary(self) -> dict:
        """Mean/std aggregates per group plus log-log cost slopes over n."""
        groups: dict[tuple, list[ResultRow]] = {}
        for r in self.final_rows():
            groups.setdefault((r.protocol, r.eps, r.delta), []).append(r)
        out: dict = {"groups": {}, "slopes": {}, "failures": len(self.failures)}
        for (proto, eps, delta), rows in sorted(groups.items()):
            by_n: dict[int, list[ResultRow]] = {}
            for r in rows:
                by_n.setdefault(r.n_a, []).append(r)
            costs = np.array([r.cost for r in rows], dtype=float)
            recalls = np.array([r.recall for r in rows], dtype=float)
            key = f"{proto},eps={eps!r},delta={delta!r}"
            out["groups"][key] = {
                "runs": len(rows),
                "cost_mean": float(costs.mean()),
                "cost_std": float(costs.std()),
                "recall_mean": float(recalls.mean()),
                "recall_std": float(recalls.std()),
            }
            if len(by_n) >= 2 and all(r.cost > 0 for r in rows):
                ns = sorted(by_n)
                mean_costs = [float(np.mean([r.cost for r in by_n[n]])) for n in ns]
                slope = float(
                    np.polyfit(np.log10(ns), np.log10(mean_costs), 1)[0]
                )
                out["slopes"][key] = slope
        return out


def read_results(path: str) -> list[ResultRow]:
    with open(path, "r", encoding="ascii") as f:
        head = f.readline().strip()
        if head != CSV_MAGIC:
            raise ValueError(f"not a results file (header {head!r})")
        cols = f.readline().strip().split(",")
        if cols != COLUMNS:
            raise ValueError(f"column mismatch: {cols}")
        rows = []
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append(ResultRow.from_csv(line))
        return rows


def _case_seed(spec_seed: int, case_idx: int, trial: int) -> int:
    ss = np.random.SeedSequence((spec_seed, case_idx, trial))
    return int(ss.generate_state(1)[0])


def _run_seed(spec_seed: int, case_idx: int, trial: int, tag: str) -> int:
    digest = sum(ord(ch) * 131**i for i, ch in enumerate(tag)) % (1 << 31)
    ss = np.random.SeedSequence((spec_seed, case_idx, trial, digest))
    return int(ss.generate_state(1)[0])


def rows_from_result(
    name: str,
    n_a: int,
    n_b: int,
    eps: float,
    delta: float,
    trial: int,
    res,
    sp_stop: int | None,
) -> list[ResultRow]:
    """One CSV row per checkpoint, or a single full-run row."""
    if res.checkpoints:
        return [
            ResultRow(
                protocol=name, n_a=n_a, n_b=n_b,
                eps=eps, delta=delta, trial=trial,
                cost=cp.cost, recall=cp.recall, wall_ms=res.wall_ms,
                stop_percentile=cp.percentile, gamma=res.gamma,
            )
            for cp in res.checkpoints
        ]
    return [
        ResultRow(
            protocol=name, n_a=n_a, n_b=n_b,
            eps=eps, delta=delta, trial=trial,
            cost=res.cost, recall=float(res.recall), wall_ms=res.wall_ms,
            stop_percentile=sp_stop or 0, gamma=res.gamma,
        )
    ]


def _run_one_trial(spec: ExperimentSpec, case_idx: int, trial: int) -> tuple[list[ResultRow], list[str]]:
    """All protocol x eps x delta combinations on one generated instance."""
    case = spec.cases[case_idx]
    ds_a, ds_b, rule = case.dataset.build(_case_seed(spec.seed, case_idx, trial))
    blocking = blocking_from_config(case.blocking, case.dataset)
    rows: list[ResultRow] = []
    failures: list[str] = []
    for name in spec.protocols:
        for eps in spec.eps:
            for delta in spec.delta:
                cfg = ProtocolConfig(
                    rule=rule,
                    blocking=blocking,
                    eps=eps,
                    delta=delta,
                    sp_stop=spec.sp_stop,
                    sp_checkpoints=spec.checkpoints,
                    gmc=name == "gmc",
                    mode=spec.mode,
                )
                seed = _run_seed(spec.seed, case_idx, trial, f"{name}/{eps}/{delta}")
                try:
                    if name == "gmc":
                        res = run_lp(ds_a, ds_b, cfg, seed=seed)
                    else:
                        res = PROTOCOLS[name](ds_a, ds_b, cfg, seed=seed)
                except Exception as exc:  # noqa: BLE001 - flagged, sweep continues
                    failures.append(
                        f"case={case_idx} protocol={name} eps={eps!r} delta={delta!r} "
                        f"trial={trial} error={type(exc).__name__}: "
                        + str(exc).replace("\n", " ")
                    )
                    continue
                rows.extend(
                    rows_from_result(
                        name, len(ds_a), len(ds_b), eps, delta, trial, res, spec.sp_stop
                    )
                )
    return rows, failures


def run_sweep(spec: ExperimentSpec, out_path: str | None = None) -> SweepResult:
    """Execute every combination; rows come back in deterministic order."""
    spec.validate()
    tasks = [(ci, t) for ci in range(len(spec.cases)) for t in range(spec.trials)]
    rows: list[ResultRow] = []
    failures: list[str] = []
    if spec.workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=spec.workers) as pool:
            outcomes = list(pool.map(lambda ct: _run_one_trial(spec, *ct), tasks))
    else:
        outcomes = [_run_one_trial(spec, ci, t) for ci, t in tasks]
    for rs, fs in outcomes:
        rows.extend(rs)
        failures.extend(fs)
    result = SweepResult(spec=spec, rows=rows, failures=failures)
    if out_path:
        result.write(out_path)
    return result


# ---------------------------------------------------------------------------
# presets

def scaling_spec(trials: int = 3, seed: int = 0) -> ExperimentSpec:
    """Cost-vs-n ladder: n = 200..1600 by growing days and per-day volume.

    Uniform placement (skew 0): clustering would concentrate bin loads and
    the load products with them, measuring hotspot shape instead of growth.
    """
    cases = []
    for t_days, per_day in ((2, 100), (4, 100), (5, 160), (8, 200)):
        cases.append(
            CaseSpec(
                dataset=DatasetSpec(kind="taxi", t_days=t_days, per_day=per_day, skew=0.0),
                blocking={
                    "variant": "grid", "t_days": t_days, "rows": 2, "cols": 2,
                    "hour_buckets": 1, "identity_pairs": True,
                },
            )
        )
    return ExperimentSpec(
        cases=cases, protocols=["apc", "lp"], eps=[1.6], delta=[1e-5],
        trials=trials, seed=seed,
    )


def tradeoff_spec(trials: int = 3, seed: int = 0) -> ExperimentSpec:
    """Recall-vs-cost lines from sorted-group checkpoints, plus the
    all-pairs baseline row the ratio is taken against."""
    case = CaseSpec(
        dataset=DatasetSpec(kind="taxi", t_days=1, per_day=400),
        blocking={"variant": "grid", "t_days": 1, "rows": 4, "cols": 4, "hour_buckets": 6},
    )
    return ExperimentSpec(
        cases=[case], protocols=["apc", "lp"], eps=[0.4, 1.6], delta=[1e-5],
        trials=trials, seed=seed, sp_stop=0, checkpoints=True,
    )

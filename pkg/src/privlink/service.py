"""HTTP facade over the linkage toolkit.

Wraps generation, protocol runs, sweeps, audits, and the blocking attack
demo behind typed request models. Everything except sweeps is answered
synchronously; sweeps can run for minutes, so they go through a small job
table and a worker pool, polled via /jobs/{id}.

The command line talks to this app in process, which makes the request
models the single configuration schema for both surfaces. File paths in
requests are therefore local paths by design; this is a desk tool, not a
multi-tenant deployment.
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field, model_validator

from . import __version__
from .audit import (
    AuditVerdict,
    InsufficientTrials,
    audit_bincounts,
    gen_neighbor,
    lp2_counterexample,
    rr_report_audit,
)
from .blocking import lsh_attack_demo
from .datagen import write_truth
from .model import plaintext_join, precision, recall, write_dataset
from .protocols import CONFIGS, PROTOCOLS, ProtocolConfig, run_lp, run_party
from .sweep import (
    CSV_MAGIC,
    COLUMNS,
    DatasetSpec,
    ExperimentSpec,
    blocking_from_config,
    rows_from_result,
    run_sweep,
    scaling_spec,
    tradeoff_spec,
)
from .transport import A2B, B2A, tcp_connect_channel, tcp_listen_channel

RUNNABLE = sorted(PROTOCOLS) + ["gmc"]
SPLITTABLE = sorted(CONFIGS) + ["gmc"]


# ---------------------------------------------------------------------------
# request / response models


class DatasetParams(BaseModel):
    """Mirror of the sweep dataset block, one kind per request."""

    model_config = {"extra": "forbid"}

    kind: Literal["taxi", "ab", "file"] = "taxi"
    t_days: int = Field(1, ge=1)
    per_day: int = Field(3_000, ge=1)
    theta: Optional[int] = Field(None, ge=0)
    skew: float = 2.0
    bits: int = Field(50, ge=1)
    brands: int = Field(16, ge=1)
    dup_rate: float = Field(0.5, ge=0.0, le=1.0)
    path_a: Optional[str] = None
    path_b: Optional[str] = None

    @model_validator(mode="after")
    def _file_needs_paths(self):
        if self.kind == "file" and not (self.path_a and self.path_b):
            raise ValueError("file datasets need path_a and path_b")
        return self

    def to_spec(self) -> DatasetSpec:
        return DatasetSpec(
            kind=self.kind, t_days=self.t_days, per_day=self.per_day,
            theta=self.theta, skew=self.skew, bits=self.bits,
            brands=self.brands, dup_rate=self.dup_rate,
            path_a=self.path_a, path_b=self.path_b,
        )


class BlockingParams(BaseModel):
    model_config = {"extra": "forbid"}

    variant: Literal["grid", "daybrand", "modhash", "single"]
    t_days: Optional[int] = None
    rows: Optional[int] = None
    cols: Optional[int] = None
    hour_buckets: Optional[int] = None
    identity_pairs: Optional[bool] = None
    brands: Optional[int] = None
    k: Optional[int] = None
    width: Optional[int] = None

    def to_config(self) -> dict:
        return self.model_dump(exclude_none=True)


class HealthResponse(BaseModel):
    status: str
    version: str


class GenRequest(BaseModel):
    dataset: DatasetParams = DatasetParams()
    seed: int = 0
    out_dir: str

    @model_validator(mode="after")
    def _no_file_roundtrip(self):
        if self.dataset.kind == "file":
            raise ValueError("gen produces files; start from taxi or ab")
        return self


class GenResponse(BaseModel):
    n_a: int
    n_b: int
    truth_size: int
    path_a: str
    path_b: str
    path_truth: str


class RunRequest(BaseModel):
    protocol: str
    dataset: DatasetParams = DatasetParams()
    blocking: Optional[BlockingParams] = None
    eps: float = 1.6
    delta: float = 1e-5
    seed: int = 0
    sp_stop: Optional[int] = Field(None, ge=0, le=100)
    checkpoints: bool = False
    mode: Literal["fast", "crypto"] = "fast"
    transport: Literal["inproc", "tcp"] = "inproc"
    out_dir: Optional[str] = None

    @model_validator(mode="after")
    def _known_protocol(self):
        if self.protocol not in RUNNABLE:
            raise ValueError(f"protocol must be one of {RUNNABLE}")
        return self


class CheckpointModel(BaseModel):
    percentile: int
    cost: int
    recall: float


class RunResponse(BaseModel):
    protocol: str
    n_a: int
    n_b: int
    eps: float
    delta: float
    seed: int
    mode: str
    cost: int
    recall: float
    precision: float
    pairs: int
    truth_size: int
    wall_ms: float
    gamma: Optional[int] = None
    checkpoints: list[CheckpointModel] = []
    rows: list[str]
    transcript: dict
    wrote: list[str] = []


class SplitRunRequest(BaseModel):
    protocol: str
    role: Literal["a", "b"]
    host: str = "127.0.0.1"
    port: int = Field(ge=1, le=65_535)
    dataset: DatasetParams = DatasetParams()
    blocking: Optional[BlockingParams] = None
    eps: float = 1.6
    delta: float = 1e-5
    seed: int = 0

    @model_validator(mode="after")
    def _splittable(self):
        if self.protocol not in SPLITTABLE:
            raise ValueError(f"split runs support {SPLITTABLE}")
        return self


class SplitRunResponse(BaseModel):
    protocol: str
    role: str
    n_own: int
    pairs: int
    cost: int
    recall: float
    wall_ms: float


class SweepRequest(BaseModel):
    spec: Optional[dict] = None
    preset: Optional[Literal["scaling", "tradeoff"]] = None
    trials: Optional[int] = Field(None, ge=1)
    seed: Optional[int] = None
    out_dir: str

    @model_validator(mode="after")
    def _one_source(self):
        if (self.spec is None) == (self.preset is None):
            raise ValueError("give exactly one of spec or preset")
        return self

    def to_spec(self) -> ExperimentSpec:
        if self.preset is not None:
            maker = scaling_spec if self.preset == "scaling" else tradeoff_spec
            return maker(trials=self.trials or 3, seed=self.seed or 0)
        spec = ExperimentSpec.from_json(self.spec)
        if self.trials is not None:
            spec.trials = self.trials
        if self.seed is not None:
            spec.seed = self.seed
        spec.validate()
        return spec


class JobStatus(BaseModel):
    job_id: str
    state: Literal["queued", "running", "done", "failed"]
    error: Optional[str] = None
    result: Optional[dict] = None


class AuditRequest(BaseModel):
    protocol: Literal["lp", "apc", "deterministic", "lp2", "rr"]
    eps: float = 1.6
    delta: float = 1e-5
    trials: int = Field(20_000, ge=1)
    seed: int = 0
    conf: float = Field(0.99, gt=0.5, lt=1.0)
    n1: Optional[int] = None
    k: int = Field(16, ge=2)
    dataset: DatasetParams = DatasetParams(per_day=300)
    blocking: Optional[BlockingParams] = None


class AuditResponse(BaseModel):
    verdict: dict
    violated: bool


class AttackRequest(BaseModel):
    nbits: int = Field(50, ge=8)
    k: int = Field(4, ge=2)


# ---------------------------------------------------------------------------
# job table


@dataclass
class _Job:
    job_id: str
    state: str = "queued"
    error: str | None = None
    result: dict | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)

    def status(self) -> JobStatus:
        with self.lock:
            return JobStatus(
                job_id=self.job_id, state=self.state,
                error=self.error, result=self.result,
            )


def _sweep_job(job: _Job, spec: ExperimentSpec, out_path: str) -> None:
    with job.lock:
        job.state = "running"
    try:
        res = run_sweep(spec, out_path)
        summary = res.summary()
        with job.lock:
            job.state = "done"
            job.result = {
                "csv": out_path,
                "rows": len(res.rows),
                "failures": res.failures,
                "summary": summary,
            }
    except Exception as exc:  # noqa: BLE001 - job table reports, never raises
        with job.lock:
            job.state = "failed"
            job.error = f"{type(exc).__name__}: {exc}"


# ---------------------------------------------------------------------------
# app assembly


def _build_cfg(req) -> tuple[DatasetSpec, ProtocolConfig]:
    spec = req.dataset.to_spec()
    ds_a, ds_b, rule = spec.build(req.seed)
    blocking = blocking_from_config(
        req.blocking.to_config() if req.blocking else None, spec
    )
    cfg = ProtocolConfig(
        rule=rule,
        blocking=blocking,
        eps=req.eps,
        delta=req.delta,
        sp_stop=getattr(req, "sp_stop", None),
        sp_checkpoints=getattr(req, "checkpoints", False),
        gmc=req.protocol == "gmc",
        mode=getattr(req, "mode", "fast"),
    )
    return ds_a, ds_b, cfg


def create_app(workers: int = 2) -> FastAPI:
    # the pool exists from construction, not from the lifespan hook: the
    # in-process client transport never fires startup events
    pool = ThreadPoolExecutor(max_workers=workers)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        try:
            yield
        finally:
            pool.shutdown(wait=False, cancel_futures=True)

    app = FastAPI(title="privlink", version=__version__, lifespan=lifespan)
    app.state.pool = pool
    app.state.jobs = {}

    def _usage_error(request, exc):
        # bad parameter combinations from downstream validation read as
        # client errors, same as the pydantic 422s
        return JSONResponse(
            status_code=400, content={"detail": f"{type(exc).__name__}: {exc}"}
        )

    for exc_type in (ValueError, FileNotFoundError, InsufficientTrials):
        app.add_exception_handler(exc_type, _usage_error)

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/datasets", response_model=GenResponse)
    def gen_datasets(req: GenRequest) -> GenResponse:
        spec = req.dataset.to_spec()
        ds_a, ds_b, rule = spec.build(req.seed)
        truth = plaintext_join(rule, ds_a, ds_b)
        os.makedirs(req.out_dir, exist_ok=True)
        paths = {
            name: os.path.join(req.out_dir, f"{name}.csv")
            for name in ("a", "b", "truth")
        }
        write_dataset(ds_a, paths["a"])
        write_dataset(ds_b, paths["b"])
        write_truth(truth, paths["truth"])
        return GenResponse(
            n_a=len(ds_a), n_b=len(ds_b), truth_size=len(truth),
            path_a=paths["a"], path_b=paths["b"], path_truth=paths["truth"],
        )

    @app.post("/runs", response_model=RunResponse)
    def run_protocol(req: RunRequest) -> RunResponse:
        ds_a, ds_b, cfg = _build_cfg(req)
        runner = run_lp if req.protocol == "gmc" else PROTOCOLS[req.protocol]
        res = runner(ds_a, ds_b, cfg, seed=req.seed, transport=req.transport)
        rows = rows_from_result(
            req.protocol, len(ds_a), len(ds_b), req.eps, req.delta, 0, res,
            req.sp_stop,
        )
        wrote: list[str] = []
        if req.out_dir:
            os.makedirs(req.out_dir, exist_ok=True)
            results_path = os.path.join(req.out_dir, "results.csv")
            with open(results_path, "w", encoding="ascii") as f:
                f.write(CSV_MAGIC + "\n")
                f.write(",".join(COLUMNS) + "\n")
                for row in rows:
                    f.write(row.to_csv() + "\n")
            pairs_path = os.path.join(req.out_dir, "pairs.csv")
            with open(pairs_path, "w", encoding="ascii") as f:
                f.write("rid_a,rid_b\n")
                for a, b in sorted(res.output.pairs):
                    f.write(f"{a},{b}\n")
            transcript_path = os.path.join(req.out_dir, "transcript.json")
            summary = dict(res.transcript.features())
            summary["digest"] = res.transcript.digest()
            with open(transcript_path, "w", encoding="ascii") as f:
                json.dump(summary, f, indent=2, sort_keys=True)
                f.write("\n")
            wrote = [results_path, pairs_path, transcript_path]
        features = dict(res.transcript.features())
        features["digest"] = res.transcript.digest()
        return RunResponse(
            protocol=req.protocol, n_a=len(ds_a), n_b=len(ds_b),
            eps=req.eps, delta=req.delta, seed=req.seed, mode=res.mode,
            cost=res.cost, recall=float(res.recall),
            precision=float(res.precision), pairs=len(res.output.pairs),
            truth_size=res.truth_size, wall_ms=res.wall_ms, gamma=res.gamma,
            checkpoints=[
                CheckpointModel(percentile=cp.percentile, cost=cp.cost, recall=cp.recall)
                for cp in res.checkpoints
            ],
            rows=[row.to_csv() for row in rows],
            transcript=features,
            wrote=wrote,
        )

    @app.post("/runs/split", response_model=SplitRunResponse)
    def run_split(req: SplitRunRequest) -> SplitRunResponse:
        ds_a, ds_b, cfg = _build_cfg(req)
        name = "lp" if req.protocol == "gmc" else req.protocol
        cfg = CONFIGS[name](cfg)
        ds = ds_a if req.role == "a" else ds_b
        if req.role == "a":
            chan, _ = tcp_listen_channel(A2B, port=req.port, host=req.host)
        else:
            chan = tcp_connect_channel(B2A, req.host, req.port)
        try:
            part = run_party(name, req.role, ds, cfg, chan, seed=req.seed)
        finally:
            chan.close()
        truth = plaintext_join(cfg.rule, ds_a, ds_b)
        return SplitRunResponse(
            protocol=req.protocol, role=req.role, n_own=len(ds),
            pairs=len(part.output), cost=part.cost,
            recall=float(recall(part.output, truth)), wall_ms=part.wall_ms,
        )

    @app.post("/sweeps", response_model=JobStatus, status_code=202)
    def submit_sweep(req: SweepRequest) -> JobStatus:
        spec = req.to_spec()
        os.makedirs(req.out_dir, exist_ok=True)
        out_path = os.path.join(req.out_dir, "results.csv")
        job = _Job(job_id=uuid.uuid4().hex[:12])
        app.state.jobs[job.job_id] = job
        app.state.pool.submit(_sweep_job, job, spec, out_path)
        return job.status()

    @app.get("/jobs/{job_id}", response_model=JobStatus)
    def job_status(job_id: str) -> JobStatus:
        job = app.state.jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no job {job_id}")
        return job.status()

    @app.get("/jobs", response_model=list[JobStatus])
    def jobs() -> list[JobStatus]:
        return [job.status() for job in app.state.jobs.values()]

    @app.post("/audits", response_model=AuditResponse)
    def run_audit(req: AuditRequest) -> AuditResponse:
        verdict: AuditVerdict
        if req.protocol == "lp2":
            _, _, verdict = lp2_counterexample(
                req.eps, req.delta, n1=req.n1, trials=req.trials,
                seed=req.seed, conf=req.conf,
            )
        elif req.protocol == "rr":
            verdict = rr_report_audit(
                req.eps, req.k, trials=req.trials, seed=req.seed, conf=req.conf
            )
        else:
            spec = req.dataset.to_spec()
            ds_a, ds_b, rule = spec.build(req.seed)
            blocking = blocking_from_config(
                req.blocking.to_config() if req.blocking else None, spec
            )
            pair = gen_neighbor(ds_a, ds_b, rule, np.random.default_rng(req.seed))
            verdict = audit_bincounts(
                req.protocol, pair, blocking, req.eps, req.delta,
                trials=req.trials, seed=req.seed,
                min_trials=min(10_000, req.trials), conf=req.conf,
            )
        return AuditResponse(verdict=verdict.to_json(), violated=verdict.violated)

    @app.post("/attacks/lsh")
    def attack_lsh(req: AttackRequest) -> dict:
        return lsh_attack_demo(nbits=req.nbits, k=req.k).to_dict()

    return app

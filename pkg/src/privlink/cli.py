"""Command line for the linkage toolkit.

A thin client: every subcommand builds a JSON payload and sends it to the
service app in process, so the HTTP request models are the one
configuration schema. `serve` hosts the same app over real HTTP.

Exit codes: 0 success, 2 usage error, 3 audit found a violation,
4 runtime failure.
"""

from __future__ import annotations

import asyncio
import json
import sys
from contextlib import asynccontextmanager

import click
import httpx

from .service import create_app

EXIT_AUDIT_VIOLATION = 3
EXIT_RUNTIME = 4


def _detail(resp: httpx.Response) -> str:
    try:
        detail = resp.json().get("detail")
    except Exception:  # noqa: BLE001 - any non-JSON body falls through
        detail = None
    if isinstance(detail, list):
        detail = "; ".join(
            ".".join(str(x) for x in e.get("loc", [])) + f": {e.get('msg')}"
            for e in detail
        )
    return str(detail) if detail else (resp.text or f"HTTP {resp.status_code}")


@asynccontextmanager
async def _service():
    """In-process client session against a fresh service app."""
    app = create_app()
    transport = httpx.ASGITransport(app=app)
    try:
        async with httpx.AsyncClient(
            transport=transport, base_url="http://privlink", timeout=None
        ) as client:

            async def call(method: str, path: str, payload: dict | None = None):
                resp = await client.request(method, path, json=payload)
                if resp.status_code >= 500:
                    raise RuntimeError(_detail(resp))
                if resp.status_code >= 400:
                    raise click.UsageError(_detail(resp))
                return resp.json()

            yield call
    finally:
        app.state.pool.shutdown(wait=False, cancel_futures=True)


def _one_call(method: str, path: str, payload: dict | None = None) -> dict:
    async def go():
        async with _service() as call:
            return await call(method, path, payload)

    return asyncio.run(go())


def _load_config(ctx) -> dict:
    path = ctx.obj.get("config")
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as f:
        loaded = json.load(f)
    if not isinstance(loaded, dict):
        raise click.UsageError(f"config {path} must hold a JSON object")
    return loaded


def _overlay(payload: dict, key: str, values: dict) -> None:
    values = {k: v for k, v in values.items() if v is not None}
    if values:
        merged = dict(payload.get(key) or {})
        merged.update(values)
        payload[key] = merged


def _set(payload: dict, **values) -> None:
    payload.update({k: v for k, v in values.items() if v is not None})


def dataset_options(fn):
    opts = [
        click.option("--dataset", "kind", type=click.Choice(["taxi", "ab", "file"]),
                     default=None, help="input family  [default: taxi]"),
        click.option("--t-days", type=int, default=None),
        click.option("--per-day", type=int, default=None),
        click.option("--theta", type=int, default=None,
                     help="match threshold: micro-degrees (taxi) or bit flips (ab)"),
        click.option("--skew", type=float, default=None,
                     help="hotspot strength for taxi; 0 is uniform"),
        click.option("--bits", type=int, default=None),
        click.option("--brands", type=int, default=None),
        click.option("--dup-rate", type=float, default=None),
        click.option("--path-a", type=click.Path(), default=None,
                     help="side A file for --dataset file"),
        click.option("--path-b", type=click.Path(), default=None),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _dataset_values(kind, t_days, per_day, theta, skew, bits, brands,
                    dup_rate, path_a, path_b) -> dict:
    return {
        "kind": kind, "t_days": t_days, "per_day": per_day, "theta": theta,
        "skew": skew, "bits": bits, "brands": brands, "dup_rate": dup_rate,
        "path_a": path_a, "path_b": path_b,
    }


def _echo_json(data: dict) -> None:
    click.echo(json.dumps(data, indent=2, sort_keys=True))


@click.group()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--config", type=click.Path(exists=True, dir_okay=False),
              default=None, help="JSON file merged under the subcommand's payload")
@click.option("--out", type=click.Path(file_okay=False), default="out",
              show_default=True, help="directory for generated files and results")
@click.option("--transport", type=click.Choice(["inproc", "tcp"]),
              default="inproc", show_default=True)
@click.option("--parties", type=click.Choice(["single", "two"]),
              default="single", show_default=True,
              help="run both roles in one process, or this process as one role")
@click.option("--peer", default="127.0.0.1:7351", show_default=True,
              help="host:port rendezvous for --parties two (role a listens)")
@click.option("--role", type=click.Choice(["a", "b"]), default=None,
              help="which side this process plays under --parties two")
@click.pass_context
def cli(ctx, **opts):
    """Two-party private record linkage workbench."""
    ctx.obj = opts


@cli.command()
@dataset_options
@click.pass_context
def gen(ctx, **ds):
    """Generate a dataset pair and its ground truth into --out."""
    payload = _load_config(ctx)
    _overlay(payload, "dataset", _dataset_values(**ds))
    _set(payload, seed=ctx.obj["seed"], out_dir=ctx.obj["out"])
    _echo_json(_one_call("POST", "/datasets", payload))


def _parse_peer(peer: str) -> tuple[str, int]:
    host, sep, port = peer.rpartition(":")
    if not sep or not port.isdigit():
        raise click.UsageError(f"--peer must be host:port, got {peer!r}")
    return host or "127.0.0.1", int(port)


@cli.command()
@click.option("--protocol", required=True,
              type=click.Choice(["apc", "lp", "lp2", "gmc", "rr", "psi", "psix"]))
@click.option("--eps", type=float, default=None, help="privacy budget  [default: 1.6]")
@click.option("--delta", type=float, default=None, help="slack  [default: 1e-5]")
@click.option("--blocking", default=None,
              help='JSON, e.g. \'{"variant": "grid", "rows": 4, "cols": 4}\'')
@click.option("--sp-stop", type=int, default=None,
              help="sort groups by load and stop at this percentile")
@click.option("--checkpoints", is_flag=True, default=False,
              help="emit one result row per processed percentile")
@click.option("--fast/--crypto", "fast", default=True,
              help="stub secure comparisons (default) or run them encrypted")
@dataset_options
@click.pass_context
def run(ctx, protocol, eps, delta, blocking, sp_stop, checkpoints, fast, **ds):
    """One protocol run; writes results.csv, pairs.csv, transcript.json."""
    payload = _load_config(ctx)
    _overlay(payload, "dataset", _dataset_values(**ds))
    if blocking is not None:
        try:
            parsed = json.loads(blocking)
        except json.JSONDecodeError as exc:
            raise click.UsageError(f"--blocking is not valid JSON: {exc}") from None
        _overlay(payload, "blocking", parsed)
    _set(payload, protocol=protocol, eps=eps, delta=delta, seed=ctx.obj["seed"])

    if ctx.obj["parties"] == "two":
        if ctx.obj["role"] is None:
            raise click.UsageError("--parties two needs --role a or --role b")
        host, port = _parse_peer(ctx.obj["peer"])
        _set(payload, role=ctx.obj["role"], host=host, port=port)
        _echo_json(_one_call("POST", "/runs/split", payload))
        return

    _set(payload, sp_stop=sp_stop, out_dir=ctx.obj["out"],
         transport=ctx.obj["transport"])
    if checkpoints:
        payload["checkpoints"] = True
    if not fast:
        payload["mode"] = "crypto"
    _echo_json(_one_call("POST", "/runs", payload))


@cli.command()
@click.option("--preset", type=click.Choice(["scaling", "tradeoff"]), default=None,
              help="built-in experiment instead of a --config spec")
@click.option("--trials", type=int, default=None)
@click.option("--poll", type=float, default=0.5, show_default=True,
              help="seconds between job status checks")
@click.pass_context
def sweep(ctx, preset, trials, poll):
    """Run an experiment grid to a results CSV; blocks until finished."""
    config = _load_config(ctx)
    payload: dict = {"out_dir": ctx.obj["out"], "seed": ctx.obj["seed"]}
    if "cases" in config:
        payload["spec"] = config  # the config file is the experiment itself
    elif config:
        payload.update(config)
    if preset is not None:
        payload["preset"] = preset
        payload.pop("spec", None)
    if trials is not None:
        payload["trials"] = trials

    async def go():
        async with _service() as call:
            status = await call("POST", "/sweeps", payload)
            while status["state"] in ("queued", "running"):
                await asyncio.sleep(poll)
                status = await call("GET", f"/jobs/{status['job_id']}")
            return status

    status = asyncio.run(go())
    if status["state"] != "done":
        raise RuntimeError(f"sweep failed: {status.get('error')}")
    _echo_json(status["result"])


@cli.command()
@click.option("--protocol", required=True,
              type=click.Choice(["lp", "apc", "deterministic", "lp2", "rr"]))
@click.option("--eps", type=float, default=None, help="claimed budget  [default: 1.6]")
@click.option("--delta", type=float, default=None, help="claimed slack  [default: 1e-5]")
@click.option("--trials", type=int, default=None, help="[default: 20000]")
@click.option("--n1", type=int, default=None,
              help="matching-bin size for the lp2 witness")
@click.option("--k", type=int, default=None, help="report bins for rr  [default: 16]")
@click.option("--conf", type=float, default=None,
              help="confidence for interval separation  [default: 0.99]")
@click.pass_context
def audit(ctx, protocol, eps, delta, trials, n1, k, conf):
    """Test announced-output privacy; exits 3 when a violation is found."""
    payload = _load_config(ctx)
    _set(payload, protocol=protocol, eps=eps, delta=delta, trials=trials,
         n1=n1, k=k, conf=conf, seed=ctx.obj["seed"])
    data = _one_call("POST", "/audits", payload)
    _echo_json(data["verdict"])
    if data["violated"]:
        # not ctx.exit: non-standalone click swallows the Exit signal
        sys.exit(EXIT_AUDIT_VIOLATION)


@cli.command("attack-lsh")
@click.option("--nbits", type=int, default=None, help="[default: 50]")
@click.option("--k", type=int, default=None, help="hash bins  [default: 4]")
@click.pass_context
def attack_lsh(ctx, nbits, k):
    """Show the candidate-count distinguisher against plain hash blocking."""
    payload = _load_config(ctx)
    _set(payload, nbits=nbits, k=k)
    _echo_json(_one_call("POST", "/attacks/lsh", payload))


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8351, show_default=True)
@click.option("--workers", type=int, default=2, show_default=True,
              help="sweep jobs running concurrently")
def serve(host, port, workers):
    """Host the service over HTTP."""
    import uvicorn

    uvicorn.run(create_app(workers=workers), host=host, port=port)


def main(argv=None) -> None:
    try:
        cli(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        sys.exit(130)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.UsageError as exc:
        exc.show()
        sys.exit(2)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except SystemExit:
        raise
    except Exception as exc:  # noqa: BLE001 - boundary: everything else is code 4
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    sys.exit(0)


if __name__ == "__main__":
    main()

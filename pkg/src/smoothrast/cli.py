"""Command-line interface.

A thin client over the service layer: every subcommand builds the same
request models the HTTP API uses, obtains a response (in process by default,
or from a running server via --server), and writes the artifacts to the
output directory.  Exit codes: 0 success, 1 check failure, 2 usage/config
error.
"""

from __future__ import annotations

import base64
import json
import os
import sys

import click

from .config import (ConfigError, ExperimentConfig, apply_overrides,
                     config_to_dict, load_config)
from .priors import PriorSupportError
from .service import models, ops


def _fail_usage(message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(2)


def _build_config(config_path, seed, out, threads, sets) -> ExperimentConfig:
    try:
        if config_path:
            cfg = load_config(config_path)
        else:
            cfg = ExperimentConfig()
        overrides = {}
        for item in sets:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            overrides[key.strip()] = value.strip()
        if overrides:
            cfg = apply_overrides(cfg, overrides)
        direct = {}
        if seed is not None:
            direct["seed"] = seed
        if out is not None:
            direct["out_dir"] = out
        if threads is not None:
            direct["threads"] = threads
        if direct:
            cfg = apply_overrides(cfg, direct)
        return cfg
    except FileNotFoundError as exc:
        _fail_usage(str(exc))
    except ConfigError as exc:
        _fail_usage(str(exc))


class _Client:
    """Dispatches requests in process or to a remote server."""

    def __init__(self, server: str | None):
        self.server = server.rstrip("/") if server else None

    def _post(self, path: str, payload, response_model):
        import httpx
        resp = httpx.post(f"{self.server}{path}",
                          json=payload.model_dump(mode="json"), timeout=None)
        if resp.status_code != 200:
            click.echo(f"error: server returned {resp.status_code}: "
                       f"{resp.text}", err=True)
            sys.exit(1)
        return response_model.model_validate(resp.json())

    def render(self, cfg):
        req = models.RenderRequest(config=cfg)
        if self.server:
            return self._post("/render", req, models.RenderResponse)
        return ops.render_op(cfg)

    def pose_opt(self, cfg):
        req = models.PoseOptRequest(config=cfg)
        if self.server:
            return self._post("/pose-opt", req, models.PoseOptResponse)
        return ops.pose_opt_op(cfg)

    def gradcheck(self, cfg, fault):
        req = models.GradcheckRequest(config=cfg, fault=fault)
        if self.server:
            return self._post("/gradcheck", req, models.GradcheckResponse)
        return ops.gradcheck_op(cfg, fault)

    def bench(self, cfg):
        req = models.BenchRequest(config=cfg)
        if self.server:
            return self._post("/bench", req, models.BenchResponse)
        return ops.bench_op(cfg)


def _common(fn):
    fn = click.option("--config", "config_path", type=str, default=None,
                      help="YAML config file")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="master seed override")(fn)
    fn = click.option("--out", type=str, default=None,
                      help="output directory override")(fn)
    fn = click.option("--threads", type=int, default=None,
                      help="worker processes for independent trials")(fn)
    fn = click.option("--set", "sets", multiple=True, metavar="KEY=VALUE",
                      help="override any config key (dotted path)")(fn)
    fn = click.option("--server", type=str, default=None,
                      help="run against a smoothrast HTTP service")(fn)
    return fn


def _outdir(cfg: ExperimentConfig) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg.out_dir


def _write_b64(path: str, data_b64: str):
    with open(path, "wb") as fh:
        fh.write(base64.b64decode(data_b64))


@click.group()
def main():
    """Differentiable rendering via randomized smoothing."""


@main.command()
@_common
def render(config_path, seed, out, threads, sets, server):
    """Write hard and soft renders for a sweep of smoothing scales."""
    cfg = _build_config(config_path, seed, out, threads, sets)
    try:
        resp = _Client(server).render(cfg)
    except FileNotFoundError as exc:
        _fail_usage(str(exc))
    except (ConfigError, PriorSupportError) as exc:
        _fail_usage(str(exc))
    outdir = _outdir(cfg)
    for entry in resp.entries:
        _write_b64(os.path.join(outdir, f"{entry.label}.png"), entry.png_b64)
        _write_b64(os.path.join(outdir, f"{entry.label}_rgb.npy"),
                   entry.rgb_raw_b64)
        _write_b64(os.path.join(outdir, f"{entry.label}_sil.npy"),
                   entry.sil_raw_b64)
        click.echo(f"wrote {entry.label} (sigma={entry.sigma:g}, "
                   f"gamma={entry.gamma:g})")


@main.command("pose-opt")
@_common
def pose_opt(config_path, seed, out, threads, sets, server):
    """Fit poses from perturbed starts; write per-trial CSV + JSON summary."""
    cfg = _build_config(config_path, seed, out, threads, sets)
    try:
        resp = _Client(server).pose_opt(cfg)
    except FileNotFoundError as exc:
        _fail_usage(str(exc))
    except (ConfigError, PriorSupportError) as exc:
        _fail_usage(str(exc))
    outdir = _outdir(cfg)
    for result in resp.results:
        tag = f"mag{result.magnitude_deg:g}"
        csv_path = os.path.join(outdir, f"pose_{tag}.csv")
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write("seed,init_err_deg,final_err_deg,iterations,solved\n")
            for row in result.rows:
                fh.write(f"{row.seed},{row.init_err_deg:.6f},"
                         f"{row.final_err_deg:.6f},{row.iterations},"
                         f"{int(row.solved)}\n")
        summary = {
            "magnitude_deg": result.magnitude_deg,
            "threshold_deg": result.threshold_deg,
            "trials": len(result.rows),
            "mean_final_error_deg": result.mean_final_error_deg,
            "std_final_error_deg": result.std_final_error_deg,
            "solved_pct": result.solved_pct,
            "failed_trials": result.failed_trials,
            "config": config_to_dict(cfg),
        }
        if result.threshold_sweep is not None:
            summary["threshold_sweep"] = [
                {"threshold_deg": p.threshold_deg,
                 "solved_fraction": p.solved_fraction}
                for p in result.threshold_sweep]
        with open(os.path.join(outdir, f"pose_{tag}.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2)
        click.echo(f"{tag}: solved {result.solved_pct:.1f}% "
                   f"(mean final {result.mean_final_error_deg:.2f} deg)")


@main.command()
@_common
@click.option("--fault", type=str, default=None, hidden=True,
              help="test hook: inject a fault into one check")
def gradcheck(config_path, seed, out, threads, sets, server, fault):
    """Run oracle and finite-difference checks; exit 1 on any failure."""
    cfg = _build_config(config_path, seed, out, threads, sets)
    try:
        resp = _Client(server).gradcheck(cfg, fault)
    except FileNotFoundError as exc:
        _fail_usage(str(exc))
    except (ConfigError, PriorSupportError) as exc:
        _fail_usage(str(exc))
    outdir = _outdir(cfg)
    report = [c.model_dump() for c in resp.checks]
    with open(os.path.join(outdir, "gradcheck_report.json"), "w",
              encoding="utf-8") as fh:
        json.dump({"checks": report, "passed": resp.passed}, fh, indent=2)
    for c in resp.checks:
        flag = "PASS" if c.passed else "FAIL"
        click.echo(f"{flag} {c.name}: value={c.value:.6g} tol={c.tolerance:.6g}")
    if not resp.passed:
        sys.exit(1)


@main.command()
@_common
def bench(config_path, seed, out, threads, sets, server):
    """Time forward/backward passes across sample counts; write CSV."""
    cfg = _build_config(config_path, seed, out, threads, sets)
    resp = _Client(server).bench(cfg)
    outdir = _outdir(cfg)
    with open(os.path.join(outdir, "bench.csv"), "w", encoding="utf-8") as fh:
        fh.write(resp.csv)
    click.echo(resp.csv.strip())


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve(host, port):
    """Start the HTTP service."""
    import uvicorn

    from .service.app import app
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()

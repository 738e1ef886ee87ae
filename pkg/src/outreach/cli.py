"""Command-line entrypoints: serve, seed-demo, simulate-call, judge run."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import judge as judge_mod
from .backends import ReplayBackend, RemoteBackend
from .config import AppConfig, BadConfig, load_config
from .gateway import UnknownSession
from .service import OutreachService, SimulationIncomplete
from .store import StoreLocked


def _make_service(config: AppConfig) -> OutreachService:
    try:
        return OutreachService.from_config(config)
    except StoreLocked as exc:
        raise click.ClickException(str(exc)) from exc


def _config_from(ctx_params: dict) -> AppConfig:
    config = load_config(ctx_params.get("config"))
    overrides = {}
    if ctx_params.get("store"):
        overrides["store_path"] = ctx_params["store"]
    if ctx_params.get("host"):
        overrides["api_host"] = ctx_params["host"]
    if ctx_params.get("port"):
        overrides["api_port"] = ctx_params["port"]
    if overrides:
        config = AppConfig.model_validate({**config.model_dump(), **overrides})
    return config


@click.group()
def main() -> None:
    """Patient-outreach orchestration service."""


@main.command()
@click.option("--config", type=click.Path(exists=True), default=None, help="JSON config file")
@click.option("--store", default=None, help="event log path (overrides config)")
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
def serve(**params) -> None:
    """Run the REST API and scheduler ticker."""
    from .api import serve as run_server

    config = _config_from(params)
    service = _make_service(config)
    click.echo(f"serving on http://{config.api_host}:{config.api_port}", err=True)
    run_server(
        service,
        host=config.api_host,
        port=config.api_port,
        api_token=config.api_token,
        tick_interval_seconds=config.tick_interval_seconds,
    )


@main.command("seed-demo")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--store", default=None, help="event log path (overrides config)")
def seed_demo(**params) -> None:
    """Create demo patients and schedules in the store."""
    service = _make_service(_config_from(params))
    try:
        created = service.seed_demo()
    finally:
        service.close()
    click.echo(json.dumps(created, sort_keys=True))


@main.command("simulate-call")
@click.option("--schedule", "schedule_id", required=True, help="schedule id to drive")
@click.option(
    "--script",
    "script_path",
    required=True,
    type=click.Path(exists=True),
    help="JSON file: list of patient utterances",
)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--store", default=None, help="event log path (overrides config)")
def simulate_call(schedule_id: str, script_path: str, **params) -> None:
    """Drive one call end to end with scripted patient utterances."""
    script = json.loads(Path(script_path).read_text("utf-8"))
    if not isinstance(script, list) or not all(isinstance(u, str) for u in script):
        raise click.ClickException("script file must be a JSON list of strings")
    service = _make_service(_config_from(params))
    try:
        summary = service.simulate_call(schedule_id, script)
    except KeyError:
        raise click.ClickException(f"no such schedule: {schedule_id}")
    except UnknownSession:
        raise click.ClickException(
            f"schedule {schedule_id} is in progress but has no live session "
            "(it likely belongs to another process); wait for its timeout"
        )
    except SimulationIncomplete as exc:
        click.echo(
            json.dumps(
                {
                    "error": "SimulationIncomplete",
                    "schedule_id": exc.schedule.id,
                    "status": exc.schedule.status.value,
                    "attempt": exc.schedule.attempt,
                },
                sort_keys=True,
            ),
            err=True,
        )
        sys.exit(1)
    finally:
        service.close()
    click.echo(summary.to_canonical_json())


@main.group()
def judge() -> None:
    """Pairwise summary-quality evaluation."""


@judge.command("run")
@click.option(
    "--instances",
    "instances_path",
    required=True,
    type=click.Path(exists=True),
    help="JSON-lines file of evaluation instances",
)
@click.option(
    "--judge",
    "judge_config_path",
    required=True,
    type=click.Path(exists=True),
    help="JSON backend config: scripted | replay | remote",
)
@click.option("--out", "out_dir", required=True, type=click.Path(), help="output directory")
@click.option("--workers", type=int, default=1, help="parallel judge passes")
@click.option(
    "--template",
    "template_path",
    type=click.Path(exists=True),
    default=None,
    help="judge prompt template (defaults to the packaged one)",
)
def judge_run(
    instances_path: str,
    judge_config_path: str,
    out_dir: str,
    workers: int,
    template_path: str | None,
) -> None:
    """Judge candidate summaries against the baseline and write reports."""
    instances = [
        judge_mod.EvalInstance.model_validate(json.loads(line))
        for line in Path(instances_path).read_text("utf-8").splitlines()
        if line.strip()
    ]
    backend = _judge_backend(json.loads(Path(judge_config_path).read_text("utf-8")))
    template = (
        Path(template_path).read_text("utf-8")
        if template_path
        else judge_mod.DEFAULT_JUDGE_PROMPT
    )
    records = judge_mod.run_judging(backend, instances, template, max_workers=workers)
    report = judge_mod.aggregate(judge_mod.group_records(records))
    judge_mod.write_outputs(records, report, out_dir)
    click.echo(judge_mod.render_text(report))


def _judge_backend(config: dict):
    kind = config.get("kind")
    if kind == "scripted":
        rule = config.get("rule", "prefer_longer")
        try:
            chooser = judge_mod.SCRIPTED_JUDGES[rule]
        except KeyError:
            raise BadConfig(
                f"unknown scripted judge rule {rule!r}; "
                f"options: {sorted(judge_mod.SCRIPTED_JUDGES)}"
            ) from None
        return judge_mod.ComparativeJudge(chooser)
    if kind == "replay":
        return ReplayBackend(config["fixture"])
    if kind == "remote":
        return RemoteBackend(
            config["url"],
            config.get("model", "judge"),
            timeout_ms=int(config.get("timeout_ms", 30_000)),
        )
    raise BadConfig(f"unknown judge backend kind {kind!r}")


if __name__ == "__main__":
    main()

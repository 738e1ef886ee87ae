"""Service configuration: one JSON file, overridable from the environment.

Environment overrides (all optional):

    STORE_PATH              event log location ("memory" for in-memory)
    API_HOST / API_PORT     bind address for serve
    API_TOKEN               static bearer token; unset disables auth
    TICK_INTERVAL_SECONDS   scheduler ticker cadence for serve
    RETRY_BACKOFF_SECONDS   delay before a failed call is retried
    CALL_TIMEOUT_SECONDS    in-progress call timeout
    MAX_ATTEMPTS_DEFAULT    default attempt budget per schedule
    BACKEND_KIND            scripted | replay | remote
    BACKEND_URL             remote backend base URL
    BACKEND_MODEL           remote model name
    BACKEND_TIMEOUT_MS      remote request timeout
    BACKEND_FIXTURE         replay fixture path
    INSTRUMENTS_DIR         directory of instrument definition JSON files
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Mapping, Optional

from .backends import Backend, BackendKind, ReplayBackend, RemoteBackend, ScriptedBackend
from .domain import Entity
from .instruments import InstrumentRegistry
from .resources import data_path, data_text
from .scheduler import SchedulerConfig


class BadConfig(Exception):
    """Configuration file or overrides do not form a runnable setup."""


class BackendConfig(Entity):
    kind: BackendKind = BackendKind.SCRIPTED
    url: Optional[str] = None
    model: str = "demo-model"
    timeout_ms: int = 10_000
    fixture: Optional[str] = None


class AppConfig(Entity):
    store_path: str = "outreach_events.jsonl"
    api_host: str = "127.0.0.1"
    api_port: int = 8000
    api_token: Optional[str] = None
    tick_interval_seconds: int = 5
    scheduler: SchedulerConfig = SchedulerConfig()
    backend: BackendConfig = BackendConfig()
    instruments_dir: Optional[str] = None  # None -> packaged demo instruments
    prompt_template_path: Optional[str] = None
    keywords_path: Optional[str] = None


_ENV_MAP = {
    "STORE_PATH": ("store_path", str),
    "API_HOST": ("api_host", str),
    "API_PORT": ("api_port", int),
    "API_TOKEN": ("api_token", str),
    "TICK_INTERVAL_SECONDS": ("tick_interval_seconds", int),
    "INSTRUMENTS_DIR": ("instruments_dir", str),
}
_SCHED_ENV = {
    "RETRY_BACKOFF_SECONDS": "retry_backoff_seconds",
    "CALL_TIMEOUT_SECONDS": "call_timeout_seconds",
    "MAX_ATTEMPTS_DEFAULT": "max_attempts_default",
}
_BACKEND_ENV = {
    "BACKEND_KIND": ("kind", str),
    "BACKEND_URL": ("url", str),
    "BACKEND_MODEL": ("model", str),
    "BACKEND_TIMEOUT_MS": ("timeout_ms", int),
    "BACKEND_FIXTURE": ("fixture", str),
}


def load_config(
    path: str | Path | None = None, env: Mapping[str, str] | None = None
) -> AppConfig:
    env = os.environ if env is None else env
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise BadConfig(f"cannot read config {path}: {exc}") from exc
    try:
        config = AppConfig.model_validate(data)
    except Exception as exc:
        raise BadConfig(str(exc)) from exc

    updates: dict = {}
    for name, (field, cast) in _ENV_MAP.items():
        if name in env:
            updates[field] = cast(env[name])
    sched = {f: int(env[n]) for n, f in _SCHED_ENV.items() if n in env}
    if sched:
        updates["scheduler"] = SchedulerConfig.model_validate(
            {**config.scheduler.model_dump(), **sched}
        )
    backend = {f: cast(env[n]) for n, (f, cast) in _BACKEND_ENV.items() if n in env}
    if backend:
        updates["backend"] = BackendConfig.model_validate(
            {**config.backend.model_dump(), **backend}
        )
    if updates:
        try:
            config = AppConfig.model_validate({**config.model_dump(), **updates})
        except Exception as exc:
            raise BadConfig(str(exc)) from exc
    return config


def build_backend(config: BackendConfig) -> Backend:
    if config.kind is BackendKind.SCRIPTED:
        return ScriptedBackend()
    if config.kind is BackendKind.REPLAY:
        if not config.fixture:
            raise BadConfig("replay backend requires a fixture file")
        return ReplayBackend(config.fixture)
    if not config.url:
        raise BadConfig("remote backend requires BACKEND_URL")
    return RemoteBackend(config.url, config.model, timeout_ms=config.timeout_ms)


def build_registry(config: AppConfig) -> InstrumentRegistry:
    directory = config.instruments_dir or data_path("instruments")
    return InstrumentRegistry.from_dir(directory)


def load_prompt_template(config: AppConfig) -> str:
    if config.prompt_template_path:
        return Path(config.prompt_template_path).read_text("utf-8")
    return data_text("prompts", "system_prompt.txt")

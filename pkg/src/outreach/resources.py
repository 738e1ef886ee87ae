"""Access to config files shipped inside the package."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Any


def data_path(*parts: str) -> Path:
    base = resources.files("outreach") / "data"
    return Path(str(base.joinpath(*parts)))


def data_text(*parts: str) -> str:
    return (resources.files("outreach") / "data").joinpath(*parts).read_text("utf-8")


def data_json(*parts: str) -> Any:
    return json.loads(data_text(*parts))

from __future__ import annotations

from datetime import datetime, timezone

import pytest

from outreach.backends import ScriptedBackend
from outreach.config import AppConfig, build_registry
from outreach.domain import Instrument, InstrumentItem
from outreach.scheduler import SchedulerConfig
from outreach.service import OutreachService, SimClock
from outreach.store import Store

T0 = datetime(2026, 8, 10, 12, 0, 0, tzinfo=timezone.utc)


@pytest.fixture
def clock() -> SimClock:
    return SimClock(T0)


@pytest.fixture
def registry():
    return build_registry(AppConfig())


@pytest.fixture
def qol3(registry) -> Instrument:
    return registry.get("qol3")


@pytest.fixture
def service(clock, registry) -> OutreachService:
    return OutreachService(
        Store(None),
        registry,
        ScriptedBackend(),
        scheduler_config=SchedulerConfig(),
        clock=clock,
    )


@pytest.fixture
def seeded(service):
    created = service.seed_demo()
    return service, created


def make_item(
    item_id: str = "q1",
    scale_min: int = 1,
    scale_max: int = 5,
    labels: dict[int, str] | None = None,
) -> InstrumentItem:
    return InstrumentItem(
        id=item_id,
        prompt=f"how is your {item_id}?",
        scale_min=scale_min,
        scale_max=scale_max,
        labels=labels or {},
    )


def make_instrument(n_items: int = 3, instrument_id: str = "inst") -> Instrument:
    return Instrument(
        id=instrument_id,
        title=f"{instrument_id} ({n_items} items)",
        items=[make_item(f"q{i}") for i in range(1, n_items + 1)],
    )


def demo_patient(patient_id: str = "p1", modality: str = "voice") -> dict:
    return {
        "id": patient_id,
        "display_name": "Pat Doe",
        "phone": "+15551234567",
        "preferred_modality": modality,
        "timezone": "America/New_York",
        "profile": {
            "demographics": {"age": 72, "preferred_language": "English", "health_literacy": "medium"},
            "clinical": [{"kind": "diagnosis", "text": "Crohn's disease"}],
            "interaction": {"tone_preference": "warm", "topics_discussed": ["sleep"]},
        },
    }

"""Instrument definitions, deterministic answer parsing, and scoring.

Pure functions over immutable definitions. The parser is the safety floor
behind every backend: an answer is recorded only when this module (or an
equally validated path) recognizes exactly one in-range value.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Optional

from pydantic import model_validator

from .domain import Entity, Instrument, InstrumentItem

NUMBER_WORDS = {
    "one": 1,
    "two": 2,
    "three": 3,
    "four": 4,
    "five": 5,
    "six": 6,
    "seven": 7,
    "eight": 8,
    "nine": 9,
    "ten": 10,
}

_INT_TOKEN_RE = re.compile(r"\d+")
_WORD_RE = re.compile(r"[a-zA-Z]+")


class SheetMismatch(Exception):
    """The answer sheet names a different instrument than the one scoring it."""


class UnknownInstrument(Exception):
    def __init__(self, instrument_id: str):
        self.instrument_id = instrument_id
        super().__init__(f"unknown instrument: {instrument_id!r}")


class AnswerSheet(Entity):
    instrument_id: str
    answers: dict[str, int] = {}
    source_turns: dict[str, int] = {}

    @model_validator(mode="after")
    def _keys_align(self) -> "AnswerSheet":
        extra = set(self.source_turns) - set(self.answers)
        if extra:
            raise ValueError(f"source_turns for unanswered items: {sorted(extra)}")
        return self

    def record(self, item: InstrumentItem, value: int, turn_index: int) -> None:
        if not (item.scale_min <= value <= item.scale_max):
            raise ValueError(f"answer {value} outside scale of item {item.id!r}")
        self.answers = {**self.answers, item.id: value}
        self.source_turns = {**self.source_turns, item.id: turn_index}


class ScoreResult(Entity):
    score: Optional[int] = None
    completeness: float
    reasoning: str


def _standalone_ints(text: str) -> set[int]:
    """Integer tokens that are not part of a word, decimal, or signed number."""
    found: set[int] = set()
    for m in _INT_TOKEN_RE.finditer(text):
        start, end = m.span()
        before = text[start - 1] if start > 0 else ""
        after = text[end] if end < len(text) else ""
        if before.isalnum() or before == "_":
            continue
        if before == "." and start >= 2 and text[start - 2].isdigit():
            continue  # decimal tail, e.g. the 5 in "4.5"
        if before == "-":
            continue  # negative numbers are never ordinal answers
        if after.isalnum() or after == "_":
            continue
        if after == "." and end + 1 < len(text) and text[end + 1].isdigit():
            continue  # decimal head, e.g. the 4 in "4.5"
        found.add(int(m.group()))
    return found


def _number_words(text: str) -> set[int]:
    return {
        NUMBER_WORDS[w]
        for w in (m.group().lower() for m in _WORD_RE.finditer(text))
        if w in NUMBER_WORDS
    }


def _label_matches(item: InstrumentItem, text: str) -> set[int]:
    matched: set[int] = set()
    for ordinal, label in item.labels.items():
        pattern = r"(?<!\w)" + re.escape(label) + r"(?!\w)"
        if re.search(pattern, text, flags=re.IGNORECASE):
            matched.add(ordinal)
    return matched


def parse_answer(item: InstrumentItem, utterance: str) -> Optional[int]:
    """Recognize one ordinal answer in free text, or nothing.

    Recognition order, first rule with any candidate wins:
      1. standalone integer token within the item's scale;
      2. spelled-out number word ("one".."ten") within the scale;
      3. case-insensitive exact occurrence of a label from item.labels.

    Multiple distinct in-range candidates in one utterance are ambiguous and
    yield nothing - a wrong clinical score is worse than a re-ask.
    """
    in_range = lambda v: item.scale_min <= v <= item.scale_max  # noqa: E731
    for candidates in (
        {v for v in _standalone_ints(utterance) if in_range(v)},
        {v for v in _number_words(utterance) if in_range(v)},
        {v for v in _label_matches(item, utterance) if in_range(v)},
    ):
        if len(candidates) == 1:
            return candidates.pop()
        if len(candidates) > 1:
            return None  # ambiguous
    return None


def score(instrument: Instrument, sheet: AnswerSheet) -> ScoreResult:
    """Score an answer sheet: sum of answers, reported only when complete.

    Reasoning is a deterministic audit trail: per-item values with the
    transcript turn each came from, or the list of missing items.
    """
    if sheet.instrument_id != instrument.id:
        raise SheetMismatch(
            f"sheet is for {sheet.instrument_id!r}, instrument is {instrument.id!r}"
        )
    total = len(instrument.items)
    answered = [item for item in instrument.items if item.id in sheet.answers]
    completeness = len(answered) / total
    if completeness == 1.0:
        parts = [
            f"{item.id}: {sheet.answers[item.id]} (from turn {sheet.source_turns.get(item.id, -1)})"
            for item in instrument.items
        ]
        return ScoreResult(
            score=sum(sheet.answers[item.id] for item in instrument.items),
            completeness=1.0,
            reasoning="; ".join(parts),
        )
    missing = [item.id for item in instrument.items if item.id not in sheet.answers]
    return ScoreResult(
        score=None,
        completeness=completeness,
        reasoning="missing items: " + ", ".join(missing),
    )


class InstrumentRegistry:
    """Instrument definitions loaded from JSON files; unknown fields rejected."""

    def __init__(self, instruments: dict[str, Instrument] | None = None):
        self._instruments: dict[str, Instrument] = dict(instruments or {})

    @classmethod
    def from_dir(cls, directory: str | Path) -> "InstrumentRegistry":
        registry = cls()
        for path in sorted(Path(directory).glob("*.json")):
            registry.add(Instrument.model_validate(json.loads(path.read_text("utf-8"))))
        return registry

    def add(self, instrument: Instrument) -> None:
        self._instruments[instrument.id] = instrument

    def get(self, instrument_id: str) -> Instrument:
        try:
            return self._instruments[instrument_id]
        except KeyError:
            raise UnknownInstrument(instrument_id) from None

    def has(self, instrument_id: str) -> bool:
        return instrument_id in self._instruments

    def all(self) -> list[Instrument]:
        return [self._instruments[k] for k in sorted(self._instruments)]

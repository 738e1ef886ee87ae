"""Pairwise judge harness for summary quality.

Each candidate summary is compared against a single fixed baseline reference
on four dimensions. Every pair is judged twice with presentation order
swapped; an order-dependent preference counts as a tie, which neutralizes
positional bias by construction. Win/tie rates aggregate into per-dataset
rows whose integer percentages always sum to exactly 100 (largest-remainder
apportionment).
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from typing import Callable, Iterable, Mapping, Optional, Sequence

from pydantic import field_validator, model_validator

from .backends import Backend, ChatMessage, Role
from .domain import Entity, canonical_json
from .resources import data_text

DIMENSIONS = ("relevance", "coherence", "fluency", "consistency")


class SameOrder(Exception):
    """Reconciliation needs two passes with opposite presentation orders."""


class EmptyGroup(Exception):
    """Aggregation over an empty verdict group is undefined."""


class PassOrder(str, Enum):
    CANDIDATE_FIRST = "candidate_first"
    REFERENCE_FIRST = "reference_first"


class Choice(str, Enum):
    FIRST = "first"
    SECOND = "second"
    TIE = "tie"


class ReconciledOutcome(str, Enum):
    CANDIDATE_WIN = "candidate_win"
    REFERENCE_WIN = "reference_win"
    TIE = "tie"


class EvalInstance(Entity):
    dataset: str
    instance_id: str
    source_text: str
    candidate_summary: str
    reference_summary: str
    candidate_model: str
    reference_model: str

    @field_validator("candidate_summary", "reference_summary")
    @classmethod
    def _non_empty(cls, v: str) -> str:
        if not v:
            raise ValueError("summaries must be non-empty")
        return v


class PassVerdict(Entity):
    order: PassOrder
    per_dimension: dict[str, Choice]
    overall: Choice
    rationale: str

    @model_validator(mode="after")
    def _complete(self) -> "PassVerdict":
        if set(self.per_dimension) != set(DIMENSIONS):
            raise ValueError(f"per_dimension must cover exactly {DIMENSIONS}")
        if not self.rationale:
            raise ValueError("rationale must be non-empty")
        return self


class ReconciledVerdict(Entity):
    instance_id: str
    outcome: ReconciledOutcome
    passes: tuple[PassVerdict, PassVerdict]

    @model_validator(mode="after")
    def _opposite_orders(self) -> "ReconciledVerdict":
        if self.passes[0].order == self.passes[1].order:
            raise ValueError("passes must have opposite orders")
        return self


class JudgedRecord(Entity):
    """One instance's reconciled result plus the grouping keys used by
    aggregation and the verdicts.jsonl output."""

    dataset: str
    candidate_model: str
    reference_model: str
    instance_id: str
    outcome: ReconciledOutcome
    passes: tuple[PassVerdict, PassVerdict]


class ReportRow(Entity):
    dataset: str
    candidate_model: str
    candidate_pct: int
    reference_pct: int
    tie_pct: int

    @model_validator(mode="after")
    def _sums_to_100(self) -> "ReportRow":
        if self.candidate_pct + self.reference_pct + self.tie_pct != 100:
            raise ValueError("row percentages must sum to exactly 100")
        return self


class AggregateReport(Entity):
    rows: list[ReportRow] = []
    n_per_row: list[int] = []

    @model_validator(mode="after")
    def _aligned(self) -> "AggregateReport":
        if len(self.rows) != len(self.n_per_row):
            raise ValueError("n_per_row must align with rows")
        return self


# -- prompt -----------------------------------------------------------------

# Versioned config file; see data/prompts/judge_prompt.txt.
DEFAULT_JUDGE_PROMPT = data_text("prompts", "judge_prompt.txt")

_SECTION_RE = re.compile(
    r"SUMMARY A:\n(?P<a>.*?)\n\nSUMMARY B:\n(?P<b>.*?)\n\nFor each dimension",
    re.DOTALL,
)


def build_judge_messages(
    instance: EvalInstance, order: PassOrder, template: str = DEFAULT_JUDGE_PROMPT
) -> list[ChatMessage]:
    if order is PassOrder.CANDIDATE_FIRST:
        first, second = instance.candidate_summary, instance.reference_summary
    else:
        first, second = instance.reference_summary, instance.candidate_summary
    prompt = template.format(
        source_text=instance.source_text, summary_a=first, summary_b=second
    )
    return [
        ChatMessage(role=Role.SYSTEM, content="You judge summary quality."),
        ChatMessage(role=Role.USER, content=prompt),
    ]


def extract_summaries(prompt: str) -> tuple[str, str]:
    """Pull the two presented summaries back out of a rendered judge prompt;
    this is what scripted judge backends key their decisions on."""
    match = _SECTION_RE.search(prompt)
    if not match:
        raise ValueError("prompt does not contain the summary sections")
    return match.group("a"), match.group("b")


def parse_judge_reply(text: str) -> Optional[dict]:
    """Parse the structured judge reply; None when it does not conform."""
    candidate = text.strip()
    fence = re.search(r"```(?:json)?\s*(.*?)```", candidate, re.DOTALL)
    if fence:
        candidate = fence.group(1).strip()
    start, end = candidate.find("{"), candidate.rfind("}")
    if start == -1 or end <= start:
        return None
    try:
        data = json.loads(candidate[start : end + 1])
    except json.JSONDecodeError:
        return None
    if not isinstance(data, dict):
        return None
    for key in (*DIMENSIONS, "overall"):
        value = data.get(key)
        if not isinstance(value, str) or value.lower() not in ("first", "second", "tie"):
            return None
        data[key] = value.lower()
    data["rationale"] = str(data.get("rationale") or "(no rationale given)")
    return data


def judge_pass(
    backend: Backend,
    instance: EvalInstance,
    order: PassOrder,
    template: str = DEFAULT_JUDGE_PROMPT,
) -> PassVerdict:
    """One judging pass. Malformed replies are retried once, then recorded
    as an all-tie verdict marked unparseable rather than dropped."""
    messages = build_judge_messages(instance, order, template)
    for _ in range(2):
        reply = backend.generate_reply(messages)  # BackendUnavailable propagates
        parsed = parse_judge_reply(reply)
        if parsed is not None:
            return PassVerdict(
                order=order,
                per_dimension={d: Choice(parsed[d]) for d in DIMENSIONS},
                overall=Choice(parsed["overall"]),
                rationale=parsed["rationale"],
            )
    return PassVerdict(
        order=order,
        per_dimension={d: Choice.TIE for d in DIMENSIONS},
        overall=Choice.TIE,
        rationale="unparseable",
    )


def _resolve(choice: Choice, order: PassOrder) -> ReconciledOutcome:
    if choice is Choice.TIE:
        return ReconciledOutcome.TIE
    picked_first = choice is Choice.FIRST
    candidate_first = order is PassOrder.CANDIDATE_FIRST
    if picked_first == candidate_first:
        return ReconciledOutcome.CANDIDATE_WIN
    return ReconciledOutcome.REFERENCE_WIN


def reconcile(pass_a: PassVerdict, pass_b: PassVerdict) -> ReconciledOutcome:
    """Combine the two order-swapped passes: the candidate (or reference)
    wins only when both passes agree; any tie or disagreement is a tie."""
    if pass_a.order == pass_b.order:
        raise SameOrder(pass_a.order.value)
    a = _resolve(pass_a.overall, pass_a.order)
    b = _resolve(pass_b.overall, pass_b.order)
    if a is b and a is not ReconciledOutcome.TIE:
        return a
    return ReconciledOutcome.TIE


def judge_instance(
    backend: Backend, instance: EvalInstance, template: str = DEFAULT_JUDGE_PROMPT
) -> JudgedRecord:
    first = judge_pass(backend, instance, PassOrder.CANDIDATE_FIRST, template)
    second = judge_pass(backend, instance, PassOrder.REFERENCE_FIRST, template)
    return JudgedRecord(
        dataset=instance.dataset,
        candidate_model=instance.candidate_model,
        reference_model=instance.reference_model,
        instance_id=instance.instance_id,
        outcome=reconcile(first, second),
        passes=(first, second),
    )


def run_judging(
    backend: Backend,
    instances: Sequence[EvalInstance],
    template: str = DEFAULT_JUDGE_PROMPT,
    *,
    max_workers: int = 1,
) -> list[JudgedRecord]:
    """Judge every instance; passes are independent so they may run with
    bounded parallelism. Results keep the input order."""
    if max_workers <= 1:
        return [judge_instance(backend, i, template) for i in instances]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(lambda i: judge_instance(backend, i, template), instances))


# -- aggregation --------------------------------------------------------------


def apportion_percentages(counts: Sequence[int]) -> list[int]:
    """Integer percentages by largest remainder: floors first, then leftover
    points go to the largest fractional remainders, earlier column winning
    exact ties. The result always sums to exactly 100."""
    total = sum(counts)
    if total <= 0:
        raise EmptyGroup("cannot apportion an empty group")
    floors = [count * 100 // total for count in counts]
    remainders = [count * 100 % total for count in counts]
    leftover = 100 - sum(floors)
    order = sorted(range(len(counts)), key=lambda i: (-remainders[i], i))
    result = list(floors)
    for i in order[:leftover]:
        result[i] += 1
    return result


def group_records(records: Iterable[JudgedRecord]) -> dict[tuple[str, str], list[ReconciledOutcome]]:
    """Group outcomes by (dataset, candidate_model), blocked by model in
    first-appearance order and dataset order within each block."""
    by_key: dict[tuple[str, str], list[ReconciledOutcome]] = {}
    model_order: list[str] = []
    dataset_order: list[str] = []
    for record in records:
        if record.candidate_model not in model_order:
            model_order.append(record.candidate_model)
        if record.dataset not in dataset_order:
            dataset_order.append(record.dataset)
        by_key.setdefault((record.dataset, record.candidate_model), []).append(record.outcome)
    ordered: dict[tuple[str, str], list[ReconciledOutcome]] = {}
    for model in model_order:
        for dataset in dataset_order:
            key = (dataset, model)
            if key in by_key:
                ordered[key] = by_key[key]
    return ordered


def aggregate(
    groups: Mapping[tuple[str, str], Sequence[ReconciledOutcome]]
) -> AggregateReport:
    """Turn grouped verdicts into integer win/tie percentage rows."""
    rows: list[ReportRow] = []
    n_per_row: list[int] = []
    for (dataset, model), outcomes in groups.items():
        if not outcomes:
            raise EmptyGroup(f"{dataset}/{model}")
        counts = (
            sum(1 for o in outcomes if o is ReconciledOutcome.CANDIDATE_WIN),
            sum(1 for o in outcomes if o is ReconciledOutcome.REFERENCE_WIN),
            sum(1 for o in outcomes if o is ReconciledOutcome.TIE),
        )
        candidate_pct, reference_pct, tie_pct = apportion_percentages(counts)
        rows.append(
            ReportRow(
                dataset=dataset,
                candidate_model=model,
                candidate_pct=candidate_pct,
                reference_pct=reference_pct,
                tie_pct=tie_pct,
            )
        )
        n_per_row.append(len(outcomes))
    return AggregateReport(rows=rows, n_per_row=n_per_row)


# -- rendering ----------------------------------------------------------------


def render_csv(report: AggregateReport) -> str:
    lines = ["dataset,candidate_model,candidate_pct,reference_pct,tie_pct,n"]
    for row, n in zip(report.rows, report.n_per_row):
        lines.append(
            f"{row.dataset},{row.candidate_model},{row.candidate_pct},"
            f"{row.reference_pct},{row.tie_pct},{n}"
        )
    return "\n".join(lines) + "\n"


def render_text(report: AggregateReport) -> str:
    """Aligned table, one block per candidate model."""
    blocks: list[str] = []
    models: list[str] = []
    for row in report.rows:
        if row.candidate_model not in models:
            models.append(row.candidate_model)
    width = max([len(r.dataset) for r in report.rows] + [len("Dataset")], default=len("Dataset"))
    header = f"{'Dataset':<{width}} | Candidate % | Reference % | Tie %"
    for model in models:
        lines = [f"Candidate model: {model}", header, "-" * len(header)]
        for row, n in zip(report.rows, report.n_per_row):
            if row.candidate_model != model:
                continue
            lines.append(
                f"{row.dataset:<{width}} | {row.candidate_pct:>11} | "
                f"{row.reference_pct:>11} | {row.tie_pct:>5}"
            )
        blocks.append("\n".join(lines))
    if not blocks:
        return header + "\n"
    return "\n\n".join(blocks) + "\n"


def render_report(report: AggregateReport) -> dict[str, str]:
    return {"csv": render_csv(report), "text": render_text(report)}


# -- deterministic judge backends ---------------------------------------------


class ComparativeJudge(Backend):
    """Deterministic judge backend: decides from the two presented summary
    texts via a pure chooser function, and answers in the judge contract."""

    def __init__(self, chooser: Callable[[str, str], Choice]):
        self._chooser = chooser

    def generate_reply(self, history: list[ChatMessage]) -> str:
        prompt = history[-1].content
        first, second = extract_summaries(prompt)
        choice = self._chooser(first, second)
        verdict = {d: choice.value for d in DIMENSIONS}
        verdict["overall"] = choice.value
        verdict["rationale"] = f"scripted judge chose {choice.value}"
        return canonical_json(verdict)


def prefer_longer(first: str, second: str) -> Choice:
    """Order-symmetric demo rule: the longer summary wins."""
    if len(first) > len(second):
        return Choice.FIRST
    if len(second) > len(first):
        return Choice.SECOND
    return Choice.TIE


def always_first(first: str, second: str) -> Choice:
    """Pure position bias: whatever is presented first wins."""
    return Choice.FIRST


SCRIPTED_JUDGES: dict[str, Callable[[str, str], Choice]] = {
    "prefer_longer": prefer_longer,
    "always_first": always_first,
}


def write_outputs(
    records: Sequence[JudgedRecord], report: AggregateReport, out_dir
) -> None:
    """Write report.csv, report.txt, and verdicts.jsonl into out_dir."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(render_csv(report), "utf-8")
    (out / "report.txt").write_text(render_text(report), "utf-8")
    with (out / "verdicts.jsonl").open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.to_canonical_json() + "\n")

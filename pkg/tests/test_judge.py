"""Judge harness: passes, swap reconciliation, apportionment, rendering."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from outreach.backends import Backend, ChatMessage
from outreach.judge import (
    Choice,
    ComparativeJudge,
    DIMENSIONS,
    EmptyGroup,
    EvalInstance,
    PassOrder,
    PassVerdict,
    ReconciledOutcome,
    SameOrder,
    aggregate,
    always_first,
    apportion_percentages,
    build_judge_messages,
    extract_summaries,
    group_records,
    judge_instance,
    judge_pass,
    prefer_longer,
    reconcile,
    render_csv,
    render_report,
    render_text,
    run_judging,
)


def _instance(
    candidate="a detailed candidate summary",
    reference="short ref",
    instance_id="i1",
    dataset="setA",
    model="model-x",
) -> EvalInstance:
    return EvalInstance(
        dataset=dataset,
        instance_id=instance_id,
        source_text="the source document text",
        candidate_summary=candidate,
        reference_summary=reference,
        candidate_model=model,
        reference_model="baseline",
    )


def _verdict(overall: Choice, order: PassOrder) -> PassVerdict:
    return PassVerdict(
        order=order,
        per_dimension={d: overall for d in DIMENSIONS},
        overall=overall,
        rationale="test",
    )


class GarbageBackend(Backend):
    def __init__(self):
        self.calls = 0

    def generate_reply(self, history: list[ChatMessage]) -> str:
        self.calls += 1
        return "?? not json at all ??"


class TestJudgePass:
    def test_prefer_longer_tracks_position(self):
        judge = ComparativeJudge(prefer_longer)
        instance = _instance(candidate="long long long candidate", reference="tiny")
        first_pass = judge_pass(judge, instance, PassOrder.CANDIDATE_FIRST)
        assert first_pass.overall is Choice.FIRST
        second_pass = judge_pass(judge, instance, PassOrder.REFERENCE_FIRST)
        assert second_pass.overall is Choice.SECOND

    def test_identical_summaries_tie(self):
        judge = ComparativeJudge(prefer_longer)
        instance = _instance(candidate="same text", reference="same text")
        verdict = judge_pass(judge, instance, PassOrder.CANDIDATE_FIRST)
        assert verdict.overall is Choice.TIE
        assert all(v is Choice.TIE for v in verdict.per_dimension.values())

    def test_garbage_reply_retried_once_then_all_tie(self):
        backend = GarbageBackend()
        verdict = judge_pass(backend, _instance(), PassOrder.CANDIDATE_FIRST)
        assert backend.calls == 2
        assert verdict.overall is Choice.TIE
        assert verdict.rationale == "unparseable"

    def test_prompt_contains_summaries_in_order(self):
        messages = build_judge_messages(_instance(), PassOrder.REFERENCE_FIRST)
        a, b = extract_summaries(messages[-1].content)
        assert a == "short ref" and b == "a detailed candidate summary"


class TestReconcile:
    def test_consistent_candidate_preference_wins(self):
        outcome = reconcile(
            _verdict(Choice.FIRST, PassOrder.CANDIDATE_FIRST),
            _verdict(Choice.SECOND, PassOrder.REFERENCE_FIRST),
        )
        assert outcome is ReconciledOutcome.CANDIDATE_WIN

    def test_position_following_judge_reconciles_to_tie(self):
        outcome = reconcile(
            _verdict(Choice.FIRST, PassOrder.CANDIDATE_FIRST),
            _verdict(Choice.FIRST, PassOrder.REFERENCE_FIRST),
        )
        assert outcome is ReconciledOutcome.TIE

    def test_any_tie_is_tie(self):
        outcome = reconcile(
            _verdict(Choice.TIE, PassOrder.CANDIDATE_FIRST),
            _verdict(Choice.SECOND, PassOrder.REFERENCE_FIRST),
        )
        assert outcome is ReconciledOutcome.TIE

    def test_same_order_rejected(self):
        with pytest.raises(SameOrder):
            reconcile(
                _verdict(Choice.FIRST, PassOrder.CANDIDATE_FIRST),
                _verdict(Choice.TIE, PassOrder.CANDIDATE_FIRST),
            )

    def test_swap_symmetry_for_order_blind_judges(self):
        """A judge that is a pure function of the texts (order ignored) can
        never produce a tie by disagreement: enumerate all its verdicts."""
        for preference in ("candidate", "reference", "tie"):
            if preference == "candidate":
                pass_a = _verdict(Choice.FIRST, PassOrder.CANDIDATE_FIRST)
                pass_b = _verdict(Choice.SECOND, PassOrder.REFERENCE_FIRST)
                expected = ReconciledOutcome.CANDIDATE_WIN
            elif preference == "reference":
                pass_a = _verdict(Choice.SECOND, PassOrder.CANDIDATE_FIRST)
                pass_b = _verdict(Choice.FIRST, PassOrder.REFERENCE_FIRST)
                expected = ReconciledOutcome.REFERENCE_WIN
            else:
                pass_a = _verdict(Choice.TIE, PassOrder.CANDIDATE_FIRST)
                pass_b = _verdict(Choice.TIE, PassOrder.REFERENCE_FIRST)
                expected = ReconciledOutcome.TIE
            assert reconcile(pass_a, pass_b) is expected


class TestApportionment:
    def test_exact_counts_over_100(self):
        assert apportion_percentages((43, 17, 40)) == [43, 17, 40]
        assert apportion_percentages((14, 51, 35)) == [14, 51, 35]

    def test_equal_thirds_give_first_column_the_point(self):
        # 1/3 each of n=3: floors 33+33+33, one point left, remainders equal,
        # the first-listed column takes it.
        assert apportion_percentages((1, 1, 1)) == [34, 33, 33]

    def test_zero_total_rejected(self):
        with pytest.raises(EmptyGroup):
            apportion_percentages((0, 0, 0))

    @settings(max_examples=500)
    @given(
        st.tuples(
            st.integers(min_value=0, max_value=10_000),
            st.integers(min_value=0, max_value=10_000),
            st.integers(min_value=0, max_value=10_000),
        ).filter(lambda t: sum(t) > 0)
    )
    def test_rows_always_sum_to_100(self, counts):
        assert sum(apportion_percentages(counts)) == 100


class TestAggregateAndRender:
    def _records(self, spec):
        """spec: list of (dataset, model, candidate_n, reference_n, tie_n)."""
        from outreach.judge import JudgedRecord

        records = []
        for dataset, model, c, r, t in spec:
            outcomes = (
                [ReconciledOutcome.CANDIDATE_WIN] * c
                + [ReconciledOutcome.REFERENCE_WIN] * r
                + [ReconciledOutcome.TIE] * t
            )
            for i, outcome in enumerate(outcomes):
                records.append(
                    JudgedRecord(
                        dataset=dataset,
                        candidate_model=model,
                        reference_model="baseline",
                        instance_id=f"{dataset}-{model}-{i}",
                        outcome=outcome,
                        passes=(
                            _verdict(Choice.TIE, PassOrder.CANDIDATE_FIRST),
                            _verdict(Choice.TIE, PassOrder.REFERENCE_FIRST),
                        ),
                    )
                )
        return records

    def test_aggregate_counts(self):
        records = self._records([("setA", "m1", 43, 17, 40)])
        report = aggregate(group_records(records))
        row = report.rows[0]
        assert (row.candidate_pct, row.reference_pct, row.tie_pct) == (43, 17, 40)
        assert report.n_per_row == [100]

    def test_empty_group_rejected(self):
        with pytest.raises(EmptyGroup):
            aggregate({("setA", "m1"): []})

    def test_render_csv_and_text(self):
        records = self._records([("setA", "m1", 2, 1, 1), ("setB", "m1", 1, 1, 2)])
        report = aggregate(group_records(records))
        csv_text = render_csv(report)
        assert "dataset,candidate_model,candidate_pct,reference_pct,tie_pct,n" in csv_text
        assert "setA,m1,50,25,25,4" in csv_text
        text = render_text(report)
        assert "Candidate model: m1" in text
        assert "setA" in text and "setB" in text

    def test_render_empty_report(self):
        from outreach.judge import AggregateReport

        text = render_text(AggregateReport())
        assert "Dataset" in text
        csv_text = render_csv(AggregateReport())
        assert csv_text.splitlines() == ["dataset,candidate_model,candidate_pct,reference_pct,tie_pct,n"]

    def test_single_row_stable_widths(self):
        records = self._records([("a-very-long-dataset-name", "m1", 1, 0, 0)])
        text = render_text(aggregate(group_records(records)))
        lines = [l for l in text.splitlines() if "|" in l]
        assert len({line.index("|") for line in lines}) == 1


class TestRunJudging:
    def test_instances_not_mutated_and_replayable(self):
        instances = [
            _instance(candidate="aaaa bbbb cccc", reference="dd", instance_id=f"i{k}")
            for k in range(4)
        ]
        frozen = [i.to_canonical_json() for i in instances]
        judge = ComparativeJudge(prefer_longer)
        records_a = run_judging(judge, instances)
        records_b = run_judging(judge, instances)
        assert [i.to_canonical_json() for i in instances] == frozen
        assert [r.to_canonical_json() for r in records_a] == [
            r.to_canonical_json() for r in records_b
        ]

    def test_order_blind_judge_gives_candidate_win(self):
        record = judge_instance(
            ComparativeJudge(prefer_longer),
            _instance(candidate="the much longer candidate", reference="ref"),
        )
        assert record.outcome is ReconciledOutcome.CANDIDATE_WIN

    def test_always_first_judge_neutralized(self):
        rng = random.Random(13)
        instances = [
            _instance(
                candidate="c" * rng.randint(3, 40),
                reference="r" * rng.randint(3, 40),
                instance_id=f"i{k}",
            )
            for k in range(25)
        ]
        records = run_judging(ComparativeJudge(always_first), instances)
        assert all(r.outcome is ReconciledOutcome.TIE for r in records)

    def test_parallel_matches_sequential(self):
        instances = [
            _instance(candidate="x" * (k + 1), reference="y" * (26 - k), instance_id=f"i{k}")
            for k in range(12)
        ]
        judge = ComparativeJudge(prefer_longer)
        seq = [r.outcome for r in run_judging(judge, instances, max_workers=1)]
        par = [r.outcome for r in run_judging(judge, instances, max_workers=4)]
        assert seq == par

    def test_replay_fixture_judging_is_repeatable(self, tmp_path):
        """Two harness runs over one recorded fixture give identical reports."""
        import json as jsonlib

        from outreach.backends import ReplayBackend
        from outreach.domain import canonical_json

        def verdict_json(overall: str) -> str:
            return canonical_json(
                {d: overall for d in DIMENSIONS} | {"overall": overall, "rationale": "recorded"}
            )

        # two passes per instance: candidate-first then reference-first
        responses = [
            verdict_json("first"), verdict_json("second"),   # i0: candidate both times
            verdict_json("tie"), verdict_json("tie"),        # i1: explicit tie
            verdict_json("second"), verdict_json("first"),   # i2: reference both times
        ]
        fixture = tmp_path / "judge_fixture.jsonl"
        fixture.write_text(
            "\n".join(jsonlib.dumps({"request_hash": "", "response": r}) for r in responses) + "\n"
        )
        instances = [_instance(instance_id=f"i{k}") for k in range(3)]

        runs = []
        for _ in range(2):
            records = run_judging(ReplayBackend(fixture), instances)
            report = aggregate(group_records(records))
            runs.append((render_csv(report), [r.to_canonical_json() for r in records]))
        assert runs[0] == runs[1]
        outcomes = [r for r in runs[0][1]]
        assert '"outcome":"candidate_win"' in outcomes[0]
        assert '"outcome":"tie"' in outcomes[1]
        assert '"outcome":"reference_win"' in outcomes[2]

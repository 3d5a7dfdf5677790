import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ts2r.annotate import get_profile
from ts2r.core import AttributeKind, Variable
from ts2r.evaluate import (
    FactPair,
    JudgeOutputError,
    TaskWindow,
    batch_judge_prompts,
    build_judge_prompt,
    build_task_prompt,
    clause_average,
    extract_answers,
    factscore,
    monitoring_metrics,
    parse_judge_output,
    report_factscore,
    rct_relative_error,
    run_task_suite,
    soc_metrics,
)
from ts2r.report import LlmEndpointConfig
from ts2r.synth import FaultSpec, Phase, ScenarioSpec, generate_synthetic


def _pair(i, generated="trend: increase (1~50th time).",
          reference="trend: increase (1~50th time)."):
    return FactPair(id=i, attribute=AttributeKind.TREND,
                    generated=generated, reference=reference)


class TestJudgePrompt:
    def test_contains_ids_and_instruction(self):
        prompt = build_judge_prompt([_pair(1), _pair(2)])
        assert "id: 1" in prompt.text
        assert "id: 2" in prompt.text
        assert "Break down each response into multiple short sentences" in prompt.text
        assert '{"evaluate results": [{"id": 1,"score": 0.67}' in prompt.text

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError, match="at least one pair"):
            build_judge_prompt([])

    def test_batching_splits_disjoint_ids(self):
        pairs = [_pair(i) for i in range(1, 121)]
        batches = batch_judge_prompts(pairs, batch_limit=50)
        assert [len(ids) for _, ids in batches] == [50, 50, 20]
        seen = [i for _, ids in batches for i in ids]
        assert seen == list(range(1, 121))

    def test_single_batch_at_limit(self):
        pairs = [_pair(i) for i in range(1, 51)]
        batches = batch_judge_prompts(pairs, batch_limit=50)
        assert len(batches) == 1

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError, match="duplicate pair id"):
            batch_judge_prompts([_pair(1), _pair(1)])


class TestParseJudgeOutput:
    def test_documented_shape_round_trips(self):
        raw = '{"evaluate results": [{"id": 1,"score": 0.67},{"id": 2,"score": 1.0}]}'
        results = parse_judge_output(raw, expected_ids=[1, 2])
        assert [(r.id, r.score) for r in results] == [(1, 0.67), (2, 1.0)]

    def test_missing_id_reported(self):
        raw = '{"evaluate results": [{"id": 1,"score": 0.5}, {"id": 3,"score": 0.5}]}'
        with pytest.raises(JudgeOutputError, match="unscored id 2"):
            parse_judge_output(raw, expected_ids=[1, 2, 3])

    def test_out_of_range_score(self):
        raw = '{"evaluate results": [{"id": 1,"score": 1.2}]}'
        with pytest.raises(JudgeOutputError, match="outside"):
            parse_judge_output(raw)

    def test_prose_wrapped_json_ok(self):
        raw = 'Sure!\n{"evaluate results": [{"id": 5,"score": 0.833}]}\nDone.'
        results = parse_judge_output(raw, expected_ids=[5])
        assert results[0].score == 0.833


class TestClauseAverage:
    def test_documented_example(self):
        assert clause_average([1.0, 0.5, 1.0]) == 0.833

    def test_single_clause_passthrough(self):
        assert clause_average([1.0]) == 1.0

    def test_hand_mean(self):
        assert clause_average([0.0, 0.0, 0.5, 1.0]) == 0.375

    def test_rejects_non_ternary(self):
        with pytest.raises(ValueError):
            clause_average([0.7])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.sampled_from([0.0, 0.5, 1.0]), min_size=1, max_size=40))
    def test_bounded_and_permutation_invariant(self, scores):
        value = clause_average(scores)
        assert 0.0 <= value <= 1.0
        assert clause_average(list(reversed(scores))) == value


class TestFactscore:
    def test_mean_over_attributes(self):
        scores = {AttributeKind.TREND: 1.0, AttributeKind.TRANSITION: 0.5}
        assert factscore(scores) == 0.75

    def test_all_ones(self):
        assert factscore([1.0, 1.0, 1.0]) == 1.0

    def test_single_attribute(self):
        assert factscore([0.42]) == 0.42

    def test_report_level_mean(self):
        assert report_factscore([1.0, 0.5]) == 0.75

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
    def test_bounded_permutation_invariant(self, scores):
        value = factscore(scores)
        assert 0.0 <= value <= 1.0 + 1e-12
        assert factscore(list(reversed(scores))) == pytest.approx(value)


class TestExtractAnswers:
    def test_soc_format(self):
        assert extract_answers("The average SOC of LIB cells: <ans>55</ans>%.") == [55.0]

    def test_monitoring_format(self):
        assert extract_answers("The operation is <ans>abnormal</ans>.") == ["abnormal"]

    def test_no_tags(self):
        assert extract_answers("nothing here") == []

    def test_multiple_in_order(self):
        text = "a <ans>1</ans> b <ans>2.5</ans> c <ans>normal</ans>"
        assert extract_answers(text) == [1.0, 2.5, "normal"]

    def test_units_tolerated(self):
        assert extract_answers("<ans>225 minutes</ans>") == [225.0]
        assert extract_answers("<ans>55%</ans>") == [55.0]
        assert extract_answers("<ans>3.5V</ans>") == [3.5]

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-1e6, 1e6, allow_nan=False).map(lambda x: round(x, 6)))
    def test_embed_extract_identity(self, value):
        from ts2r.phrasing import format_value

        text = f"The average SOC of LIB cells: <ans>{format_value(value)}</ans>%."
        assert extract_answers(text) == [float(format_value(value))]


class TestMetrics:
    def test_perfect_predictions(self):
        m = soc_metrics([50.0, 60.0], [50.0, 60.0])
        assert m == {"rmse": 0.0, "mae": 0.0}

    def test_hand_example(self):
        m = soc_metrics([50.0, 60.0], [52.0, 57.0])
        assert m["mae"] == pytest.approx(2.5)
        assert m["rmse"] == pytest.approx(math.sqrt(6.5))

    def test_single_pair(self):
        m = soc_metrics([30.0], [33.0])
        assert m["mae"] == m["rmse"] == pytest.approx(3.0)

    def test_rmse_dominates_mae(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(1, 50))
            p, t = rng.normal(0, 10, n), rng.normal(0, 10, n)
            m = soc_metrics(p, t)
            assert m["rmse"] >= m["mae"] >= 0.0

    def test_monitoring_counting_example(self):
        truth = ["normal"] * 97 + ["abnormal"] * 3
        predicted = (["normal"] * 90 + ["abnormal"] * 7) + ["abnormal"] * 2 + ["normal"]
        m = monitoring_metrics(predicted, truth)
        assert m["acc"] == pytest.approx(0.92, abs=1e-12)
        assert m["far"] == pytest.approx(7 / 97, abs=1e-12)

    def test_all_correct(self):
        m = monitoring_metrics(["normal", "abnormal"], ["normal", "abnormal"])
        assert m["acc"] == 1.0
        assert m["far"] == 0.0

    def test_all_predicted_abnormal(self):
        truth = ["normal"] * 97 + ["abnormal"] * 3
        m = monitoring_metrics(["abnormal"] * 100, truth)
        assert m["far"] == 1.0
        assert m["acc"] == pytest.approx(0.03)

    def test_far_absent_without_normals(self):
        m = monitoring_metrics(["abnormal"], ["abnormal"])
        assert m["far"] is None

    def test_type_match_rate(self):
        m = monitoring_metrics(
            ["abnormal", "abnormal"], ["abnormal", "abnormal"],
            predicted_types=["voltage/cell", "temperature/cell"],
            truth_types=["voltage/cell", "voltage/cell"],
        )
        assert m["type_match"] == 0.5

    def test_acc_counting_identity(self):
        rng = np.random.default_rng(1)
        labels = ["normal", "abnormal"]
        for _ in range(50):
            n = int(rng.integers(1, 60))
            truth = [labels[i] for i in rng.integers(0, 2, n)]
            predicted = [labels[i] for i in rng.integers(0, 2, n)]
            m = monitoring_metrics(predicted, truth)
            correct_normals = sum(
                p == t == "normal" for p, t in zip(predicted, truth)
            )
            correct_abnormals = sum(
                p == t == "abnormal" for p, t in zip(predicted, truth)
            )
            assert m["acc"] * n == pytest.approx(correct_normals + correct_abnormals)

    def test_rct_exact(self):
        assert rct_relative_error(225.0, 225.0) == 0.0

    def test_rct_hand_value(self):
        assert rct_relative_error(225.0, 200.0) == pytest.approx(25 / 225, abs=1e-9)

    def test_rct_total_miss(self):
        assert rct_relative_error(225.0, 0.0) == 1.0

    def test_rct_requires_positive_truth(self):
        with pytest.raises(ValueError):
            rct_relative_error(0.0, 10.0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(1e-3, 1e5), st.floats(0, 1e5), st.floats(1e-3, 1e3))
    def test_rct_scale_invariant(self, t_true, t_pred, scale):
        a = rct_relative_error(t_true, t_pred)
        b = rct_relative_error(scale * t_true, scale * t_pred)
        assert b == pytest.approx(a, rel=1e-9, abs=1e-12)


class TestTaskPrompts:
    def test_soc_prompt_format_instruction(self):
        prompt = build_task_prompt("soc_prediction", "{}")
        assert "<ans>xx</ans>%" in prompt.text
        assert "forecast the possible value of average SOC" in prompt.text

    def test_monitor_prompt_options(self):
        prompt = build_task_prompt("monitoring", "{}")
        for option in ("A. Temperature Anomaly in specific individual cell",
                       "B. Temperature Anomaly of whole LIB module",
                       "C. Voltage Anomaly in specific individual cell",
                       "D. Voltage Anomaly of whole LIB module"):
            assert option in prompt.text

    def test_manage_prompt_cutoffs(self):
        prompt = build_task_prompt("management", "{}")
        assert "Maximal SOC reaches 97%" in prompt.text
        assert "Minimal SOC reaches 3%" in prompt.text

    def test_unknown_task(self):
        with pytest.raises(ValueError, match="unknown task"):
            build_task_prompt("nonsense", "{}")

    def test_requires_report(self):
        with pytest.raises(ValueError, match="report text"):
            build_task_prompt("soc_prediction", "")


def _linear_soc_window(length=100, rate=0.25, initial=10.0, cells=4):
    spec = ScenarioSpec(
        cell_count=cells, length=length,
        phases=(Phase("charge", length, 1.0),),
        initial_soc=initial, soc_per_amp_minute=rate,
    )
    return TaskWindow(*generate_synthetic(spec))


class TestRunTaskSuite:
    def test_soc_linear_extrapolation_exact(self):
        window = _linear_soc_window()
        records, aggregates = run_task_suite(
            [window], get_profile("zju"), LlmEndpointConfig(mock=True), "soc_prediction",
        )
        assert len(records) == 1
        assert aggregates["rmse"] == pytest.approx(0.0, abs=1e-9)
        assert aggregates["mae"] == pytest.approx(0.0, abs=1e-9)
        # truth is the minute-100 average of a 0.25 %/min ramp from 10%
        assert records[0].truth == pytest.approx(10.0 + 99 * 0.25)

    def test_soc_requires_horizon(self):
        spec = ScenarioSpec(cell_count=1, length=50, phases=(Phase("charge", 50, 1.0),))
        window = TaskWindow(*generate_synthetic(spec))
        with pytest.raises(ValueError, match="need 100 minutes"):
            run_task_suite([window], get_profile("zju"), LlmEndpointConfig(mock=True),
                           "soc_prediction")

    def test_monitoring_clean_set(self):
        windows = [_linear_soc_window(cells=2) for _ in range(3)]
        records, aggregates = run_task_suite(
            windows, get_profile("zju"), LlmEndpointConfig(mock=True), "monitoring",
        )
        assert aggregates["acc"] == 1.0
        assert aggregates["far"] == 0.0

    def test_monitoring_module_wide_dip_blames_module(self):
        # a short, deep voltage drop across every cell reads as a
        # whole-module voltage anomaly, not a single-cell one
        spec = ScenarioSpec(
            cell_count=4, length=100,
            phases=(Phase("idle", 100),),
            faults=(FaultSpec(Variable.VOLTAGE, "level_shift", 60, 64, -2.0),),
            seed=8,
        )
        window = TaskWindow(*generate_synthetic(spec))
        records, aggregates = run_task_suite(
            [window], get_profile("zju"), LlmEndpointConfig(mock=True), "monitoring",
        )
        assert records[0].prediction == "abnormal"
        assert records[0].predicted_type == "voltage/module"
        assert records[0].truth_type == "voltage/module"
        assert aggregates["type_match"] == 1.0

    def test_monitoring_detects_injected_spike(self):
        spec = ScenarioSpec(
            cell_count=4, length=100,
            phases=(Phase("idle", 100),),
            faults=(FaultSpec(Variable.TEMPERATURE, "spike", 60, 60, 30.0, cell_id=3),),
            seed=5,
        )
        window = TaskWindow(*generate_synthetic(spec))
        records, aggregates = run_task_suite(
            [window], get_profile("zju"), LlmEndpointConfig(mock=True), "monitoring",
        )
        assert records[0].prediction == "abnormal"
        assert aggregates["acc"] == 1.0
        assert records[0].predicted_type == "temperature/cell"
        assert records[0].truth_type == "temperature/cell"

    def test_management_five_repeats(self):
        window = _linear_soc_window(rate=74 / 225, initial=3.0)
        records, aggregates = run_task_suite(
            [window], get_profile("zju"), LlmEndpointConfig(mock=True), "management",
            repeats=5,
        )
        assert len(records) == 5
        assert len(aggregates["deltas"]) == 5
        assert aggregates["delta_mean"] == pytest.approx(0.0, abs=1e-6)

    def test_management_discharging_uses_min_cutoff(self):
        spec = ScenarioSpec(
            cell_count=4, length=100,
            phases=(Phase("idle", 20), Phase("discharge", 80, 1.0)),
            initial_soc=60.0, soc_per_amp_minute=0.25,
            cell_spread={Variable.SOC: 2.0},
        )
        window = TaskWindow(*generate_synthetic(spec))
        records, aggregates = run_task_suite(
            [window], get_profile("zju"), LlmEndpointConfig(mock=True), "management",
            repeats=1,
        )
        # min cell: 59 at start, discharging 0.25 %/min over 80 steps -> 39 at
        # minute 100; (39 - 3) / 0.25 = 144 minutes to the 3% cutoff
        assert records[0].truth == pytest.approx(144.0, abs=1e-9)
        assert "Discharging Phase" in records[0].raw_answer
        assert aggregates["delta_mean"] == pytest.approx(0.0, abs=1e-6)

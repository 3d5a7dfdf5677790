import json

import pytest

from ts2r.cli import main


SCENARIO = {
    "cell_count": 16,
    "length": 100,
    "seed": 11,
    "phases": [
        {"kind": "idle", "duration": 40},
        {"kind": "charge", "duration": 60, "level": 1.0},
    ],
    "cell_spread": {"soc": 0.8, "voltage": 0.01},
}


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(SCENARIO))
    return path


def _synth(tmp_path, scenario_file, name="dataset"):
    out = tmp_path / "run"
    code = main(["synth", str(scenario_file), "--out", str(out), "--name", name])
    assert code == 0
    return out


class TestSynth:
    def test_writes_three_files(self, tmp_path, scenario_file):
        out = _synth(tmp_path, scenario_file)
        assert (out / "dataset.csv").exists()
        assert (out / "dataset.meta").exists()
        assert (out / "dataset.labels.json").exists()
        assert (out / "manifest.json").exists()

    def test_same_seed_identical_files(self, tmp_path, scenario_file):
        out1 = tmp_path / "a"
        out2 = tmp_path / "b"
        assert main(["synth", str(scenario_file), "--seed", "5", "--out", str(out1)]) == 0
        assert main(["synth", str(scenario_file), "--seed", "5", "--out", str(out2)]) == 0
        assert (out1 / "dataset.csv").read_bytes() == (out2 / "dataset.csv").read_bytes()

    def test_bad_spec_exits_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({
            "cell_count": 1, "length": 10,
            "phases": [{"kind": "idle", "duration": 10}],
            "faults": [{"variable": "voltage", "kind": "spike",
                        "begin": 5, "end": 15, "magnitude": 1.0}],
        }))
        assert main(["synth", str(bad), "--out", str(tmp_path / "x")]) == 2


class TestAnnotate:
    def test_zju_shape_annotates_everything(self, tmp_path, scenario_file):
        out = _synth(tmp_path, scenario_file)
        code = main(["annotate", "--input", str(out / "dataset"),
                     "--profile", "zju", "--out", str(out)])
        assert code == 0
        annotations = json.loads((out / "annotations.json").read_text())
        # 16 cells x 3 variables + module current + 5 aggregates x 3 variables
        assert len(annotations["series"]) == 16 * 3 + 1 + 15
        tsv = (out / "expressions.tsv").read_text().splitlines()
        assert tsv[0].split("\t") == ["series", "attribute", "begin", "end",
                                      "timestamps", "text"]
        assert len(tsv) > 60

    def test_missing_profile_exits_2(self, tmp_path, scenario_file, caplog):
        out = _synth(tmp_path, scenario_file)
        code = main(["annotate", "--input", str(out / "dataset"), "--out", str(out)])
        assert code == 2
        assert "available: mit, tju, zju" in caplog.text

    def test_unknown_input_exits_2(self, tmp_path):
        assert main(["annotate", "--input", str(tmp_path / "nope"),
                     "--profile", "zju", "--out", str(tmp_path)]) == 2

    def test_figures_rendered(self, tmp_path, scenario_file):
        out = _synth(tmp_path, scenario_file)
        code = main(["annotate", "--input", str(out / "dataset"),
                     "--profile", "zju", "--out", str(out), "--figures"])
        assert code == 0
        figures = list((out / "figures").glob("*.png"))
        assert len(figures) == 64


class TestReport:
    def test_mock_report_deterministic(self, tmp_path, scenario_file):
        out = _synth(tmp_path, scenario_file)
        out_a, out_b = tmp_path / "ra", tmp_path / "rb"
        for dest in (out_a, out_b):
            code = main(["report", "--input", str(out / "dataset"),
                         "--profile", "zju", "--mock", "--out", str(dest)])
            assert code == 0
        assert (out_a / "report.json").read_bytes() == (out_b / "report.json").read_bytes()

    def test_five_calls_logged(self, tmp_path, scenario_file):
        out = _synth(tmp_path, scenario_file)
        dest = tmp_path / "r"
        assert main(["report", "--input", str(out / "dataset"),
                     "--profile", "zju", "--mock", "--group-size", "4",
                     "--out", str(dest)]) == 0
        calls = (dest / "calls.tsv").read_text().splitlines()
        assert len(calls) == 1 + 5
        scopes = [line.split("\t")[0] for line in calls[1:]]
        assert scopes.count("system") == 1
        assert scopes.count("cells") == 4

    def test_unreachable_endpoint_exits_3(self, tmp_path, scenario_file, monkeypatch):
        out = _synth(tmp_path, scenario_file)
        monkeypatch.setenv("TS2R_API_KEY", "token")
        code = main(["report", "--input", str(out / "dataset"),
                     "--profile", "zju",
                     "--endpoint", "http://127.0.0.1:1",
                     "--retries", "0",
                     "--out", str(tmp_path / "r")])
        assert code == 3


class TestJudge:
    def test_echo_judge_scores_one(self, tmp_path, scenario_file):
        out = _synth(tmp_path, scenario_file)
        assert main(["annotate", "--input", str(out / "dataset"),
                     "--profile", "zju", "--out", str(out)]) == 0
        dest = tmp_path / "judge"
        code = main(["judge", "--generated", str(out / "expressions.tsv"),
                     "--reference", str(out / "expressions.tsv"),
                     "--mock", "--out", str(dest)])
        assert code == 0
        doc = json.loads((dest / "factscore.json").read_text())
        assert doc["overall"] == pytest.approx(1.0)

    def test_missing_reference_exits_2(self, tmp_path, scenario_file):
        out = _synth(tmp_path, scenario_file)
        assert main(["annotate", "--input", str(out / "dataset"),
                     "--profile", "zju", "--out", str(out)]) == 0
        code = main(["judge", "--generated", str(out / "expressions.tsv"),
                     "--reference", str(tmp_path / "missing.tsv"),
                     "--mock", "--out", str(tmp_path / "j")])
        assert code == 2

    def test_batching_merges_results(self, tmp_path, scenario_file):
        out = _synth(tmp_path, scenario_file)
        assert main(["annotate", "--input", str(out / "dataset"),
                     "--profile", "zju", "--out", str(out)]) == 0
        dest = tmp_path / "judge"
        code = main(["judge", "--generated", str(out / "expressions.tsv"),
                     "--reference", str(out / "expressions.tsv"),
                     "--mock", "--batch-limit", "10", "--out", str(dest)])
        assert code == 0
        scores = (dest / "scores.csv").read_text().splitlines()
        doc = json.loads((dest / "factscore.json").read_text())
        assert len(scores) - 1 == doc["pair_count"]


class TestTask:
    def test_manage_five_repeats(self, tmp_path, scenario_file):
        out = _synth(tmp_path, scenario_file)
        dest = tmp_path / "task"
        code = main(["task", "manage", "--input", str(out / "dataset"),
                     "--profile", "zju", "--mock", "--repeats", "5",
                     "--out", str(dest)])
        assert code == 0
        doc = json.loads((dest / "metrics.json").read_text())
        assert len(doc["metrics"]["deltas"]) == 5
        assert doc["metrics"]["delta_mean"] == pytest.approx(0.0, abs=1e-6)

    def test_soc_without_horizon_exits_2(self, tmp_path):
        scenario = {
            "cell_count": 2, "length": 50, "seed": 1,
            "phases": [{"kind": "charge", "duration": 50, "level": 1.0}],
        }
        spec_path = tmp_path / "short.json"
        spec_path.write_text(json.dumps(scenario))
        out = tmp_path / "run"
        assert main(["synth", str(spec_path), "--out", str(out)]) == 0
        code = main(["task", "soc", "--input", str(out / "dataset"),
                     "--profile", "zju", "--mock", "--out", str(tmp_path / "t")])
        assert code == 2

    def test_monitor_clean_set(self, tmp_path, scenario_file):
        out = _synth(tmp_path, scenario_file)
        dest = tmp_path / "task"
        code = main(["task", "monitor", "--input", str(out / "dataset"),
                     "--profile", "zju", "--mock", "--out", str(dest)])
        assert code == 0
        doc = json.loads((dest / "metrics.json").read_text())
        assert doc["metrics"]["acc"] == 1.0
        assert doc["metrics"]["far"] == 0.0


class TestConfigPrecedence:
    def test_flag_overrides_config(self, tmp_path, scenario_file):
        out = _synth(tmp_path, scenario_file)
        config = tmp_path / "config.json"
        config.write_text(json.dumps({
            "profile": {"name": "mit"},
            "endpoint": {"mock": True},
        }))
        dest = tmp_path / "r"
        # mit profile lacks the soc variable: config alone would fail, the
        # explicit flag must win
        code = main(["--config", str(config), "report",
                     "--input", str(out / "dataset"),
                     "--profile", "zju", "--out", str(dest)])
        assert code == 0

    def test_config_supplies_mock(self, tmp_path, scenario_file):
        out = _synth(tmp_path, scenario_file)
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"endpoint": {"mock": True}}))
        dest = tmp_path / "r"
        code = main(["--config", str(config), "report",
                     "--input", str(out / "dataset"),
                     "--profile", "zju", "--out", str(dest)])
        assert code == 0

    def test_manifest_written(self, tmp_path, scenario_file):
        out = _synth(tmp_path, scenario_file)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "synth"
        assert any(path.endswith("dataset.csv") for path in manifest["outputs"])


class TestHelp:
    @pytest.mark.parametrize("command", ["synth", "annotate", "report", "judge", "task"])
    def test_help_documents_flags(self, command, capsys):
        with pytest.raises(SystemExit) as exc_info:
            main([command, "--help"])
        assert exc_info.value.code == 0
        out = capsys.readouterr().out
        assert "--out" in out
        if command in ("report", "judge", "task"):
            assert "--mock" in out
            assert "--endpoint" in out

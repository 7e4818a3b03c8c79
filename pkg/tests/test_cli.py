"""CLI workflow: toy generation, calibration, conversion, simulation, reports."""

import json

import pytest

from spikewire.cli import main


def run_cli(*argv):
    return main([str(a) for a in argv])


@pytest.fixture()
def workdir(tmp_path):
    assert run_cli("make-toy", "--kind", "mlp", "--out", tmp_path, "--seed", "3", "--data-samples", "24") == 0
    return tmp_path


class TestPipeline:
    def test_full_pipeline(self, workdir, capsys):
        import time

        t0 = time.perf_counter()
        model = workdir / "model.json"
        data = workdir / "data.csv"
        report = workdir / "calib.json"
        snn = workdir / "snn.json"
        trace = workdir / "trace.json"

        assert run_cli(
            "calibrate", "--model", model, "--data", data, "--out", report,
            "--timesteps-T", "16", "--n-thresholds", "3", "--scale-c", "1.0",
        ) == 0
        rep = json.loads(report.read_text())
        assert rep["schema"] == "spikewire-calibration-v1"
        assert rep["points"]["relu1"]["method"] == "iteration"

        assert run_cli("convert", "--model", model, "--calibration", report, "--out", snn) == 0
        assert snn.exists() and (workdir / "snn.bin").exists()

        assert run_cli(
            "run", "--model", snn, "--data", data, "--timesteps-T", "16",
            "--out", trace, "--csv", workdir / "trace.csv",
        ) == 0
        payload = json.loads(trace.read_text())
        assert payload["schema"] == "spikewire-trace-v1"
        assert len(payload["samples"]) == 24
        assert len(payload["per_step"]["decoded"]) == 16

        energy = workdir / "energy.json"
        assert run_cli(
            "energy", "--model", snn, "--ann-model", model, "--data", data,
            "--timesteps-T", "16", "--out", energy,
        ) == 0
        erep = json.loads(energy.read_text())
        assert erep["ann_macs"] == 16 * 8 + 8 * 4
        assert erep["ratio"] > 0

        comp = workdir / "compare.json"
        assert run_cli(
            "compare", "--model", snn, "--ann-model", model, "--data", data,
            "--timesteps-T", "16", "--out", comp,
        ) == 0
        rows = json.loads(comp.read_text())["rows"]
        assert [r["t"] for r in rows] == [1, 2, 4, 8, 16]
        assert rows[-1]["median_l2_rel"] < rows[0]["median_l2_rel"]
        out = capsys.readouterr().out
        assert "energy ratio" in out or "E_ratio" in out
        assert time.perf_counter() - t0 < 10.0  # full toy pipeline budget

    def test_rerun_is_byte_identical(self, workdir):
        model = workdir / "model.json"
        data = workdir / "data.csv"
        report = workdir / "calib.json"
        snn = workdir / "snn.json"
        run_cli("calibrate", "--model", model, "--data", data, "--out", report, "--timesteps-T", "8")
        run_cli("convert", "--model", model, "--calibration", report, "--out", snn)
        csv1 = workdir / "t1.csv"
        csv2 = workdir / "t2.csv"
        for csv in (csv1, csv2):
            assert run_cli(
                "run", "--model", snn, "--data", data, "--timesteps-T", "8",
                "--seed", "7", "--out", workdir / "t.json", "--csv", csv,
            ) == 0
        assert csv1.read_bytes() == csv2.read_bytes()

    def test_normalized_convert(self, workdir):
        model = workdir / "model.json"
        data = workdir / "data.csv"
        report = workdir / "calib.json"
        snn = workdir / "snn_hw.json"
        run_cli("calibrate", "--model", model, "--data", data, "--out", report, "--timesteps-T", "8")
        assert run_cli("convert", "--model", model, "--calibration", report, "--out", snn, "--normalize") == 0
        meta = json.loads(snn.read_text())["metadata"]
        assert meta["normalized"] is True
        trace = workdir / "trace_hw.json"
        assert run_cli(
            "run", "--model", snn, "--data", data, "--timesteps-T", "8",
            "--firing-rule", "hw", "--out", trace,
        ) == 0


class TestErrorPaths:
    def test_empty_dataset_exit_2(self, workdir):
        empty = workdir / "empty.csv"
        empty.write_text("")
        code = run_cli(
            "calibrate", "--model", workdir / "model.json", "--data", empty,
            "--out", workdir / "r.json", "--timesteps-T", "4",
        )
        assert code == 2

    def test_missing_model_exit_2(self, workdir):
        code = run_cli(
            "calibrate", "--model", workdir / "nope.json", "--data", workdir / "data.csv",
            "--out", workdir / "r.json",
        )
        assert code == 2

    def test_bad_sample_index_exit_2(self, workdir):
        model = workdir / "model.json"
        data = workdir / "data.csv"
        report = workdir / "calib.json"
        snn = workdir / "snn.json"
        run_cli("calibrate", "--model", model, "--data", data, "--out", report, "--timesteps-T", "4")
        run_cli("convert", "--model", model, "--calibration", report, "--out", snn)
        code = run_cli(
            "run", "--model", snn, "--data", data, "--timesteps-T", "4",
            "--sample", "99", "--out", workdir / "t.json",
        )
        assert code == 2


class TestEnvOverrides:
    def test_env_sets_default(self, workdir, monkeypatch):
        monkeypatch.setenv("SPIKEWIRE_TIMESTEPS_T", "4")
        model = workdir / "model.json"
        data = workdir / "data.csv"
        report = workdir / "calib.json"
        assert run_cli("calibrate", "--model", model, "--data", data, "--out", report) == 0
        assert json.loads(report.read_text())["timesteps"] == 4

    def test_cli_wins_over_env(self, workdir, monkeypatch):
        monkeypatch.setenv("SPIKEWIRE_TIMESTEPS_T", "4")
        model = workdir / "model.json"
        data = workdir / "data.csv"
        report = workdir / "calib.json"
        assert run_cli(
            "calibrate", "--model", model, "--data", data, "--out", report, "--timesteps-T", "6"
        ) == 0
        assert json.loads(report.read_text())["timesteps"] == 6


class TestToyKinds:
    @pytest.mark.parametrize("kind", ["mlp", "cnn", "attention"])
    def test_make_calibrate_convert_run(self, tmp_path, kind):
        out = tmp_path / kind
        assert run_cli("make-toy", "--kind", kind, "--out", out, "--data-samples", "6") == 0
        assert run_cli(
            "calibrate", "--model", out / "model.json", "--data", out / "data.csv",
            "--out", out / "calib.json", "--timesteps-T", "4", "--n-thresholds", "2",
        ) == 0
        assert run_cli(
            "convert", "--model", out / "model.json", "--calibration", out / "calib.json",
            "--out", out / "snn.json",
        ) == 0
        assert run_cli(
            "run", "--model", out / "snn.json", "--data", out / "data.csv",
            "--timesteps-T", "4", "--out", out / "trace.json",
        ) == 0
        assert run_cli(
            "compare", "--model", out / "snn.json", "--ann-model", out / "model.json",
            "--data", out / "data.csv", "--timesteps-T", "4", "--out", out / "cmp.json",
        ) == 0

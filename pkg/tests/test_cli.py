import json

import numpy as np
import pytest

from rflab.cli import main
from rflab.complexity import mbed_atn_report
from rflab.dsp import ComplexSeries, read_feature_tensor, write_capture
from rflab.engine import load_params


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--profiles", "desk:3", "--n", "10", "--n-ttd", "4", "--m", "2500",
                 "--factor", "8", "--seed", "1", "--out", str(out)]) == 0
    return out / "manifest.json"


def test_complexity_table_matches_module(capsys, tmp_path):
    code, out, _ = run(["complexity", "--model", "mbed-atn", "--m", "10000", "--scale", "1", "--batch", "2",
                        "--out", tmp_path], capsys)
    assert code == 0
    rep = mbed_atn_report(10_000, 1.0, 10, 2)
    assert "#Parameters" in out and "FLOPs" in out
    assert f"{rep.params / 1e6:.3f}M" in out
    assert json.loads((tmp_path / "run.json").read_text())["params"] == rep.params


def test_simulate_twice_is_identical(dataset, tmp_path, capsys):
    code, _, _ = run(["simulate", "--profiles", "desk:3", "--n", "10", "--n-ttd", "4", "--m", "2500",
                      "--factor", "8", "--seed", "1", "--out", tmp_path], capsys)
    assert code == 0
    assert (tmp_path / "manifest.json").read_bytes() == dataset.read_bytes()
    a = json.loads((tmp_path / "run.json").read_text())
    assert a["manifest_sha256"] == json.loads((dataset.parent / "run.json").read_text())["manifest_sha256"]


def test_train_eval_export_round(dataset, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"lr": 1e-3, "max_epochs": 2, "seed": 3}))
    ck = tmp_path / "ck"
    code, _, err = run(["train", "--dataset", dataset, "--scale", "0.05", "--stage", "both", "--config", cfg,
                        "--out", ck], capsys)
    assert code == 0, err
    for f in ("run.json", "graph.json", "model.mbat", "stage1.mbat", "runrecord_stage1.csv", "runrecord_stage2.csv"):
        assert (ck / f).exists()
    first, final = load_params(ck / "stage1.mbat"), load_params(ck / "model.mbat")
    assert all(np.array_equal(first[k], final[k]) for k in first if k.startswith("mbed."))
    run_json = json.loads((ck / "run.json").read_text())
    assert run_json["stage2"]["checksums"]["mbed_before"] == run_json["stage2"]["checksums"]["mbed_after"]

    code, out, _ = run(["eval", "--dataset", dataset, "--checkpoint", ck, "--scenario", "ttd",
                        "--report", tmp_path / "rep" / "ttd.json"], capsys)
    assert code == 0 and out.startswith("TTD")
    rep = json.loads((tmp_path / "rep" / "ttd.json").read_text())
    assert rep["scenario"] == "TTD" and np.sum(rep["confusion"]) == 12
    assert (tmp_path / "rep" / "ttd.confusion.csv").exists()

    code, _, _ = run(["export-features", "--dataset", dataset, "--checkpoint", ck, "--out", tmp_path / "f.csv"], capsys)
    assert code == 0
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert len(lines) == 43 and len(lines[0].split(",")) == 2 + 51

    code, _, _ = run(["train", "--dataset", dataset, "--scale", "0.05", "--stage", "two", "--config", cfg,
                      "--init", ck, "--out", tmp_path / "ck2"], capsys)
    assert code == 0


def test_features_from_capture(tmp_path, capsys):
    rng = np.random.default_rng(0)
    cap = write_capture(tmp_path / "cap.bin", ComplexSeries(rng.normal(size=4000) + 1j * rng.normal(size=4000), 2e6))
    code, _, _ = run(["features", "--capture", cap, "--m", "100", "--mode", "aa", "--out", tmp_path / "t.ft"], capsys)
    assert code == 0
    assert read_feature_tensor(tmp_path / "t.ft").shape == (3, 100)
    assert (tmp_path / "run.json").exists()


def test_errors_are_one_json_line(tmp_path, capsys):
    code, _, err = run(["train", "--dataset", tmp_path / "nope.json", "--out", tmp_path / "o"], capsys)
    assert code == 2
    line = err.strip()
    assert "\n" not in line
    assert json.loads(line)["error"] == "CliError" and "nope.json" in line

    bad = tmp_path / "profiles.json"
    bad.write_text(json.dumps([{"cfo_hz": 1.0}, {"cfo": 2.0}]))
    code, _, err = run(["simulate", "--profiles", bad, "--n", "1", "--m", "100", "--out", tmp_path / "s"], capsys)
    msg = json.loads(err.strip())
    assert code == 2 and msg["error"] == "ConfigurationError"
    assert "profiles[1]" in msg["message"] and "'cfo'" in msg["message"]

    code, _, err = run(["complexity", "--m", "100", "--out", tmp_path], capsys)
    assert code == 2 and "ConfigurationError" in err

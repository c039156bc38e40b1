import csv
import json
import os

import pytest

from dni_lab.cli import CONFIG_FILE, SUMMARY_FILE, main
from dni_lab.trainer import CHECKPOINT_FILE, METRICS_FILE


def _write_config(tmp_path, **overrides):
    raw = {
        "experiment": "single",
        "description": "cli smoke run",
        "seed": 1,
        "dataset": {"kind": "linear", "k": 2, "n_points": 60},
        "network": {"hidden_layers": 2, "hidden_width": 6, "method": "sg", "sg_insertions": "single"},
        "training": {"iterations": 20, "batch_size": 16, "lr_main": 1e-3, "lr_sg": 1e-3, "log_every": 5},
        "analysis": {"rdm_samples": 30, "probe_steps": 20, "snapshots": [0, 4]},
    }
    raw.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw))
    return str(path)


def _only_run_dir(out_dir):
    runs = [os.path.join(out_dir, d) for d in os.listdir(out_dir)]
    assert len(runs) == 1
    return runs[0]


def test_gen_data_is_reproducible(tmp_path, capsys):
    a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    assert main(["gen-data", "--kind", "noisy", "--k", "3", "--seed", "7", "--out", a]) == 0
    assert main(["gen-data", "--kind", "noisy", "--k", "3", "--seed", "7", "--out", b]) == 0
    with open(a, "rb") as fa, open(b, "rb") as fb:
        assert fa.read() == fb.read()
    out = capsys.readouterr().out
    assert "Flipped labels: 100" in out
    assert "n=1000 d=3" in out


def test_gen_data_grid(tmp_path):
    path = str(tmp_path / "grid.csv")
    assert main(["gen-data", "--kind", "grid", "--resolution", "5", "--out", path]) == 0
    with open(path) as f:
        assert len(f.readlines()) == 26


def test_theorem1(tmp_path, capsys):
    out = str(tmp_path / "t1.csv")
    assert main(["theorem1", "--S", "10", "--d", "3", "--seed", "1", "--tol", "1e-4", "--out", out]) == 0
    assert "monotone decrease: verified" in capsys.readouterr().out
    assert os.path.exists(out)


def test_theorem1_budget_is_a_failed_verdict():
    assert main(["theorem1", "--S", "10", "--d", "3", "--tol", "1e-12", "--max-iters", "2"]) == 1


def test_critical_point(tmp_path, capsys):
    out = str(tmp_path / "cp.csv")
    assert main(["critical-point", "--out", out]) == 0
    assert "spurious equilibrium reached; true grad norm 6.0" in capsys.readouterr().out
    with open(out, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["iteration", "a", "b", "c"] and len(rows) == 5001
    assert main(["critical-point", "--use-true-grad"]) == 0
    assert main(["critical-point", "--b0", "1.5", "--iters", "100"]) == 1


def test_presets(tmp_path):
    preset = tmp_path / "cp.json"
    preset.write_text(json.dumps({"description": "short", "iters": 50, "out": str(tmp_path / "cp.csv")}))
    assert main(["critical-point", "--config", str(preset)]) == 0
    with open(tmp_path / "cp.csv") as f:
        assert len(f.readlines()) == 51
    preset.write_text(json.dumps({"iterations": 50}))
    assert main(["critical-point", "--config", str(preset)]) == 2
    assert main(["theorem1", "--config", str(tmp_path / "missing.json")]) == 3


def test_train_analyze_report(tmp_path, capsys):
    out_dir = str(tmp_path / "runs")
    assert main(["train", _write_config(tmp_path), "--output-dir", out_dir]) == 0
    run_dir = _only_run_dir(out_dir)
    assert os.path.basename(run_dir).endswith("_seed1")
    for name in (CONFIG_FILE, SUMMARY_FILE, METRICS_FILE, CHECKPOINT_FILE):
        assert os.path.exists(os.path.join(run_dir, name)), name
    with open(os.path.join(run_dir, SUMMARY_FILE)) as f:
        summary = json.load(f)
    assert summary["completed"] and summary["final"]["iteration"] == 19 and summary["seed"] == 1

    assert main(["analyze", "rdm", "--run-dir", run_dir]) == 0
    assert os.path.exists(os.path.join(run_dir, "rdm", "layer01.csv"))
    assert os.path.exists(os.path.join(run_dir, "rdm_profile.csv"))
    assert main(["analyze", "probes", "--run-dir", run_dir]) == 0
    with open(os.path.join(run_dir, "probes.csv")) as f:
        assert len(f.readlines()) == 3
    assert main(["analyze", "norms", "--run-dir", run_dir, "--out-dir", str(tmp_path / "analysis")]) == 0
    assert os.path.exists(tmp_path / "analysis" / "norms.csv")
    assert main(["analyze", "loss-surface", "--run-dir", run_dir]) == 2

    capsys.readouterr()
    assert main(["report", "--runs-dir", out_dir]) == 0
    out = capsys.readouterr().out
    assert "Run Summary" in out and "Found 1 run(s)" in out
    assert "Experiment: SINGLE" in out and "Description: cli smoke run" in out


def test_stop_and_resume(tmp_path, capsys):
    config = _write_config(tmp_path)
    out_dir = str(tmp_path / "runs")
    assert main(["train", config, "--output-dir", out_dir, "--stop-after", "8"]) == 0
    assert "rerun with --resume" in capsys.readouterr().out
    run_dir = _only_run_dir(out_dir)
    with open(os.path.join(run_dir, SUMMARY_FILE)) as f:
        assert json.load(f)["completed"] is False
    assert main(["train", config, "--output-dir", out_dir, "--resume"]) == 0
    with open(os.path.join(run_dir, SUMMARY_FILE)) as f:
        assert json.load(f)["completed"] is True


def test_loss_surface_run(tmp_path):
    config = _write_config(tmp_path, experiment="loss_surface",
                           dataset={"kind": "grid", "resolution": 4},
                           network={"hidden_layers": 2, "hidden_width": 6, "method": "sg", "sg_insertions": "all"})
    out_dir = str(tmp_path / "runs")
    assert main(["train", config, "--output-dir", out_dir]) == 0
    run_dir = _only_run_dir(out_dir)
    with open(os.path.join(run_dir, "loss_surfaces.csv")) as f:
        assert len(f.readlines()) == 1 + 2 * 16
    assert main(["analyze", "loss-surface", "--run-dir", run_dir]) == 0
    assert os.path.exists(os.path.join(run_dir, "loss_surface_4.csv"))


def test_compare_with_backprop(tmp_path, capsys):
    config = _write_config(tmp_path, compare_with_backprop=True)
    assert main(["train", config, "--output-dir", str(tmp_path / "runs")]) == 0
    assert "Final loss gap (sg - backprop)" in capsys.readouterr().out


def test_config_errors_exit_2(tmp_path):
    bad = _write_config(tmp_path, network={"hidden_layers": 1, "hidden_width": 4, "sg_kindd": "linear"})
    assert main(["train", bad]) == 2
    assert main(["train", _write_config(tmp_path), "--set", "training.iterations=0"]) == 2
    with pytest.raises(SystemExit) as info:
        main(["gen-data"])
    assert info.value.code == 2


def test_io_errors_exit_3(tmp_path):
    assert main(["train", str(tmp_path / "missing.json")]) == 3
    assert main(["report", "--runs-dir", str(tmp_path / "nowhere")]) == 3
    assert main(["analyze", "norms", "--run-dir", str(tmp_path)]) == 3


def test_report_lists_broken_runs(tmp_path, capsys):
    broken = tmp_path / "runs" / "broken"
    broken.mkdir(parents=True)
    (broken / CONFIG_FILE).write_text("{oops")
    assert main(["report", "--runs-dir", str(tmp_path / "runs")]) == 0
    out = capsys.readouterr().out
    assert "Runs with errors:" in out and "broken" in out

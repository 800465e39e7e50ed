"""CLI verbs end to end on tiny inputs."""

import json

import numpy as np
import pytest

from rvit.cli import main
from rvit.masking import plan_uniform_random


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli-data")
    assert (
        main(
            [
                "gen-data", "--out", str(root / "train"), "--count", "24",
                "--image", "32", "--lambda", "8", "--seed", "1",
            ]
        )
        == 0
    )
    assert (
        main(
            [
                "gen-data", "--out", str(root / "eval"), "--count", "12",
                "--image", "32", "--lambda", "8", "--seed", "2",
            ]
        )
        == 0
    )
    return root


def test_unknown_verb_and_flag_exit_nonzero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code != 0
    with pytest.raises(SystemExit) as exc:
        main(["cost", "--bogus-flag", "1"])
    assert exc.value.code != 0


def test_cost_reports_4x_at_quarter_retention(tmp_path):
    out = tmp_path / "cost.json"
    assert main(
        ["cost", "--model", "vitb16", "--image", "224", "--ratio", "0.25",
         "--out", str(out)]
    ) == 0
    payload = json.loads(out.read_text())
    assert 3.5 <= payload["ratios"]["gflops_ratio"] <= 4.5
    assert payload["config"]["width"] == 768
    assert payload["report"]["seq_len"] == 50


def test_mask_ms1_matches_golden_plan(tmp_path, capsys):
    out = tmp_path / "plan.json"
    assert main(
        ["mask", "--strategy", "ms1", "--key", "s0", "--n", "8",
         "--ratio", "0.5", "--out", str(out)]
    ) == 0
    plan = json.loads(out.read_text())
    assert plan["indices"] == [0, 1, 2, 4]  # golden PRNG trace
    assert plan["strategy"] == "ms1"
    assert plan["n"] == 8
    reference = plan_uniform_random("s0", 0.5, 8)
    assert plan["seed"] == reference.seed


def test_mask_viz_writes_pgm(tmp_path, data_dir):
    out = tmp_path / "plan.json"
    assert main(
        ["mask", "--strategy", "ms2", "--data", str(data_dir / "train"),
         "--index", "0", "--patch", "8", "--ratio", "0.5",
         "--out", str(out), "--viz"]
    ) == 0
    pgm = (tmp_path / "plan.pgm").read_bytes()
    assert pgm.startswith(b"P5\n32 32\n255\n")
    body = np.frombuffer(pgm.split(b"255\n", 1)[1], dtype=np.uint8)
    assert set(np.unique(body)) == {0, 255}
    assert body.size == 32 * 32


def test_calibrate_monotone_csv(tmp_path, data_dir):
    out = tmp_path / "cal.csv"
    assert main(
        ["calibrate", "--data", str(data_dir / "train"), "--patch", "8",
         "--taus", "0.4,0.6,0.8", "--out", str(out)]
    ) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "tau,mean_retention,n_samples"
    vals = [float(line.split(",")[1]) for line in lines[1:]]
    assert vals == sorted(vals)


def test_train_eval_probe_round_trip(tmp_path, data_dir):
    ckpt = tmp_path / "model.rvit"
    assert main(
        ["train", "--data", str(data_dir / "train"),
         "--eval-data", str(data_dir / "eval"), "--out", str(ckpt),
         "--task", "classification", "--strategy", "ms1", "--ratio", "0.5",
         "--patch", "8", "--epochs", "1", "--batch", "12", "--lr", "0.1",
         "--seed", "0"]
    ) == 0
    assert ckpt.exists()

    row_csv = tmp_path / "row.csv"
    assert main(
        ["eval", "--ckpt", str(ckpt), "--data", str(data_dir / "eval"),
         "--strategy", "ms1", "--ratio", "0.5", "--out", str(row_csv)]
    ) == 0
    lines = row_csv.read_text().splitlines()
    assert lines[0].startswith("task,strategy,train_ratio")
    assert len(lines) == 2
    assert ",macro_f1," in lines[1]

    assert main(
        ["probe", "--ckpt", str(ckpt), "--data", str(data_dir / "train"),
         "--eval-data", str(data_dir / "eval"), "--epochs", "2",
         "--out", str(tmp_path / "probe.json")]
    ) == 0
    probe = json.loads((tmp_path / "probe.json").read_text())
    assert probe["metric"] == "macro_f1"


def test_train_with_config_file(tmp_path, data_dir):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 1, "width": 16, "heads": 2,
                               "mlp_ratio": 2.0, "batch_size": 12}))
    ckpt = tmp_path / "m.rvit"
    # flags override file values
    assert main(
        ["train", "--data", str(data_dir / "train"), "--out", str(ckpt),
         "--config", str(cfg), "--patch", "8", "--lr", "0.05"]
    ) == 0
    assert ckpt.exists()


def test_sweep_rerun_byte_identical(tmp_path, data_dir):
    grid = tmp_path / "grid.json"
    grid.write_text(
        json.dumps(
            {
                "base": {
                    "width": 16, "heads": 2, "mlp_ratio": 2.0, "epochs": 1,
                    "image_size": 32, "corr_length": 8.0, "train_count": 16,
                    "eval_count": 8, "batch_size": 8,
                },
                "axes": {"train_ratio": [0.5, 1.0]},
            }
        )
    )
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["sweep", "--grid", str(grid), "--out", str(a)]) == 0
    assert main(["sweep", "--grid", str(grid), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    assert len(lines) == 3  # header + 2 cells


def test_eval_errors_on_missing_data(tmp_path, capsys):
    assert main(
        ["eval", "--ckpt", str(tmp_path / "none.rvit"),
         "--data", str(tmp_path / "nope")]
    ) == 1
    assert "error:" in capsys.readouterr().err

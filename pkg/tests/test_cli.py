import json
import subprocess
import sys

import pytest

from eatkit.cli import default_run_config, load_run_config, main
from eatkit.model import ConfigError, ModelConfig


@pytest.fixture
def small_config(tmp_path):
    cfg = {
        "model": ModelConfig.tiny(num_classes=4).to_dict(),
        "train": {"batch_size": 4, "image_size": 32, "eval_batch_size": 8},
        "synthetic": {"per_class": 6, "hw": 32},
    }
    path = tmp_path / "small.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_train_writes_run_directory(tmp_path, capsys, small_config):
    out = tmp_path / "run"
    code, stdout, _ = run(capsys, "train", "--config", small_config, "--synthetic", "--epochs", "2", "--seed", "7",
                          "--out", str(out))
    assert code == 0
    for name in ("best.eatkpt", "last.eatkpt", "log.jsonl", "config.json", "report.json"):
        assert (out / name).exists(), name
    assert "epoch   2" in stdout
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["seed"] == 7 and cfg["train.epochs"] == 2 and cfg["data.synthetic"] is True


def test_train_without_data_source_is_usage_error(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--epochs", "1", "--out", str(tmp_path / "r"))
    assert code == 2
    assert "usage:" in err and "--synthetic" in err


def test_train_bad_config_values(tmp_path, capsys, small_config):
    code, _, err = run(capsys, "train", "--config", small_config, "--synthetic", "--set", "train.lr=-1",
                       "--out", str(tmp_path / "r"))
    assert code == 2 and "lr" in err
    code, _, err = run(capsys, "train", "--config", small_config, "--synthetic", "--set", "model.num_classes=3",
                       "--out", str(tmp_path / "r"))
    assert code == 2 and "num_classes" in err
    code, _, err = run(capsys, "train", "--synthetic", "--set", "nope=1", "--out", str(tmp_path / "r"))
    assert code == 2 and "nope" in err


def test_train_missing_data_dir_is_data_error(tmp_path, capsys, small_config):
    code, _, err = run(capsys, "train", "--config", small_config, "--data", str(tmp_path / "nowhere"),
                       "--out", str(tmp_path / "r"))
    assert code == 3 and "data error" in err


def test_identical_invocations_give_identical_logs(tmp_path, small_config):
    logs = []
    for name in ("a", "b"):
        subprocess.run([sys.executable, "-m", "eatkit.cli", "train", "--config", small_config, "--synthetic",
                        "--epochs", "2", "--seed", "3", "--json", "--out", str(tmp_path / name)],
                       check=True, capture_output=True)
        logs.append((tmp_path / name / "log.jsonl").read_bytes())
    assert logs[0] == logs[1] and logs[0].count(b"\n") == 2


@pytest.fixture
def trained(tmp_path, capsys, small_config):
    out = tmp_path / "run"
    assert main(["train", "--config", small_config, "--synthetic", "--epochs", "1", "--json", "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    return out, summary


def test_train_json_summary(trained):
    out, summary = trained
    assert summary["epochs"] == 1 and summary["out"] == str(out)
    assert summary["report"]["split"] == "test"


def test_eval_json_is_sorted_and_matches_train_report(trained, capsys):
    out, summary = trained
    code, stdout, err = run(capsys, "eval", "--checkpoint", str(out / "best.eatkpt"), "--split", "test", "--json")
    assert code == 0 and err == ""
    assert stdout == json.dumps(json.loads(stdout), sort_keys=True) + "\n"
    assert json.loads(stdout) == summary["report"]


def test_eval_text_table(trained, capsys):
    out, _ = trained
    code, stdout, _ = run(capsys, "eval", "--checkpoint", str(out / "last.eatkpt"), "--split", "train")
    assert code == 0
    for col in ("Precision", "Recall", "F1-score", "Accuracy", "MCC"):
        assert col in stdout


def test_eval_bad_checkpoint(tmp_path, capsys):
    bad = tmp_path / "bad.eatkpt"
    bad.write_bytes(b"garbage")
    code, _, err = run(capsys, "eval", "--checkpoint", str(bad))
    assert code == 3 and "not an .eatkpt" in err
    code, _, _ = run(capsys, "eval", "--checkpoint", str(tmp_path / "missing.eatkpt"))
    assert code == 3


def test_bench_json(trained, capsys):
    out, _ = trained
    code, stdout, _ = run(capsys, "bench", "--checkpoint", str(out / "best.eatkpt"), "--batch", "2", "--iters", "2",
                          "--json")
    res = json.loads(stdout)
    assert code == 0 and res["iterations"] == 2 and len(res["images_per_sec"]) == 2


def test_verify_filter(capsys):
    code, stdout, _ = run(capsys, "verify", "--filter", "md_msa", "--json")
    doc = json.loads(stdout)
    assert code == 0 and doc["passed"]
    assert doc["checks"] and all(c["name"].startswith("md_msa.") for c in doc["checks"])


def test_verify_unknown_filter(capsys):
    code, _, err = run(capsys, "verify", "--filter", "no-such-check")
    assert code == 2 and "no checks match" in err


def test_verify_reports_failure_exit_code(capsys, monkeypatch):
    from eatkit.tensor import ops
    from eatkit.tensor.core import record

    real = ops.sigmoid
    monkeypatch.setattr(ops, "sigmoid", lambda x: record("sigmoid", real(x).data, (x,), lambda g: [g]))
    code, stdout, _ = run(capsys, "verify", "--filter", "gradcheck.sigmoid")
    assert code == 1 and "FAIL" in stdout and "gradcheck.sigmoid" in stdout


def test_inspect_mini(capsys):
    code, stdout, _ = run(capsys, "inspect", "--input-size", "64", "--json")
    info = json.loads(stdout)
    assert code == 0
    assert [s["shape"][1] for s in info["stages"]] == [16, 8, 4, 2]
    assert [s["stride"] for s in info["stages"]] == [4, 8, 16, 32]
    row = info["gli_params"][1]
    assert (row["C"], row["C_g"], row["k"], row["formula"]) == (64, 32, 3, 5600)
    assert row["census"] > 0
    code, text, _ = run(capsys, "inspect")
    assert "5600" in text and "census" in text


def test_inspect_invalid_split_ratio(capsys):
    code, _, err = run(capsys, "inspect", "--split-ratio", "1.5")
    assert code == 2 and "split_ratio" in err


def test_inspect_indivisible_size(capsys):
    code, _, err = run(capsys, "inspect", "--input-size", "48")
    assert code == 2 and "divisible" in err


def test_unknown_command_exits_2(capsys):
    assert run(capsys, "frobnicate")[0] == 2


def test_run_config_layering(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"train": {"epochs": 5}, "seed": 9}))
    cfg = load_run_config(str(path), {"seed": 11, "train.lr": None})
    assert cfg["train.epochs"] == 5 and cfg["seed"] == 11
    assert cfg["train.lr"] == default_run_config()["train.lr"] == 0.005
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_run_config(str(path), {})
    with pytest.raises(ConfigError):
        load_run_config(str(tmp_path / "missing.json"), {})

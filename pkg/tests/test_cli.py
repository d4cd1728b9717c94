import json
import subprocess
import sys
import warnings
from pathlib import Path

import pytest

from edd.cli import EXIT_DIVERGED, EXIT_INPUT, EXIT_OK, EXIT_USAGE, main
from edd.data import DatasetConfig
from edd.harness import ExperimentConfig

from conftest import tiny_arch

STOP = "main_color=red,border_color=none,shape=octagon,symbol=bar"


def write_config(tmp_path, **arch):
    cfg = ExperimentConfig(
        dataset=DatasetConfig(n_train=40, n_test=16, image_size=12),
        arch=tiny_arch(**{"epochs": 1, "batch_size": 16, **arch}),
        models=("M-REF", "M-DACD"),
        out_dir=str(tmp_path / "run"),
    )
    p = tmp_path / "config.json"
    p.write_text(json.dumps(cfg.to_dict()))
    return p


def test_verify_accept(capsys):
    assert main(["verify", "--predicted", "stop", "--attrs", STOP]) == EXIT_OK
    out = capsys.readouterr().out
    assert "accept" in out and "category True" in out


def test_verify_reject_both(capsys):
    attrs = "main_color=blue,border_color=black,shape=circle,symbol=digit8"
    assert main(["verify", "--predicted", "end_speed_limit_80", "--attrs", attrs]) == EXIT_OK
    out = capsys.readouterr().out
    assert "reject" in out and "category Both" in out and "minimum_speed_80" in out


def test_verify_permissive_policy_from_config(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"reject_policy": "permissive"}))
    attrs = "main_color=blue,border_color=black,shape=circle,symbol=digit8"
    assert main(["verify", "--config", str(p), "--predicted", "end_speed_limit_80", "--attrs", attrs]) == EXIT_OK
    assert "accept" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [
        ["verify", "--predicted", "stop", "--attrs", "shape=octagon"],
        ["verify", "--predicted", "stop", "--attrs", STOP + ",colour=red"],
        ["verify", "--predicted", "stop", "--attrs", "shape"],
        ["verify", "--predicted", "yield", "--attrs", STOP],
        ["run", "--config", "/nonexistent/config.json"],
    ],
)
def test_usage_errors(argv, capsys):
    assert main(argv) == EXIT_USAGE
    assert capsys.readouterr().err.startswith("error[")


def test_unknown_value_is_rejected(capsys):
    assert main(["verify", "--predicted", "stop", "--attrs", STOP.replace("octagon", "hexagon")]) in (EXIT_USAGE, EXIT_INPUT)
    assert "hexagon" in capsys.readouterr().err


def test_argparse_errors_exit_2():
    for argv in (["frobnicate"], ["run", "--models", "M-Q"], ["run", "--seed", "-3"]):
        with pytest.raises(SystemExit) as e:
            main(argv)
        assert e.value.code == 2


def test_bad_config_value(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"arch": {"epochs": 0}}))
    assert main(["run", "--config", str(p)]) == EXIT_USAGE
    assert "error[config]" in capsys.readouterr().err


def test_generate_train_evaluate(tmp_path, capsys):
    cfg = write_config(tmp_path)
    run = tmp_path / "run"
    assert main(["generate", "--config", str(cfg)]) == EXIT_OK
    data = run / "dataset.eddd"
    assert data.exists()
    assert main(["train", "--config", str(cfg), "--data", str(data)]) == EXIT_OK
    assert (run / "weights" / "M-DACD.eddw").exists()
    assert (run / "history" / "M-REF.jsonl").exists()
    capsys.readouterr()
    assert main(["evaluate", "--config", str(cfg), "--data", str(data)]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.splitlines()[0].split()[0] == "model"
    lines = (run / "report.csv").read_text().splitlines()
    assert [l.split(",")[0] for l in lines[1:]] == ["M-REF", "M-DACD"]


def test_corrupt_inputs_exit_3(tmp_path, capsys):
    cfg = write_config(tmp_path)
    bad = tmp_path / "bad.eddd"
    bad.write_bytes(b"NOPE" + b"\0" * 40)
    assert main(["train", "--config", str(cfg), "--data", str(bad)]) == EXIT_INPUT
    assert "error[input]" in capsys.readouterr().err
    weights = tmp_path / "w"
    weights.mkdir()
    (weights / "M-REF.eddw").write_bytes(b"garbage")
    assert main(["evaluate", "--config", str(cfg), "--models", "M-REF", "--weights", str(weights)]) == EXIT_INPUT
    assert main(["evaluate", "--config", str(cfg), "--models", "M-REF", "--weights", str(tmp_path / "none")]) == EXIT_INPUT


def test_divergence_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, lr=1e6, lr_schedule="constant", epochs=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        assert main(["train", "--config", str(cfg), "--models", "M-FI"]) == EXIT_DIVERGED
    assert "non-finite" in capsys.readouterr().err


def test_run_with_overrides(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "other"
    assert main(["run", "--config", str(cfg), "--models", "M-FI", "--seed", "3", "--out", str(out)]) == EXIT_OK
    saved = json.loads((out / "config.json").read_text())
    assert saved["seed"] == 3 and saved["models"] == ["M-FI"]
    assert json.loads((out / "report.json").read_text())["meta"]["seed"] == 3


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "edd", "verify", "--predicted", "stop", "--attrs", STOP],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "accept" in r.stdout

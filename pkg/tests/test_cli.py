import csv
import json
import math

import pytest

from gradsplit.cli import main, resolve_args
from gradsplit.errors import ConfigError

SMALL = ["--dim", "16", "--n-train", "60", "--n-test", "60", "--hidden", "8", "--lr", "1e-3"]


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_train_writes_csv_manifest_and_model(tmp_path, capsys):
    assert main(["train", *SMALL, "--max-epochs", "3", "--out-dir", str(tmp_path), "--save-model"]) == 0
    assert len(rows(tmp_path / "trial.csv")) == 3
    assert (tmp_path / "model.npz").exists()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "train"
    assert manifest["arguments"]["dim"] == 16
    assert manifest["trial"]["max_epochs"] == 3
    assert "epochs=3" in capsys.readouterr().out


def test_train_rerun_byte_identical(tmp_path):
    for d in ("a", "b"):
        main(["train", *SMALL, "--objective", "split", "--max-epochs", "2", "--out-dir", str(tmp_path / d)])
    assert (tmp_path / "a" / "trial.csv").read_bytes() == (tmp_path / "b" / "trial.csv").read_bytes()


def test_config_overrides_flags(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"max-epochs": 2, "hidden": "4,4", "objective": "capped", "blob_rank": 3}))
    args = resolve_args(["train", *SMALL, "--max-epochs", "9", "--config", str(cfg)])
    assert args.max_epochs == 2 and args.hidden == (4, 4) and args.objective == "capped"
    assert args.blob_rank == 3
    assert main(["train", *SMALL, "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 0
    assert len(rows(tmp_path / "o" / "trial.csv")) == 2


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"learning_rate": 0.1}))
    with pytest.raises(ConfigError):
        resolve_args(["train", "--config", str(cfg)])
    assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2
    assert "learning_rate" in capsys.readouterr().err


def test_errors_exit_two(tmp_path):
    assert main(["train", "--data", "cifar", "--out-dir", str(tmp_path)]) == 2
    assert main(["sweep", *SMALL, "--over", "size", "--values", "60", "--objective", "standard",
                 "--out-dir", str(tmp_path)]) == 2


def test_sweep(tmp_path):
    out = tmp_path / "s"
    assert main(["sweep", *SMALL, "--objective", "capped", "--over", "size", "--values", "40,60",
                 "--seeds", "0,1", "--max-epochs", "2", "--out-dir", str(out)]) == 0
    got = rows(out / "sweep.csv")
    assert [(r["setting"], r["seed"]) for r in got] == [("40", "0"), ("40", "1"), ("60", "0"), ("60", "1")]
    medians = json.loads((out / "manifest.json").read_text())["medians"]
    assert set(medians) == {"40", "60"}


def test_noise_fraction_sweep(tmp_path):
    assert main(["sweep", *SMALL, "--objective", "capped", "--over", "noise-fraction", "--values", "0,1",
                 "--seeds", "0", "--max-epochs", "1", "--out-dir", str(tmp_path)]) == 0
    assert [r["setting"] for r in rows(tmp_path / "sweep.csv")] == ["0.0", "1.0"]


def test_quality(tmp_path):
    assert main(["quality", *SMALL, "--max-epochs", "2", "--out-dir", str(tmp_path)]) == 0
    (row,) = rows(tmp_path / "quality.csv")
    assert "score" in row


def test_stability_trains_then_reuses_checkpoint(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    common = [*SMALL, "--max-epochs", "2", "--directions", "3", "--radii", "0.1,1"]
    assert main(["stability", *common, "--out-dir", str(a)]) == 0
    assert len(rows(a / "stability.csv")) == 6
    assert main(["stability", *common, "--checkpoint", str(a / "model.npz"), "--out-dir", str(b)]) == 0
    assert (a / "stability.csv").read_bytes() == (b / "stability.csv").read_bytes()


def test_basin(tmp_path):
    assert main(["basin", "--n", "1,1000", "--samples", "20000", "--out-dir", str(tmp_path)]) == 0
    one, big = rows(tmp_path / "basin.csv")
    assert float(one["analytic_log_ratio"]) == pytest.approx(math.log(2 / 3), abs=1e-11)
    assert float(one["mc_fraction_a"]) / float(one["mc_fraction_b"]) == pytest.approx(2 / 3, abs=0.05)
    assert float(big["analytic_log_ratio"]) == pytest.approx(1000 * math.log(2 / 3), rel=1e-11)
    assert big["mc_fraction_a"] == ""


def test_mixed_data_keeps_test_clean_by_default():
    from gradsplit.cli import make_datasets
    args = resolve_args(["train", *SMALL, "--data", "mixed", "--noise-fraction", "0.5"])
    train, test = make_datasets(args, 0)
    assert len(train.meta["replaced"]) == 30
    assert "replaced" not in test.meta
    args = resolve_args(["train", *SMALL, "--data", "mixed", "--noise-fraction", "0.5", "--mix-test"])
    assert len(make_datasets(args, 0)[1].meta["replaced"]) == 30

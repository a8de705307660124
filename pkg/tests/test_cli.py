import csv
import json
import os

import numpy as np
import pytest

from logq.cli import main
from logq.manifest import RunManifest

SMALL_SYNTH = ["--users", "150", "--items", "60", "--clusters", "5", "--mean-events", "10"]


def run_ok(argv):
    assert main(argv) == 0


def outputs(directory):
    return {n: (directory / n).read_bytes() for n in sorted(os.listdir(directory))}


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / "synth"
    run_ok(["synth", "--out", str(out), "--seed", "4", *SMALL_SYNTH])
    return out


@pytest.fixture
def trained(tmp_path, synth_dir):
    split = tmp_path / "split"
    run_ok(["ingest", "--input", str(synth_dir / "interactions.csv"), "--out", str(split)])
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({
        "data": {"split_dir": "split"},
        "loss_mode": "improved", "epochs": 2, "n_negatives": 8, "batch_size": 64,
        "dim": 8, "learning_rate": 0.01,
    }))
    out = tmp_path / "ckpt"
    run_ok(["train", "--config", str(cfg), "--out", str(out)])
    return out, split


def test_synth_writes_manifest(synth_dir):
    m = RunManifest.read(synth_dir / "manifest.json")
    assert m.command == "synth" and m.seed == 4
    assert set(m.outputs) == {"interactions.csv"}
    assert "--out" not in m.argv


def test_synth_byte_identical(tmp_path, synth_dir):
    again = tmp_path / "again"
    run_ok(["synth", "--out", str(again), "--seed", "4", *SMALL_SYNTH])
    assert (again / "interactions.csv").read_bytes() == (synth_dir / "interactions.csv").read_bytes()


def test_train_artifacts(trained):
    out, _ = trained
    assert {"epochs.jsonl", "model.npz", "metrics.json", "manifest.json"} <= set(os.listdir(out))
    lines = (out / "epochs.jsonl").read_text().splitlines()
    assert len(lines) == 2 and "mean_w_up" in json.loads(lines[0])
    assert "recall@20" in json.loads((out / "metrics.json").read_text())["metrics"]


def test_eval_formats(tmp_path, trained):
    out, split = trained
    for fmt in ("json", "csv"):
        dest = tmp_path / f"eval_{fmt}"
        run_ok(["eval", "--checkpoint", str(out / "model.npz"), "--split", str(split),
                "--format", fmt, "--ks", "10,20", "--out", str(dest)])
        assert (dest / f"metrics.{fmt}").exists()
    row = next(csv.DictReader(open(tmp_path / "eval_csv" / "metrics.csv")))
    assert float(row["recall@10"]) <= float(row["recall@20"])


def test_eval_missing_checkpoint(tmp_path, capsys):
    code = main(["eval", "--checkpoint", str(tmp_path / "missing.bin"),
                 "--split", str(tmp_path), "--out", str(tmp_path / "e")])
    err = json.loads(capsys.readouterr().err.strip())
    assert code == 2 and "checkpoint not found" in err["message"]


def test_unknown_flag(tmp_path, capsys):
    code = main(["synth", "--out", str(tmp_path), "--bogus", "1"])
    assert code == 2 and json.loads(capsys.readouterr().err)["error"] == "usage"


def test_invalid_train_config(tmp_path, synth_dir, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"data": {"interactions": str(synth_dir / "interactions.csv")},
                               "learning_rate": -1}))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "learning_rate" in capsys.readouterr().err


def test_runtime_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("u,i,notatime\n")
    assert main(["ingest", "--input", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "runtime"


def test_bias_audit_ordering(tmp_path):
    out = tmp_path / "audit"
    run_ok(["bias-audit", "--catalog", "50", "--n", "5", "--proposal", "zipf:1.0",
            "--modes", "none,standard_logq,improved", "--resamples", "100000", "--out", str(out)])
    rows = {r["estimator"]: r for r in csv.DictReader(open(out / "bias_audit.csv"))}
    assert list(rows["none"]) == ["estimator", "n", "proposal", "bias_l2", "variance_trace",
                                  "resamples", "stderr"]
    b = {k: float(v["bias_l2"]) for k, v in rows.items()}
    assert b["improved"] < b["standard_logq"] < b["none"]


def test_bias_audit_bad_mode(tmp_path):
    assert main(["bias-audit", "--modes", "nope", "--out", str(tmp_path)]) == 2


def test_sketch_audit(tmp_path):
    out = tmp_path / "sk"
    run_ok(["sketch-audit", "--events", "20000", "--draws", "5", "--out", str(out)])
    rows = list(csv.DictReader(open(out / "sketch_audit.csv")))
    assert len(rows) == 5 and all(r["underestimates"] == "0" for r in rows)


def test_config_defaults_for_flags(tmp_path):
    cfg = tmp_path / "audit.json"
    cfg.write_text(json.dumps({"catalog": 12, "n": "2", "resamples": 500}))
    out = tmp_path / "a"
    run_ok(["bias-audit", "--config", str(cfg), "--out", str(out)])
    m = RunManifest.read(out / "manifest.json")
    assert m.config["catalog"] == 12 and m.config["n"] == [2]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nonsense": 1}))
    assert main(["bias-audit", "--config", str(bad), "--out", str(out)]) == 2


def _replay_identical(src, dest):
    run_ok(["replay", "--manifest", str(src / "manifest.json"), "--out", str(dest)])
    assert outputs(src) == outputs(dest)


def test_replay_synth(tmp_path, synth_dir):
    _replay_identical(synth_dir, tmp_path / "r")


def test_replay_train_and_eval(tmp_path, trained):
    out, split = trained
    _replay_identical(out, tmp_path / "r_train")
    ev = tmp_path / "eval"
    run_ok(["eval", "--checkpoint", str(out / "model.npz"), "--split", str(split), "--out", str(ev)])
    _replay_identical(ev, tmp_path / "r_eval")


def test_replay_ingest_and_audits(tmp_path, synth_dir):
    ing = tmp_path / "ing"
    run_ok(["ingest", "--input", str(synth_dir / "interactions.csv"), "--scheme", "temporal",
            "--fraction", "0.2", "--out", str(ing)])
    _replay_identical(ing, tmp_path / "r_ing")
    ba = tmp_path / "ba"
    run_ok(["bias-audit", "--catalog", "20", "--n", "3,6", "--resamples", "3000", "--out", str(ba)])
    _replay_identical(ba, tmp_path / "r_ba")
    sk = tmp_path / "sk"
    run_ok(["sketch-audit", "--events", "5000", "--draws", "3", "--format", "json", "--out", str(sk)])
    _replay_identical(sk, tmp_path / "r_sk")


def test_replay_relative_paths(tmp_path, synth_dir, monkeypatch):
    monkeypatch.chdir(tmp_path)
    run_ok(["ingest", "--input", "synth/interactions.csv", "--out", "rel"])
    monkeypatch.chdir("/")
    _replay_identical(tmp_path / "rel", tmp_path / "rel_again")


def test_replay_detects_changed_input(tmp_path, synth_dir, capsys):
    ing = tmp_path / "ing"
    run_ok(["ingest", "--input", str(synth_dir / "interactions.csv"), "--out", str(ing)])
    with open(synth_dir / "interactions.csv", "a") as fh:
        fh.write("u999,i0,1\n")
    assert main(["replay", "--manifest", str(ing / "manifest.json"), "--out", str(tmp_path / "x")]) == 2
    assert "digest mismatch" in capsys.readouterr().err


def test_manifest_written_before_failure(tmp_path, synth_dir):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"data": {"interactions": str(synth_dir / "interactions.csv")},
                               "epochs": 1, "n_negatives": 4, "batch_size": 1,
                               "sampler": "in_batch", "dim": 4}))
    out = tmp_path / "o"
    main(["train", "--config", str(cfg), "--out", str(out)])
    assert (out / "manifest.json").exists()
    np.testing.assert_equal(RunManifest.read(out / "manifest.json").config["batch_size"], 1)


def test_documented_example_config_is_valid():
    from pathlib import Path

    from logq.train import TrainConfig

    path = Path(__file__).resolve().parents[1] / "docs" / "run_config.example.json"
    raw = json.loads(path.read_text())
    assert set(raw.pop("data")) <= {"interactions", "split_dir", "scheme", "fraction"}
    assert TrainConfig.from_dict(raw).to_dict() == raw

import json
import subprocess
import sys

import numpy as np
import pytest

from otke.checkpoint import load_model
from otke.cli import main
from otke.exact import read_gram_csv

SMALL = ["--classes", "3", "--motifs-per-class", "2", "--motif-dim", "6",
         "--set-length-range", "8", "15", "--motif-count-range", "2", "4",
         "--m-train", "60", "--m-val", "20", "--m-test", "20"]
FIT = ["--kernel", "linear", "--k", "6", "--p", "4", "--q", "1", "--epsilon", "0.5",
       "--lambda", "1e-3"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(out), "--seed", "7", *SMALL]) == 0
    return out


@pytest.fixture(scope="module")
def unsup_ckpt(data_dir):
    ckpt = data_dir / "unsup.otke"
    code = main(["fit", "--mode", "unsup", "--train", str(data_dir / "train.jsonl"),
                 "--val", str(data_dir / "val.jsonl"), "--out", str(ckpt), *FIT])
    assert code == 0
    return ckpt


def lines(capsys):
    return capsys.readouterr().out.strip().splitlines()


# synth

def test_synth_summary_and_files(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path), "--seed", "7", *SMALL]) == 0
    assert lines(capsys)[-1] == "synth m=100 C=3 seed=7"
    assert sorted(p.name for p in tmp_path.iterdir()) == ["test.jsonl", "train.jsonl", "val.jsonl"]


def test_synth_bytes_deterministic(tmp_path, data_dir):
    assert main(["synth", "--out", str(tmp_path), "--seed", "7", *SMALL]) == 0
    for name in ("train.jsonl", "val.jsonl", "test.jsonl"):
        assert (tmp_path / name).read_bytes() == (data_dir / name).read_bytes()


def test_synth_missing_out_is_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["synth", "--classes", "5"])
    assert info.value.code == 2
    assert "usage:" in capsys.readouterr().err


def test_synth_zero_classes_names_flag(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        main(["synth", "--out", str(tmp_path), "--classes", "0"])
    assert info.value.code == 2
    assert "--classes" in capsys.readouterr().err


def test_synth_inconsistent_ranges(tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--set-length-range", "3", "4"]) == 2


def test_synth_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["synth", "--out", str(blocker / "sub"), "--m-train", "1"]) == 3


# fit

def test_fit_unsup_writes_checkpoint_and_metrics(data_dir, tmp_path, capsys):
    ckpt, metrics = tmp_path / "m.otke", tmp_path / "m.json"
    code = main(["fit", "--mode", "unsup", "--train", str(data_dir / "train.jsonl"),
                 "--val", str(data_dir / "val.jsonl"), "--test", str(data_dir / "test.jsonl"),
                 "--out", str(ckpt), "--metrics", str(metrics), *FIT])
    assert code == 0
    last = lines(capsys)[-1]
    assert last.startswith("fit mode=unsup train_acc=") and f"checkpoint={ckpt}" in last
    assert "val_acc=" in last and "test_acc=" in last
    assert ckpt.read_bytes()[:8] == b"OTKE0001"
    payload = json.loads(metrics.read_text())
    assert payload["config"]["lam"] == 1e-3 and payload["mode"] == "unsup"
    assert payload["train"]["top1"] >= 0.95


def test_fit_is_deterministic(data_dir, unsup_ckpt, tmp_path):
    again = tmp_path / "again.otke"
    main(["fit", "--mode", "unsup", "--train", str(data_dir / "train.jsonl"),
          "--val", str(data_dir / "val.jsonl"), "--out", str(again), *FIT])
    assert again.read_bytes() == unsup_ckpt.read_bytes()


def test_fit_sup_from_init(data_dir, unsup_ckpt, tmp_path, capsys):
    ckpt = tmp_path / "sup.otke"
    code = main(["fit", "--mode", "sup", "--init", str(unsup_ckpt),
                 "--train", str(data_dir / "train.jsonl"), "--val", str(data_dir / "val.jsonl"),
                 "--out", str(ckpt), "--epochs", "2", *FIT])
    assert code == 0
    out = lines(capsys)
    epochs = [line for line in out if line.startswith("epoch=")]
    assert len(epochs) == 2
    assert epochs[0].split()[1].startswith("train_loss=")
    assert [tok.split("=")[0] for tok in epochs[0].split()] == ["epoch", "train_loss", "val_acc", "lr"]
    assert out[-1].startswith("fit mode=sup")
    assert load_model(ckpt).bank.refs.shape == (1, 4, 6)


def test_fit_sup_requires_init(data_dir, tmp_path):
    assert main(["fit", "--mode", "sup", "--train", str(data_dir / "train.jsonl"),
                 "--out", str(tmp_path / "m")]) == 2


def test_fit_missing_train_file(tmp_path):
    assert main(["fit", "--train", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "m")]) == 3


def test_fit_unknown_config_key(data_dir, tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[otke]\nwarp_speed = 9\n")
    assert main(["fit", "--config", str(cfg), "--train", str(data_dir / "train.jsonl"),
                 "--out", str(tmp_path / "m")]) == 2


def test_fit_config_grid_needs_validation(data_dir, tmp_path):
    cfg = tmp_path / "grid.ini"
    cfg.write_text("lambda_grid = 1e-3, 1e-2\n")
    args = ["fit", "--config", str(cfg), "--train", str(data_dir / "train.jsonl"),
            "--out", str(tmp_path / "m"), *FIT]
    assert main(args) == 2
    assert main(args + ["--no-grid"]) == 0


def test_fit_config_grid_search(data_dir, tmp_path):
    cfg = tmp_path / "grid.ini"
    cfg.write_text("train = {}\nval = {}\nlambda_grid = 1e-3, 10\n".format(
        data_dir / "train.jsonl", data_dir / "val.jsonl"))
    metrics = tmp_path / "m.json"
    assert main(["fit", "--config", str(cfg), "--out", str(tmp_path / "m"), "--metrics",
                 str(metrics), "--kernel", "linear", "--k", "6", "--p", "4"]) == 0
    payload = json.loads(metrics.read_text())
    assert [t["lam"] for t in payload["grid"]] == [1e-3, 10.0]
    assert payload["config"]["lam"] == 1e-3


def test_fit_sup_dimension_mismatch(unsup_ckpt, tmp_path):
    other = tmp_path / "other"
    main(["synth", "--out", str(other), "--motif-dim", "4", "--set-length-range", "5", "8",
          "--m-train", "10", "--m-val", "0", "--m-test", "0"])
    assert main(["fit", "--mode", "sup", "--init", str(unsup_ckpt), "--train",
                 str(other / "train.jsonl"), "--out", str(tmp_path / "m")]) == 5


def test_fit_divergence_exit_code(data_dir, unsup_ckpt, tmp_path, monkeypatch, capsys):
    import otke.training as training

    def boom(*args, **kwargs):
        raise training.NonFiniteError("parameters are not finite")

    monkeypatch.setattr(training, "_run_epoch", boom)
    code = main(["fit", "--mode", "sup", "--init", str(unsup_ckpt), "--train",
                 str(data_dir / "train.jsonl"), "--out", str(tmp_path / "m"), "--epochs", "2"])
    assert code == 4
    assert "last finite epoch 0" in capsys.readouterr().err


# embed

def test_embed_lines_and_determinism(data_dir, unsup_ckpt, tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (a, b):
        assert main(["embed", "--model", str(unsup_ckpt), "--data", str(data_dir / "val.jsonl"),
                     "--out", str(out)]) == 0
    rows = a.read_text().splitlines()
    assert len(rows) == 20
    assert all(len(r.split(",")) == 24 for r in rows)
    assert a.read_bytes() == b.read_bytes()
    assert lines(capsys)[-1] == f"embed m=20 dim=24 out={b}"


def test_embed_dimension_mismatch(unsup_ckpt, tmp_path):
    data = tmp_path / "d.jsonl"
    data.write_text('{"label": 0, "features": [[1.0, 2.0]]}\n')
    assert main(["embed", "--model", str(unsup_ckpt), "--data", str(data),
                 "--out", str(tmp_path / "e.csv")]) == 5


def test_embed_corrupt_checkpoint(data_dir, tmp_path):
    bad = tmp_path / "bad.otke"
    bad.write_bytes(b"garbage")
    assert main(["embed", "--model", str(bad), "--data", str(data_dir / "val.jsonl"),
                 "--out", str(tmp_path / "e.csv")]) == 3


# gram

def test_gram_k_z(data_dir, tmp_path, capsys):
    out = tmp_path / "g.csv"
    assert main(["gram", "--data", str(data_dir / "val.jsonl"), "--kind", "k_z", "--out", str(out),
                 "--p", "4", "--sinkhorn-iters", "100"]) == 0
    G, meta = read_gram_csv(out)
    assert G.shape == (20, 20) and meta["kind"] == "k_z"
    np.testing.assert_allclose(G, G.T, atol=1e-12)
    summary = lines(capsys)[-1]
    assert "solves=20" in summary and "min_eig=" in summary


def test_gram_threads_do_not_change_output(data_dir, tmp_path, monkeypatch):
    one, env = tmp_path / "1.csv", tmp_path / "env.csv"
    args = ["gram", "--data", str(data_dir / "val.jsonl"), "--kind", "k_ot", "--sinkhorn-iters", "50"]
    assert main(args + ["--out", str(one), "--threads", "1"]) == 0
    monkeypatch.setenv("OTKE_THREADS", "3")
    assert main(args + ["--out", str(env)]) == 0
    assert one.read_bytes() == env.read_bytes()
    monkeypatch.setenv("OTKE_THREADS", "many")
    assert main(args + ["--out", str(env)]) == 2


def test_gram_size_guard(tmp_path):
    data = tmp_path / "big.jsonl"
    data.write_text('{"label": 0, "features": [[1.0]]}\n' * 2001)
    assert main(["gram", "--data", str(data), "--kind", "mean_pool", "--out",
                 str(tmp_path / "g.csv")]) == 6


# check

def test_check_single_suite(capsys):
    assert main(["check", "--suite", "lemma1", "--trials", "100"]) == 0
    out = lines(capsys)
    assert out[0].startswith("suite=lemma1 status=PASS") and "violations=0" in out[0]
    assert out[-1] == "check status=PASS"


def test_check_gradcheck_reports_error(capsys):
    assert main(["check", "--suite", "gradcheck"]) == 0
    line = lines(capsys)[0]
    err = float(next(tok for tok in line.split() if tok.startswith("max_rel_err=")).split("=")[1])
    assert err <= 1e-4


def test_check_failure_exit_code(monkeypatch):
    from otke import cli
    from otke.checks import CheckResult

    monkeypatch.setattr(cli, "run_suite", lambda name, **kw: CheckResult(name, False))
    assert main(["check", "--suite", "psd"]) == 1


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "otke", "check", "--suite", "sinkhorn",
                           "--trials", "5"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[-1] == "check status=PASS"

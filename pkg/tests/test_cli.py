import csv
import json

import pytest

from droopstab import cli
from droopstab import dataset as ds


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_usage_error_exit_2(capsys):
    with pytest.raises(SystemExit) as err:
        run("sweep")
    assert err.value.code == 2
    with pytest.raises(SystemExit) as err:
        run("frobnicate")
    assert err.value.code == 2


def test_grid_axis_parse():
    assert cli.parse_grid_axis("0:0.4:100") == (0.0, 0.4, 100)
    with pytest.raises(Exception):
        cli.parse_grid_axis("0:1")


def test_net_show(tmp_path, capsys):
    out = tmp_path / "net.json"
    assert run("net", "show", "--config", "ring5:y12/2", "--out", out) == 0
    text = capsys.readouterr().out
    assert "ring5:y12/2" in text
    assert json.loads(out.read_text())["id"] == "ring5:y12/2"
    assert (tmp_path / "net.json.manifest.json").exists()


def test_module_error_nonzero(tmp_path, capsys):
    assert run("net", "show", "--config", "ring5:y19/2") != 0
    assert "error" in capsys.readouterr().err
    assert run("sweep", "--config", tmp_path / "missing.json", "--out", tmp_path / "r.csv") != 0


def test_sweep_csv_and_manifest(tmp_path):
    out = tmp_path / "region.csv"
    code = run("sweep", "--config", "ring5", "--target", 1, "--kf", "0:0.4:10", "--kv", "0:4:10",
               "--fixed-kf", 0.1, "--fixed-kv", 2, "--out", out)
    assert code == 0
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["kf_pct", "kv_pct", "stable"] and len(rows) == 101
    labels = {r[2] for r in rows[1:]}
    assert labels == {"0", "1"}
    man = json.loads((tmp_path / "region.csv.manifest.json").read_text())
    assert man["command"] == "sweep" and str(out) in man["outputs"]
    assert len(man["configs"]["ring5"]) == 64


def test_sweep_svg_threads_env(tmp_path, monkeypatch):
    monkeypatch.setenv("DROOPSTAB_THREADS", "2")
    out = tmp_path / "region.svg"
    assert run("sweep", "--kf", "0:0.4:5", "--kv", "0:4:5", "--format", "svg", "--out", out) == 0
    assert out.read_text().startswith("<svg")


def test_dataset_train_sample_eval(tmp_path, capsys):
    data = tmp_path / "train.bin"
    assert run("dataset", "gen", "--configs", "ring5,ring5:y12/2", "--count", 80, "--seed", 7, "--out", data) == 0
    ts = ds.TrainingSet.load(data)
    assert [(ts.condition_ids == k).sum() for k in range(2)] == [40, 40]

    model = tmp_path / "model.bin"
    code = run("train", "--mode", "cgan", "--data", data, "--lr", 1e-3, "--batch", 20, "--eps", 0.05,
               "--eval-every", 1, "--max-epochs", 2, "--seed", 1, "--out", model,
               "--g-hidden", "8,8", "--d-hidden", "8")
    assert code == 0
    losses = list(csv.reader(open(tmp_path / "model.losses.csv")))
    assert losses[0] == ["epoch", "real_loss", "fake_loss", "g_loss"] and len(losses) == 3
    dcs = list(csv.reader(open(tmp_path / "model.dc.csv")))
    assert dcs[0] == ["epoch", "config_id", "d_c"] and len(dcs) == 1 + 2 * 2

    samples = tmp_path / "s.csv"
    assert run("sample", "--model", model, "--condition", "ring5:y12/2", "--count", 25, "--seed", 3,
               "--out", samples) == 0
    rows = list(csv.reader(open(samples)))
    assert rows[0][0] == "kf1" and rows[0][-1] == "valid" and len(rows) == 26
    first = samples.read_bytes()
    run("sample", "--model", model, "--condition", "1", "--count", 25, "--seed", 3, "--out", samples)
    assert samples.read_bytes() == first

    assert run("sample", "--model", model, "--count", 5, "--out", samples) != 0  # condition required

    acc = tmp_path / "acc.csv"
    assert run("eval", "accuracy", "--model", model, "--count", 10, "--out", acc) == 0
    out = capsys.readouterr().out
    assert "ring5:y12/2" in out and acc.exists()

    cov = tmp_path / "cov.csv"
    assert run("eval", "coverage", "--model", model, "--config", "ring5", "--count", 50,
               "--resolution", 8, "--out", cov) == 0
    bench = tmp_path / "bench.csv"
    assert run("bench", "--model", model, "--config", "ring5", "--count", 20, "--out", bench) == 0
    assert len(list(csv.reader(open(bench)))) == 3

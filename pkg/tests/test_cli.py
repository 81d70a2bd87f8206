import csv
import hashlib
import re
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from sponet.cli import main, read_config_file
from sponet.spon import load_model


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def value(text, key):
    return float(re.search(rf"^{key}=(\S+)$", text, re.M).group(1))


@pytest.fixture
def data8(tmp_path, capsys):
    p = tmp_path / "d8.bin"
    code, out, _ = run(capsys, "gen-data", "--nx", 8, "--train", 8, "--val", 2, "--test", 4, "--out", p)
    assert code == 0 and "bytes=" in out
    return p


def sha(p):
    return hashlib.sha256(Path(p).read_bytes()).hexdigest()


def test_gen_data_reproducible(tmp_path, capsys, data8):
    other = tmp_path / "again.bin"
    run(capsys, "gen-data", "--nx", 8, "--train", 8, "--val", 2, "--test", 4, "--out", other)
    assert sha(other) == sha(data8)


def test_usage_errors(tmp_path, capsys):
    assert run(capsys, "gen-data", "--nx", 0, "--out", tmp_path / "x")[0] == 2
    assert run(capsys, "train")[0] == 2
    assert run(capsys, "frobnicate")[0] == 2
    code, _, err = run(capsys, "train", "--data", "x", "--out", "y", "--lr-start", "1e-6", "--lr-end", "1e-4")
    assert code == 2


def test_data_errors(tmp_path, capsys, data8):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"not a dataset")
    assert run(capsys, "train", "--data", bad, "--out", tmp_path / "m.ck")[0] == 3
    assert run(capsys, "eval", "--ckpt", bad, "--data", data8)[0] == 3


def test_train_eval_cycle(tmp_path, capsys, data8):
    ck, csv_path, png = tmp_path / "m.ck", tmp_path / "m.csv", tmp_path / "m.png"
    code, out, _ = run(capsys, "train", "--data", data8, "--epochs", 1, "--out", ck, "--metrics", csv_path,
                       "--plot", png)
    assert code == 0
    rows = list(csv.reader(open(csv_path)))
    assert rows[0] == ["epoch", "lr", "train_rel_l2", "val_rel_l2", "seconds"] and len(rows) == 2
    assert png.stat().st_size > 0
    model = load_model(ck)
    assert int(value(out, "params")) == model.num_params
    code, plain, _ = run(capsys, "eval", "--ckpt", ck, "--data", data8)
    assert code == 0 and value(plain, "boundary_rel_l2") == 0.0
    code, same, _ = run(capsys, "eval", "--ckpt", ck, "--data", data8, "--nx-eval", 8)
    assert abs(value(same, "test_rel_l2") - value(plain, "test_rel_l2")) <= 1e-12
    code, fine, _ = run(capsys, "eval", "--ckpt", ck, "--data", data8, "--nx-eval", 16)
    assert code == 0 and "nx=16" in fine


def test_mg_hierarchy_logged(tmp_path, capsys):
    p = tmp_path / "d16.bin"
    run(capsys, "gen-data", "--nx", 16, "--train", 4, "--val", 0, "--test", 1, "--out", p)
    code, out, err = run(capsys, "train", "--data", p, "--arch", "spon-mg", "--levels", 3, "--epochs", 1,
                         "--out", tmp_path / "m.ck", "-v")
    assert code == 0
    assert "hierarchy 16/8/4" in err
    assert [s.n_x for s in load_model(tmp_path / "m.ck").processor.u_spaces] == [16, 8, 4]


def test_report(tmp_path, capsys):
    out_csv = tmp_path / "r.csv"
    code, out, _ = run(capsys, "report", "--nx", 8, 16, "--arch", "spon", "spon-mg", "--reps", 1,
                       "--samples", 8, "--out", out_csv)
    assert code == 0
    rows = list(csv.DictReader(open(out_csv)))
    assert len(rows) == 4
    assert all(float(r["sec_per_epoch"]) > 0 for r in rows)
    assert out_csv.with_suffix(".png").stat().st_size > 0


def test_config_file(tmp_path, capsys, data8):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# training defaults\nversion = 1\nepochs = 2\nmp-layers = 1\narch = spon-mg\n")
    assert read_config_file(cfg)["mp_layers"] == "1"
    m = tmp_path / "m.csv"
    code, _, err = run(capsys, "train", "--config", cfg, "--data", data8, "--out", tmp_path / "m.ck",
                       "--metrics", m, "--epochs", 1)
    assert code == 0
    assert len(m.read_text().splitlines()) == 2  # flag beats file
    assert "'arch': 'spon-mg'" in err
    cfg.write_text("colour = blue\n")
    assert run(capsys, "train", "--config", cfg, "--data", data8, "--out", tmp_path / "m.ck")[0] == 2
    cfg.write_text("version = 2\n")
    assert run(capsys, "gen-data", "--config", cfg, "--out", tmp_path / "x")[0] == 2


def test_threads_env(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("SPONET_THREADS", "2")
    code, _, err = run(capsys, "gen-data", "--nx", 4, "--train", 1, "--val", 0, "--test", 0,
                       "--out", tmp_path / "t.bin")
    assert code == 0 and "'threads': 2" in err
    monkeypatch.setenv("SPONET_THREADS", "zero")
    assert run(capsys, "gen-data", "--nx", 4, "--out", tmp_path / "t.bin")[0] == 2


def test_console_script_entry(tmp_path):
    r = subprocess.run([sys.executable, "-m", "sponet.cli", "gen-data", "--nx", "0", "--out", "x"],
                       capture_output=True, text=True)
    assert r.returncode == 2


def readme_blocks():
    text = (Path(__file__).resolve().parents[1] / "README.md").read_text()
    return re.findall(r"```sh doctest\n(.*?)```", text, re.S)


def test_readme_quickstart_runs(tmp_path):
    blocks = readme_blocks()
    assert blocks, "README has no doctest blocks"
    for block in blocks:
        r = subprocess.run(["bash", "-euo", "pipefail", "-c", block], cwd=tmp_path, capture_output=True, text=True)
        assert r.returncode == 0, r.stderr

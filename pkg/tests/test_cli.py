import csv
import io
import time

import pytest

from stable_gauss.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_table1(capsys, tmp_path):
    code, out, err = run(capsys, "table1", "--out", str(tmp_path / "t.csv"))
    assert code == 0 and err == "" and "-103" in out and "7.10e-23" in out
    rows = list(csv.DictReader((tmp_path / "t.csv").open()))
    assert len(rows) == 4 and all(r["matches"] == "True" for r in rows)


def test_table1_f64(capsys):
    code, out, _ = run(capsys, "table1", "--mode", "f64")
    assert code == 0 and "no finite minimum within sweep range" in out


def test_train_smoke(capsys, tmp_path):
    out_path = tmp_path / "train.csv"
    t0 = time.perf_counter()
    code, _, err = run(capsys, "train", "--config", "configs/smoke_train.conf", "--out", str(out_path))
    elapsed = time.perf_counter() - t0
    assert code == 0 and "nonfinite_steps=0/500" in err
    rows = list(csv.reader(out_path.open()))
    assert rows[0][:2] == ["step", "loss"] and len(rows) == 501
    assert elapsed < 10
    first = out_path.read_bytes()
    run(capsys, "train", "--config", "configs/smoke_train.conf", "--out", str(out_path))
    assert out_path.read_bytes() == first
    run(capsys, "train", "--config", "configs/smoke_train.conf", "--out", str(out_path), "--seed", "1")
    assert out_path.read_bytes() != first


def test_klprobe_stdout(capsys, tmp_path):
    conf = tmp_path / "probe.conf"
    conf.write_text("p_min = -2\np_max = 2\np_step = 1\nmus = 0, 5\nprobe_params = upbounded:1\n")
    code, out, err = run(capsys, "klprobe", "--config", str(conf), "--mode", "f32")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 4 * 25 and all(r["finite"] == "1" for r in rows)
    assert "0/25 non-finite" in err


def test_sweep_writes_both_csvs(capsys, tmp_path):
    conf = tmp_path / "s.conf"
    conf.write_text(
        "data_n = 20\nheight = 4\nwidth = 4\nlatent_dim = 2\nencoder_arch = 4\ndecoder_arch = 4\n"
        "steps = 20\nseeds = 2\nworkers = 1\nconvergence_threshold = 1e9\nlrs = 1e-3, 2e-3\n"
    )
    code, out, _ = run(capsys, "sweep", "--config", str(conf), "--out", str(tmp_path / "r.csv"))
    assert code == 0 and "0 / 2" in out
    assert len((tmp_path / "r.csv").read_text().splitlines()) == 5
    assert len((tmp_path / "r.cells.csv").read_text().splitlines()) == 3


def test_bad_config_exit_code(capsys, tmp_path):
    conf = tmp_path / "bad.conf"
    conf.write_text("nonsense = 1\n")
    code, _, err = run(capsys, "train", "--config", str(conf))
    assert code == 2 and "unknown config key" in err
    code, _, _ = run(capsys, "train", "--config", str(tmp_path / "missing.conf"))
    assert code == 2


def test_bad_command():
    with pytest.raises(SystemExit):
        main(["fly"])

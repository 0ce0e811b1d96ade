import csv
import io
import json

import numpy as np
import pytest

from genforest.cli import main
from genforest.data import Dataset, write_csv
from genforest.forest import load_forest, predict_many

from conftest import make_data


def _rows(text):
    lines = text.splitlines()
    assert lines[0].startswith("# config: ")
    json.loads(lines[0][len("# config: "):])
    return list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))


def _fail(capsys, argv, tag):
    assert main(argv) != 0
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith(tag + ": ")


@pytest.fixture
def files(tmp_path, rng):
    d = make_data(rng, n=200, p=3, kind="instrumental")
    train = tmp_path / "train.csv"
    write_csv(d, train)
    test = tmp_path / "test.csv"
    write_csv(Dataset(rng.uniform(-1, 1, size=(7, 3))), test)
    return tmp_path, train, test


def _train(files, *extra, out="f.bin"):
    tmp, train, _ = files
    argv = ["train", "--data", str(train), "--outcome", "y", "--features", "x1,x2,x3",
            "--num-trees", "20", "--out", str(tmp / out), *extra]
    assert main(argv) == 0
    return tmp / out


def test_train_then_predict_round_trip(files, capsys):
    tmp, _, test = files
    path = _train(files)
    summary = capsys.readouterr().out
    for key in ("n=200", "p=3", "num_trees=20", "subsample_size=100", "little_bag_size=4",
                "seed=0", "centered=none", "wall_time="):
        assert key in summary
    assert main(["predict", "--forest", str(path), "--data", str(test)]) == 0
    rows = _rows(capsys.readouterr().out)
    forest, _ = load_forest(path)
    X = np.loadtxt(test, delimiter=",", skiprows=1)
    theta, _ = predict_many(forest, X)
    assert [float(r["estimate"]) for r in rows] == theta.tolist()


def test_same_seed_gives_identical_files(files, capsys):
    a = _train(files, "--model", "instrumental", "--treatment", "w", "--instrument", "z",
               "--center", "auto", out="a.bin")
    b = _train(files, "--model", "instrumental", "--treatment", "w", "--instrument", "z",
               "--center", "auto", out="b.bin")
    assert a.read_bytes() == b.read_bytes()
    assert "centered=outcome,treatment,instrument" in capsys.readouterr().out


def test_missing_instrument(files, capsys):
    tmp, train, _ = files
    _fail(capsys, ["train", "--model", "instrumental", "--data", str(train), "--outcome", "y",
                   "--treatment", "w", "--out", str(tmp / "x.bin")], "MissingRole")


def test_constant_outcome_predictions(tmp_path, rng, capsys):
    d = Dataset(rng.uniform(size=(60, 2)), np.full(60, 2.25))
    write_csv(d, tmp_path / "c.csv")
    assert main(["train", "--data", str(tmp_path / "c.csv"), "--outcome", "y",
                 "--num-trees", "8", "--out", str(tmp_path / "c.bin")]) == 0
    out = tmp_path / "pred.csv"
    assert main(["predict", "--forest", str(tmp_path / "c.bin"), "--data",
                 str(tmp_path / "c.csv"), "--out", str(out)]) == 0
    rows = _rows(out.read_text())
    assert len(rows) == 60 and {r["estimate"] for r in rows} == {"2.25"}


def test_quantile_ci_rejected(files, capsys):
    tmp, _, test = files
    path = _train(files, "--model", "quantile", "--quantiles", "0.1,0.9")
    capsys.readouterr()
    _fail(capsys, ["predict", "--forest", str(path), "--data", str(test), "--ci"],
          "UnsupportedForModel")
    assert main(["predict", "--forest", str(path), "--data", str(test)]) == 0
    rows = _rows(capsys.readouterr().out)
    assert list(rows[0]) == ["estimate_q0.1", "estimate_q0.9"]


def test_ci_columns(files, capsys):
    tmp, _, test = files
    path = _train(files, "--model", "partial_effect", "--treatment", "w", "--num-trees", "100")
    capsys.readouterr()
    assert main(["predict", "--forest", str(path), "--data", str(test), "--ci"]) == 0
    rows = _rows(capsys.readouterr().out)
    assert list(rows[0]) == ["estimate", "std_err", "ci_lower", "ci_upper"]
    for r in rows:
        est, se = float(r["estimate"]), float(r["std_err"])
        for bound, sign in (("ci_lower", -1), ("ci_upper", 1)):
            expect = est + sign * 1.959964 * se
            assert float(r[bound]) == pytest.approx(expect, rel=1e-6, abs=1e-12)


def test_feature_mismatch(files, tmp_path, capsys):
    _, _, test = files
    path = _train(files)
    capsys.readouterr()
    _fail(capsys, ["predict", "--forest", str(path), "--data", str(test), "--features", "x1,x2"],
          "FeatureMismatch")
    _fail(capsys, ["predict", "--forest", str(path), "--data", str(test),
                   "--features", "x1,x3,x2"], "FeatureMismatch")
    other = tmp_path / "other.csv"
    other.write_text("a,b,c\n1,2,3\n")
    _fail(capsys, ["predict", "--forest", str(path), "--data", str(other)], "FeatureMismatch")


def test_simulate_row_accounting(tmp_path, capsys):
    out = tmp_path / "sim.csv"
    argv = ["simulate", "--design", "causal", "--confounding", "--no-heterogeneity",
            "--n", "800", "--p", "10", "--reps", "5", "--num-trees", "20",
            "--test-points", "50", "--out", str(out)]
    assert main(argv) == 0
    rows = _rows(out.read_text())
    assert len(rows) == 12
    per_rep = [r for r in rows if r["rep"] != "mean"]
    assert len(per_rep) == 10
    assert {r["method"] for r in rows} == {"grf", "centered-grf"}
    for r in rows:
        assert float(r["mse_x10"]) == pytest.approx(10 * float(r["mse"]))
    assert capsys.readouterr().out == ""


def test_simulate_quantile_levels(capsys):
    argv = ["simulate", "--design", "quantile_scale_shift", "--n", "200", "--p", "2",
            "--reps", "1", "--num-trees", "8", "--test-points", "20"]
    assert main(argv) == 0
    rows = _rows(capsys.readouterr().out)
    assert sorted({float(r["q"]) for r in rows}) == [0.1, 0.5, 0.9]
    assert {r["method"] for r in rows} == {"grf", "regression-split"}


def test_simulate_errors(capsys):
    _fail(capsys, ["simulate", "--design", "causal", "--reps", "0"], "InvalidOptions")
    _fail(capsys, ["simulate", "--design", "nope"], "UnknownDesign")
    _fail(capsys, ["frobnicate"], "InvalidOptions")
    _fail(capsys, ["train", "--data", "x.csv"], "InvalidOptions")


def test_config_file_with_override(files, capsys):
    tmp, train, _ = files
    cfg = tmp / "run.cfg"
    cfg.write_text("# defaults\nnum-trees = 12\nmodel=partial_effect\ntreatment=w\nseed=4\n")
    argv = ["--config", str(cfg), "train", "--data", str(train), "--outcome", "y",
            "--features", "x1,x2,x3", "--seed", "5", "--out", str(tmp / "cfg.bin")]
    assert main(argv) == 0
    out = capsys.readouterr().out
    assert "num_trees=12" in out and "seed=5" in out and "model=partial_effect" in out
    cfg.write_text("bogus=1\n")
    _fail(capsys, argv, "InvalidOptions")


def test_missing_file(tmp_path, capsys):
    _fail(capsys, ["train", "--data", str(tmp_path / "none.csv"), "--outcome", "y",
                   "--out", str(tmp_path / "f.bin")], "FileError")

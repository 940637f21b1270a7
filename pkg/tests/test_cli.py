"""Command line driver, exercised in process through ``main(argv)``."""

import csv
import os

import pytest

from chaincert.cli import main

FIXDIR = os.path.join(os.path.dirname(__import__("chaincert").__file__), "fixtures")


def _fixture(name):
    return os.path.join(FIXDIR, name)


@pytest.fixture
def tiny_arch(tmp_path):
    path = tmp_path / "tiny.arch"
    path.write_text(
        "input samples=4 features=5 norm=1\n"
        "radius 1\n"
        "objective logistic\n"
        "layer fully-connected out=6 activation=softplus-centered bias=true\n"
        "layer fully-connected out=3 activation=identity bias=true\n")
    return str(path)


@pytest.fixture
def relu_arch(tmp_path):
    path = tmp_path / "relu.arch"
    path.write_text(
        "input samples=2 features=3 norm=1\n"
        "radius 1\n"
        "objective squared\n"
        "layer fully-connected out=3 activation=relu bias=true\n")
    return str(path)


def test_smoothness_report(tiny_arch, capsys):
    assert main(["smoothness", tiny_arch]) == 0
    out = capsys.readouterr().out
    assert "final log lipschitz" in out
    assert "fully-connected" in out


def test_smoothness_compare_identical_is_zero(tiny_arch, capsys):
    assert main(["smoothness", tiny_arch, "--compare", tiny_arch]) == 0
    out = capsys.readouterr().out
    assert "log lipschitz difference  (b - a) = 0" in out
    assert "log smoothness difference (b - a) = 0" in out


def test_smoothness_vgg_fixtures(capsys):
    rc = main(["smoothness", _fixture("vgg16.arch"),
               "--compare", _fixture("vgg16-smooth.arch")])
    assert rc == 0
    out = capsys.readouterr().out
    assert "log lipschitz difference  (b - a) = 0" in out


def test_smoothness_overrides_change_output(tiny_arch, capsys):
    main(["smoothness", tiny_arch])
    base = capsys.readouterr().out
    main(["smoothness", tiny_arch, "--radius", "0.25", "--batch", "2",
          "--input-norm", "0.5"])
    small = capsys.readouterr().out
    assert base != small


def test_gradcheck_passes_on_smooth_arch(tiny_arch, capsys):
    assert main(["gradcheck", tiny_arch, "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert "ok" in out and "FAIL" not in out
    assert "max relative error" in out


def test_gradcheck_rejects_symbolic_arch(capsys):
    rc = main(["gradcheck", _fixture("vgg16-smooth.arch")])
    assert rc == 2
    assert "error" in capsys.readouterr().err


def test_oracle_bench_csv(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    rc = main(["oracle-bench", "--tau", "1", "2", "--width", "3",
               "--reps", "1", "--out", str(out)])
    assert rc == 0
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["tau", "width", "params", "dp_seconds", "dense_seconds",
                       "gn_dual_seconds", "newton_agree", "gn_agree"]
    assert len(rows) == 3
    for row in rows[1:]:
        assert float(row[6]) < 1e-8
        assert float(row[7]) < 1e-6


def test_train_certified(tiny_arch, capsys):
    rc = main(["train", tiny_arch, "--steps", "5", "--certified"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "certified smoothness" in out
    assert "final objective" in out


def test_train_explicit_gamma_with_trace(tiny_arch, tmp_path, capsys):
    trace = tmp_path / "trace.csv"
    rc = main(["train", tiny_arch, "--steps", "4", "--gamma", "0.05",
               "--out", str(trace)])
    assert rc == 0
    with open(trace, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iter", "value", "mapping_norm"]
    assert len(rows) == 5


def test_train_sgd_variance_line(tiny_arch, capsys):
    rc = main(["train", tiny_arch, "--steps", "4", "--certified",
               "--batch", "2"])
    assert rc == 0
    assert "gradient variance" in capsys.readouterr().out


def test_train_usage_errors(tiny_arch, capsys):
    assert main(["train", tiny_arch, "--steps", "3", "--gamma", "0"]) == 2
    assert main(["train", tiny_arch, "--steps", "3"]) == 2
    capsys.readouterr()


def test_train_certified_refusal_is_check_failure(relu_arch, capsys):
    rc = main(["train", relu_arch, "--steps", "3", "--certified"])
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_parse_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.arch"
    bad.write_text("input samples=2 features=3 norm=1\nradius 1\n"
                   "objective squared\nlayer teleport out=2\n")
    assert main(["smoothness", str(bad)]) == 2
    assert "parse error" in capsys.readouterr().err


def test_missing_file_exit_code(capsys):
    assert main(["smoothness", "/nonexistent/x.arch"]) == 2
    capsys.readouterr()

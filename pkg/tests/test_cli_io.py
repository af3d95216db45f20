import csv
import json

import numpy as np
import pytest

from pdmix import bench, cli
from pdmix.synthetic import SyntheticDesign, generate_synthetic

IRIS_PD = (-629.1448, -449.8594, -376.9440, -311.5519, -192.0285)


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _report(out):
    return json.loads((out / "report.json").read_text())


def test_mortality_run_and_round_trip(tmp_path):
    out = tmp_path / "m"
    rc = cli.main(["--data", "builtin:mortality", "--family", "poisson",
                   "--support", "grid:0:9:1", "--out", str(out)])
    assert rc == 0
    rep = _report(out)
    fixed = rep["results"]["fixed"]
    assert fixed["loglik"] == pytest.approx(-1990.0928, abs=5e-4)
    assert rep["converged"] and rep["config"]["algorithm"] == "pd"
    assert set(rep["files"]) == {"trace.csv", "measure.csv", "cdf.csv", "report.json"}

    # final summary can be recomputed from the trace
    trace = _read_csv(out / "trace.csv")
    assert list(trace[0]) == cli.TRACE_HEADER
    assert float(trace[-1]["loglik"]) == pytest.approx(fixed["loglik"], abs=1e-9)
    assert float(trace[-1]["psi"]) == pytest.approx(fixed["psi"], rel=1e-12)
    assert float(trace[-1]["lambda"]) == pytest.approx(
        rep["results"]["reference"]["loglik"] - fixed["loglik"], abs=1e-9)
    assert len(trace) == sum(fixed["iterations"].values()) + 1

    measure = _read_csv(out / "measure.csv")
    assert len(measure) == fixed["m_hat"]
    assert sum(float(r["weight"]) for r in measure) == pytest.approx(1.0, abs=1e-10)
    cdf = _read_csv(out / "cdf.csv")
    assert float(cdf[-1]["cumulative"]) == pytest.approx(1.0)


def test_exit_codes(tmp_path):
    assert cli.main(["--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "a")]) == 1
    assert cli.main(["--data", "builtin:nothing", "--out", str(tmp_path / "b")]) == 1
    assert cli.main(["--synthetic", "--support", "grid:x", "--out", str(tmp_path / "c")]) == 1
    rc = cli.main(["--data", "builtin:mortality", "--family", "poisson", "--support",
                   "grid:0:9:1", "--max-iter", "2", "--no-reference", "--out", str(tmp_path / "d")])
    assert rc == 2
    assert not _report(tmp_path / "d")["converged"]
    with pytest.raises(SystemExit):
        cli.main(["--algorithm", "simplex"])


def test_iris_sweep_matches_reference_values(tmp_path):
    out = tmp_path / "sweep"
    rc = cli.main(["--data", "builtin:iris", "--algorithm", "sweep", "--sieve", "5,2,1,0.5,0.2",
                   "--no-reference", "--out", str(out)])
    assert rc == 0
    tree = _report(out)["results"]["tree"]
    assert [lev["sieve"] for lev in tree] == [5, 2, 1, 0.5, 0.2]
    for lev, ref in zip(tree, IRIS_PD):
        assert lev["loglik"] == pytest.approx(ref, abs=5e-4)
    rows = _read_csv(out / "tree.csv")
    assert len(rows) == sum(lev["m_hat"] for lev in tree)


def test_verify_small_support(tmp_path):
    out = tmp_path / "v"
    rc = cli.main(["--data", "builtin:mortality", "--family", "poisson", "--support",
                   "grid:0:3:1", "--verify", "--no-reference", "--out", str(out)])
    assert rc == 0
    ver = _report(out)["results"]["verify"]
    assert ver["pass"] and ver["gap"] <= 1e-6


def test_verify_skips_large_support(tmp_path):
    out = tmp_path / "v"
    cli.main(["--data", "builtin:mortality", "--family", "poisson", "--support",
              "grid:0:9:1", "--verify", "--no-reference", "--out", str(out)])
    assert "skipped" in _report(out)["results"]["verify"]


def test_csv_input_with_counts(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("x,n\n0,5\n1,3\n2,2\n")
    out = tmp_path / "o"
    rc = cli.main(["--data", str(path), "--family", "poisson", "--columns", "x",
                   "--count-column", "n", "--support", "grid:0:3:0.5", "--out", str(out)])
    assert rc == 0
    rep = _report(out)
    assert rep["results"]["n"] == 10 and rep["results"]["d"] == 3


def test_out_environment_variable(tmp_path, monkeypatch):
    target = tmp_path / "from-env"
    monkeypatch.setenv(cli.OUT_ENV, str(target))
    rc = cli.main(["--data", "builtin:mortality", "--family", "poisson",
                   "--support", "grid:0:4:1", "--no-reference"])
    assert rc == 0 and (target / "report.json").is_file()


def test_synthetic_determinism():
    a, ta = generate_synthetic(seed=7)
    b, tb = generate_synthetic(seed=7)
    c, _ = generate_synthetic(seed=8)
    np.testing.assert_array_equal(a.rows, b.rows)
    np.testing.assert_array_equal(ta.theta, tb.theta)
    assert not np.array_equal(a.rows, c.rows)
    assert a.rows.shape == (270, 3) and ta.m == 27
    one, _ = generate_synthetic(SyntheticDesign(n=1), seed=0)
    assert one.rows.shape == (1, 3)


def test_synthetic_cli_with_true_support(tmp_path):
    out = tmp_path / "s"
    rc = cli.main(["--synthetic", "--support", "true", "--delta", "0.2",
                   "--no-reference", "--out", str(out)])
    assert rc == 0
    assert _report(out)["results"]["m"] == 27
    assert cli.main(["--data", "builtin:iris", "--support", "true",
                     "--out", str(tmp_path / "t")]) == 1


def test_continuous_em_cli(tmp_path):
    out = tmp_path / "c"
    rc = cli.main(["--data", "builtin:mortality", "--family", "poisson", "--algorithm", "cem",
                   "--support", "grid:0:9:1", "--out", str(out)])
    assert rc == 0
    cont = _report(out)["results"]["continuous"]
    assert -1990.1 < cont["loglik"] < -1989.8


def test_bench_table1(tmp_path, capsys):
    out = tmp_path / "bench.json"
    rc = bench.main(["--tables", "1", "--out", str(out)])
    assert rc == 0
    res = json.loads(out.read_text())
    assert res["table1"]["iris"]["loglik"] == pytest.approx(-376.9594, abs=5e-4)
    assert "iris" in capsys.readouterr().out

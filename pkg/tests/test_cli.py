"""Command-line behavior: parsing, exit codes, output formats."""

import csv
import io
import json
import logging
import subprocess
import sys

import numpy as np
import pytest

from conflasso.cli import (
    EXIT_INPUT,
    EXIT_NUMERIC,
    EXIT_OK,
    NonFiniteValueError,
    ParseError,
    Standardizer,
    ingest_csv,
    main,
    read_query_csv,
)
from conflasso.lasso import NonConvergenceError


@pytest.fixture(autouse=True)
def _fresh_logging():
    # main() calls logging.basicConfig; drop the handler it installed so the
    # next test's capture stream is picked up instead of a closed one
    root = logging.getLogger()
    saved = root.handlers[:]
    for h in saved:
        root.removeHandler(h)
    yield
    for h in root.handlers[:]:
        root.removeHandler(h)
    for h in saved:
        root.addHandler(h)


def _write(path, text):
    path.write_text(text)
    return str(path)


@pytest.fixture
def example(tmp_path):
    """The two-point dataset whose level-0.5 set over [-5, 5] is [-3, 3)."""
    data = _write(tmp_path / "train.csv", "1,1\n1,3\n")
    query = _write(tmp_path / "query.csv", "1\n")
    return data, query


def _strip_runtime(obj):
    if isinstance(obj, dict):
        return {k: _strip_runtime(v) for k, v in obj.items() if k != "runtime_ms"}
    if isinstance(obj, list):
        return [_strip_runtime(v) for v in obj]
    return obj


# ---- ingestion ----------------------------------------------------------------


def test_ingest_csv(tmp_path):
    path = _write(tmp_path / "d.csv", "1,2\n3,4\n5,6\n")
    data = ingest_csv(path)
    assert (data.n, data.p) == (3, 1)
    np.testing.assert_array_equal(data.X[:, 0], [1.0, 3.0, 5.0])
    np.testing.assert_array_equal(data.y, [2.0, 4.0, 6.0])


def test_ingest_header_and_blank_lines(tmp_path):
    path = _write(tmp_path / "d.csv", "a,b\n1,2\n\n3,4\n")
    data = ingest_csv(path, header=True)
    assert data.n == 2


def test_ingest_reports_positions(tmp_path):
    with pytest.raises(NonFiniteValueError) as exc:
        ingest_csv(_write(tmp_path / "a.csv", "1,2\n3,nan\n"))
    assert (exc.value.row, exc.value.column) == (2, 2)

    with pytest.raises(ParseError) as exc:
        ingest_csv(_write(tmp_path / "b.csv", "1,2\n3\n"))
    assert exc.value.row == 2

    with pytest.raises(ParseError) as exc:
        ingest_csv(_write(tmp_path / "c.csv", "1,fish\n"))
    assert (exc.value.row, exc.value.column, exc.value.token) == (1, 2, "fish")

    with pytest.raises(ParseError):
        ingest_csv(_write(tmp_path / "d.csv", "\n\n"))
    with pytest.raises(ParseError):
        ingest_csv(_write(tmp_path / "e.csv", "1\n2\n"))  # response only


def test_read_query_width_check(tmp_path):
    path = _write(tmp_path / "q.csv", "1,2\n")
    with pytest.raises(ParseError):
        read_query_csv(path, p=1)
    assert read_query_csv(path, p=2).shape == (1, 2)


def test_standardizer_roundtrip():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((20, 3)) * np.array([1.0, 10.0, 0.0]) + 5.0
    from conflasso.lasso import Dataset

    data = Dataset(X, rng.standard_normal(20) + 7.0)
    std = Standardizer.from_data(data)
    assert std.x_scale[2] == 1.0  # zero-variance column passes through
    scaled = std.apply(data)
    np.testing.assert_allclose(scaled.X.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(scaled.y.mean(), 0.0, atol=1e-12)
    assert std.shift_back(0.0) == pytest.approx(data.y.mean())
    np.testing.assert_allclose(std.apply_x(data.X), scaled.X)


# ---- fit ------------------------------------------------------------------------


def test_fit_json(example, tmp_path, capsys):
    data, _ = example
    assert main(["fit", "--data", data, "--lambda", "1"]) == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert (payload["n"], payload["p"]) == (2, 1)
    assert payload["beta"][0] == pytest.approx(1.5)
    assert payload["active"] == [0]
    assert payload["kkt_passed"] is True
    assert payload["standardized"] is False


def test_fit_csv(example, tmp_path):
    data, _ = example
    out = tmp_path / "fit.csv"
    assert main(["fit", "--data", data, "--lambda", "1",
                 "--format", "csv", "--out", str(out)]) == EXIT_OK
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 1
    assert float(rows[0]["beta"]) == pytest.approx(1.5)
    assert rows[0]["active"] == "1"


# ---- predict --------------------------------------------------------------------


def test_predict_worked_example(example, capsys):
    data, query = example
    code = main(["predict", "--data", data, "--query", query, "--lambda", "1",
                 "--alpha", "0.5", "--range=-5,5"])
    assert code == EXIT_OK
    records = json.loads(capsys.readouterr().out)
    assert len(records) == 1
    rec = records[0]
    assert rec["query_index"] == 0
    assert rec["prediction"] == pytest.approx(1.5)
    (lo, hi), = rec["set"]["intervals"]
    assert lo == pytest.approx(-3.0, abs=1e-9)
    assert hi == pytest.approx(3.0, abs=1e-9)
    assert rec["set"]["single_interval"] is True


def test_predict_csv_rows(example, tmp_path):
    data, query = example
    out = tmp_path / "sets.csv"
    code = main(["predict", "--data", data, "--query", query, "--lambda", "1",
                 "--alpha", "0.5", "--range=-5,5", "--format", "csv",
                 "--out", str(out)])
    assert code == EXIT_OK
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 1
    assert float(rows[0]["lo"]) == pytest.approx(-3.0, abs=1e-9)
    assert float(rows[0]["hi"]) == pytest.approx(3.0, abs=1e-9)
    assert rows[0]["query_index"] == "0"


def test_predict_grid_method(example, capsys):
    data, query = example
    code = main(["predict", "--data", data, "--query", query, "--lambda", "1",
                 "--alpha", "0.5", "--range=-5,5", "--method", "grid",
                 "--grid-step", "0.5"])
    assert code == EXIT_OK
    rec = json.loads(capsys.readouterr().out)[0]
    (lo, hi), = rec["set"]["intervals"]
    assert (lo, hi) == (-2.5, 3.0)  # grid resolves the boundary to one step


def test_predict_split_method(tmp_path, capsys):
    rng = np.random.default_rng(5)
    X = rng.standard_normal((30, 2))
    y = X @ np.array([2.0, -1.0]) + 0.2 * rng.standard_normal(30)
    rows = "\n".join(f"{a},{b},{c}" for (a, b), c in zip(X, y))
    data = _write(tmp_path / "d.csv", rows + "\n")
    query = _write(tmp_path / "q.csv", "0.3,0.4\n")
    code = main(["predict", "--data", data, "--query", query, "--lambda", "2",
                 "--alpha", "0.2", "--method", "split", "--seed", "3"])
    assert code == EXIT_OK
    rec = json.loads(capsys.readouterr().out)[0]
    assert rec["set"]["single_interval"] is True
    (lo, hi), = rec["set"]["intervals"]
    assert lo < hi


def test_predict_tiny_alpha_returns_the_whole_range(example, capsys):
    data, query = example
    code = main(["predict", "--data", data, "--query", query, "--lambda", "1",
                 "--alpha", "0.01", "--range=-5,5"])
    assert code == EXIT_OK
    rec = json.loads(capsys.readouterr().out)[0]
    assert rec["set"]["intervals"] == [[-5.0, 5.0]]


def test_predict_deterministic_output(example, tmp_path):
    data, query = example
    argv = ["predict", "--data", data, "--query", query, "--lambda", "1",
            "--alpha", "0.5", "--range=-5,5"]
    out1, out2 = tmp_path / "a.json", tmp_path / "b.json"
    assert main(argv + ["--out", str(out1)]) == EXIT_OK
    assert main(argv + ["--out", str(out2)]) == EXIT_OK
    a = _strip_runtime(json.loads(out1.read_text()))
    b = _strip_runtime(json.loads(out2.read_text()))
    assert a == b


def test_predict_threads_preserve_order(tmp_path):
    rng = np.random.default_rng(9)
    X = rng.standard_normal((25, 3))
    y = X @ np.array([1.0, 0.0, -1.0]) + 0.3 * rng.standard_normal(25)
    data = _write(tmp_path / "d.csv",
                  "\n".join(",".join(map(str, (*xr, yv))) for xr, yv in zip(X, y)) + "\n")
    query = _write(tmp_path / "q.csv",
                   "\n".join(",".join(map(str, r)) for r in rng.standard_normal((6, 3))) + "\n")
    argv = ["predict", "--data", data, "--query", query, "--lambda", "2",
            "--alpha", "0.1"]
    seq, par = tmp_path / "seq.json", tmp_path / "par.json"
    assert main(argv + ["--out", str(seq), "--threads", "1"]) == EXIT_OK
    assert main(argv + ["--out", str(par), "--threads", "3"]) == EXIT_OK
    a = _strip_runtime(json.loads(seq.read_text()))
    b = _strip_runtime(json.loads(par.read_text()))
    assert [r["query_index"] for r in b] == [0, 1, 2, 3, 4, 5]
    assert a == b


def test_threads_env_default(tmp_path, monkeypatch, example):
    data, query = example
    monkeypatch.setenv("CONFLASSO_THREADS", "2")
    out = tmp_path / "env.json"
    argv = ["predict", "--data", data, "--query", query, "--lambda", "1",
            "--alpha", "0.5", "--range=-5,5", "--out", str(out)]
    assert main(argv) == EXIT_OK
    rec = json.loads(out.read_text())[0]
    assert rec["set"]["intervals"][0][0] == pytest.approx(-3.0, abs=1e-9)


def test_predict_standardize_is_shift_equivariant(tmp_path):
    rng = np.random.default_rng(13)
    X = rng.standard_normal((30, 3))
    y = X @ np.array([1.5, 0.0, -1.0]) + 0.4 * rng.standard_normal(30)
    q = rng.standard_normal((2, 3))
    qfile = _write(tmp_path / "q.csv", "\n".join(",".join(map(str, r)) for r in q) + "\n")

    def run(shift, out):
        rows = "\n".join(
            ",".join(map(str, (*xr, yv + shift))) for xr, yv in zip(X, y)
        )
        data = _write(tmp_path / f"d{shift}.csv", rows + "\n")
        argv = ["predict", "--data", data, "--query", qfile, "--lambda", "3",
                "--alpha", "0.2", "--standardize", "--out", str(out)]
        assert main(argv) == EXIT_OK
        return json.loads(out.read_text())

    base = run(0.0, tmp_path / "s0.json")
    moved = run(100.0, tmp_path / "s100.json")
    for r0, r1 in zip(base, moved):
        assert r1["prediction"] == pytest.approx(r0["prediction"] + 100.0, abs=1e-6)
        for (lo0, hi0), (lo1, hi1) in zip(
            r0["set"]["intervals"], r1["set"]["intervals"]
        ):
            assert lo1 == pytest.approx(lo0 + 100.0, abs=1e-6)
            assert hi1 == pytest.approx(hi0 + 100.0, abs=1e-6)


# ---- homotopy dumps -------------------------------------------------------------


# the y-range [-5, 5] maps to t in [-6.5, 3.5] around the base prediction 1.5
def test_dump_path_subcommand_ndjson(example, capsys):
    data, query = example
    code = main(["dump-path", "--data", data, "--query", query,
                 "--lambda", "1", "--range=-5,5"])
    assert code == EXIT_OK
    lines = capsys.readouterr().out.strip().split("\n")
    recs = [json.loads(ln) for ln in lines]
    assert len(recs) == 3
    assert [r["change"] for r in recs] == ["clipped", "deletion", "clipped"]
    assert [r["t_start"] for r in recs] == pytest.approx([-6.5, -4.5, 0.0])
    assert all(r["query_index"] == 0 for r in recs)
    assert set(recs[0]) == {
        "query_index", "t_start", "t_end", "n_active", "change", "change_index",
    }


def test_dump_path_subcommand_csv(example, tmp_path):
    data, query = example
    out = tmp_path / "segs.csv"
    code = main(["dump-path", "--data", data, "--query", query, "--lambda", "1",
                 "--range=-5,5", "--format", "csv", "--out", str(out)])
    assert code == EXIT_OK
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 3
    assert rows[1]["change"] == "deletion"
    assert rows[1]["change_index"] == "0"
    assert rows[0]["change_index"] == ""


def test_predict_dump_path_sidecar(example, tmp_path, capsys):
    data, query = example
    side = tmp_path / "paths.ndjson"
    code = main(["predict", "--data", data, "--query", query, "--lambda", "1",
                 "--alpha", "0.5", "--range=-5,5", "--dump-path", str(side)])
    assert code == EXIT_OK
    capsys.readouterr()
    recs = [json.loads(ln) for ln in side.read_text().strip().split("\n")]
    assert [r["change"] for r in recs] == ["clipped", "deletion", "clipped"]


# ---- experiments ----------------------------------------------------------------


def test_simulate_json(tmp_path):
    out = tmp_path / "sim.json"
    code = main(["simulate", "--family", "linear-gaussian", "--n-train", "20",
                 "--n-test", "5", "--reps", "2", "--lambda", "2.0",
                 "--methods", "exact,split", "--out", str(out)])
    assert code == EXIT_OK
    d = json.loads(out.read_text())
    assert d["reps_completed"] == 2
    assert set(d["methods"]) == {"exact", "split"}
    assert 0.0 <= d["methods"]["exact"]["coverage_mean"] <= 1.0


def test_simulate_csv(tmp_path):
    out = tmp_path / "sim.csv"
    code = main(["simulate", "--family", "linear-gaussian", "--n-train", "20",
                 "--n-test", "4", "--reps", "1", "--lambda", "2.0",
                 "--methods", "split", "--format", "csv", "--out", str(out)])
    assert code == EXIT_OK
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 1 and rows[0]["method"] == "split"


def test_bench_csv(tmp_path):
    out = tmp_path / "bench.csv"
    code = main(["bench", "--n-train", "20", "--n-test", "4", "--reps", "1",
                 "--lambda", "2.0", "--methods", "exact-fast,split",
                 "--format", "csv", "--out", str(out)])
    assert code == EXIT_OK
    rows = list(csv.DictReader(open(out)))
    assert [r["method"] for r in rows] == ["exact-fast", "split"]
    assert set(rows[0]) == {
        "method", "datasets", "queries_per_dataset", "mean_seconds_per_dataset",
        "mean_ms_per_query", "segments_per_query", "fallbacks_total",
    }
    assert float(rows[0]["mean_ms_per_query"]) > 0.0


# ---- exit codes ------------------------------------------------------------------


def test_exit_2_on_bad_input(tmp_path, example, capsys):
    data, query = example
    assert main(["fit", "--data", str(tmp_path / "missing.csv"),
                 "--lambda", "1"]) == EXIT_INPUT
    bad = _write(tmp_path / "bad.csv", "1,x\n")
    assert main(["fit", "--data", bad, "--lambda", "1"]) == EXIT_INPUT
    wide = _write(tmp_path / "wide.csv", "1,2,3\n")
    assert main(["predict", "--data", data, "--query", wide,
                 "--lambda", "1"]) == EXIT_INPUT
    capsys.readouterr()


def test_exit_2_on_bad_flags(example):
    data, query = example
    with pytest.raises(SystemExit) as exc:
        main(["predict", "--data", data, "--query", query, "--lambda", "1",
              "--range", "5"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["predict", "--data", data, "--query", query, "--lambda", "-1"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main([])  # subcommand required
    assert exc.value.code == 2


def test_exit_3_on_numerical_failure(example, monkeypatch, capsys):
    data, _ = example

    def boom(*a, **kw):
        raise NonConvergenceError("synthetic")

    monkeypatch.setattr("conflasso.cli.lasso_fit", boom)
    assert main(["fit", "--data", data, "--lambda", "1"]) == EXIT_NUMERIC
    capsys.readouterr()


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "conflasso" in capsys.readouterr().out


def test_console_entry_point(example):
    data, _ = example
    proc = subprocess.run(
        [sys.executable, "-c",
         "import sys; from conflasso.cli import main; sys.exit(main(sys.argv[1:]))",
         "fit", "--data", data, "--lambda", "1"],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["beta"][0] == pytest.approx(1.5)

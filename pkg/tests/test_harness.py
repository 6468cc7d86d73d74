import warnings
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mflimit.config import ExperimentPlan, small
from mflimit.harness import (ConvergenceRow, RateFit, SweepResult, emit_report, fit_rate, regression_check,
                             run_convergence_sweep, run_row, write_csv)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(0.01, 100), slope=st.floats(-2, 1))
def test_fit_rate_recovers_power_law(a, slope):
    Ns = [1.0, 2.0, 4.0, 8.0]
    fit = fit_rate(Ns, [a * n**slope for n in Ns])
    assert fit.slope == pytest.approx(slope, abs=1e-10)
    assert fit.intercept == pytest.approx(np.log(a), abs=1e-10)
    assert fit.residual < 1e-10 and fit.used == 4


def test_fit_rate_half_power_and_constant():
    assert fit_rate([1, 2, 4], [1, 2**-0.5, 0.5]).slope == pytest.approx(-0.5, abs=1e-14)
    assert fit_rate([1, 2, 4], [3.0, 3.0, 3.0]).slope == pytest.approx(0.0, abs=1e-14)


def test_fit_rate_warns_and_refuses():
    with pytest.warns(RuntimeWarning, match="excluding 1"):
        fit = fit_rate([1, 2, 4], [1.0, 0.0, 0.25])
    assert fit.used == 2 and fit.slope == pytest.approx(-1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(ValueError, match="two positive"):
            fit_rate([1, 2], [1.0, float("nan")])


def _result():
    rows = [ConvergenceRow(1.0, 4e-3, 1e-3, 0.27, 0.17, 1.0, runtime=3.0),
            ConvergenceRow(2.0, 2.6e-3, 7e-4, 0.15, 0.097, 2.0, runtime=5.0)]
    return SweepResult(rows, {"err_trace": fit_rate([1, 2], [0.27, 0.15])})


def test_gates():
    g = _result().gates()
    assert all(g.values())
    bad = _result()
    bad.rows[1].err_X = 1.0
    assert not bad.gates()["err_X_decreasing"]
    bad.rows[0].status = "failed: boom"
    assert not bad.gates()["all_rows_ok"]


def test_emit_report_is_deterministic_apart_from_timings(tmp_path):
    rc, plan = small(), ExperimentPlan(config="small", N_list=(1.0, 2.0))
    a, b = tmp_path / "a", tmp_path / "b"
    r1 = _result()
    emit_report(a, r1, rc, plan)
    r2 = _result()
    for r in r2.rows:
        r.runtime *= 7
    emit_report(b, r2, rc, plan)
    for name in ("convergence.csv", "rates.csv", "summary.txt", "config.cfg"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert (a / "timings.csv").read_bytes() != (b / "timings.csv").read_bytes()
    assert rc.digest() in (a / "summary.txt").read_text()


def test_emit_report_without_sweep(tmp_path):
    text = emit_report(tmp_path, None, small(), ExperimentPlan(toggles=()))
    assert "gate" not in text
    assert not (tmp_path / "convergence.csv").exists()
    assert (tmp_path / "summary.txt").exists()


def test_regression_check(tmp_path):
    gold, cur = tmp_path / "gold", tmp_path / "cur"
    emit_report(gold, _result(), small(), ExperimentPlan())
    emit_report(cur, _result(), small(), ExperimentPlan())
    assert regression_check(cur, gold).passed

    r = _result()
    r.rows[0].err_X *= 1 + 1e-3
    emit_report(cur, r, small(), ExperimentPlan())
    rep = regression_check(cur, gold)
    assert not rep.passed and any("err_X" in m for m in rep.mismatches)

    write_csv(cur / "convergence.csv", ["N", "other"], [[1.0, 2.0]])
    rep = regression_check(cur, gold)
    assert any("schema" in m for m in rep.mismatches)

    (cur / "rates.csv").unlink()
    assert any("missing" in m for m in regression_check(cur, gold).mismatches)
    assert not regression_check(cur, tmp_path / "nowhere").passed


def test_failed_row_is_recorded_not_raised():
    rc = small()
    row = run_row(rc, -1.0, 0.1, 1e-3, 0.05)
    assert not row.ok and row.status.startswith("failed")
    assert np.isnan(row.err_X)


def test_small_sweep_runs_and_is_reproducible(tmp_path):
    plan = ExperimentPlan(config="small", N_list=(1.0, 2.0), T=0.05, dt=1e-3, dt_report=0.05)
    res1 = run_convergence_sweep(plan)
    res2 = run_convergence_sweep(plan)
    assert [r.ok for r in res1.rows] == [True, True]
    for a, b in zip(res1.rows, res2.rows):
        assert (a.err_X, a.err_trace, a.err_hs) == (b.err_X, b.err_trace, b.err_hs)
        assert a.trace_dominated
        assert abs(a.Nb_mean - a.N) < 1e-3 * a.N
    assert set(res1.fits) == {"err_X", "err_V", "err_trace", "err_hs"}

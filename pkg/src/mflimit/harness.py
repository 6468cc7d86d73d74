"""N-sweeps comparing the microscopic and mean-field dynamics.

Rows for different N are independent and may run in a process pool.
Wall-clock timings are written to a separate file so that the CSV payload
is byte-identical across re-runs.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentPlan, RunConfig
from .fock import FockBasis
from .meanfield import MeanFieldModel, MeanFieldState
from .meanfield import evolve as mf_evolve
from .micro import (CompositeState, MicroRecord, assemble_hamiltonian, build_initial, expectation,
                    measure_tracer, number_moments, one_particle_density, trace_distance)
from .micro import evolve as micro_evolve

log = logging.getLogger(__name__)

ROW_COLUMNS = ["N", "err_X", "err_V", "err_trace", "err_hs", "Nb_mean", "status"]


@dataclass
class ConvergenceRow:
    N: float
    err_X: float
    err_V: float
    err_trace: float
    err_hs: float
    Nb_mean: float = float("nan")
    runtime: float = 0.0
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def trace_dominated(self) -> bool:
        return self.err_trace <= 2 * self.err_hs + 1e-14


@dataclass
class RateFit:
    slope: float
    intercept: float
    residual: float
    used: int


@dataclass
class SweepResult:
    rows: list[ConvergenceRow]
    fits: dict[str, RateFit] = field(default_factory=dict)

    def gates(self) -> dict[str, bool]:
        ok = [r for r in self.rows if r.ok]
        out = {"all_rows_ok": len(ok) == len(self.rows) and len(ok) > 0}
        out["trace_le_2hs"] = all(r.trace_dominated for r in ok)
        for col in ("err_X", "err_trace"):
            vals = [getattr(r, col) for r in sorted(ok, key=lambda r: r.N)]
            out[f"{col}_decreasing"] = all(b < a for a, b in zip(vals, vals[1:]))
        fit = self.fits.get("err_trace")
        out["trace_slope_negative"] = fit is not None and fit.slope < 0
        return out


# --- paired simulation ------------------------------------------------------------

def meanfield_reference(rc: RunConfig, T: float, dt: float, record_every: int = 1) -> list[MeanFieldState]:
    model = MeanFieldModel(rc.lattice, rc.potentials, rc.symbol)
    s0 = MeanFieldState(rc.X0_array(), rc.V0_array(), rc.phi0())
    return mf_evolve(model, s0, T, dt, record_every)


def micro_run(rc: RunConfig, N: float, T: float, dt_report: float, tol: float = 1e-10):
    """Microscopic trajectory from well-prepared product data; returns (basis, H, states, report)."""
    cfg = rc.lattice
    basis = FockBasis(cfg.modes, rc.n_max)
    state, report = build_initial(cfg, basis, N, rc.X0_array(), rc.V0_array(), rc.phi0(), rc.u_width)
    H = assemble_hamiltonian(cfg, rc.potentials, basis, N)
    return basis, H, micro_evolve(H, state, T, dt_report, tol=tol), report


def record(rc: RunConfig, basis: FockBasis, H, state: CompositeState, mf: MeanFieldState) -> MicroRecord:
    cfg = rc.lattice
    mom = measure_tracer(cfg, state, mf.X, rc.tracer_p)
    nb, nvar = number_moments(basis, state)
    gamma = one_particle_density(basis, cfg, state)
    tr, hs = trace_distance(gamma, mf.phi, cfg.cell)
    return MicroRecord(state.t, mom.EX, mom.EP_over_N, mom.varX, mom.varV, nb, nvar,
                       expectation(H, state), tr, hs)


def run_row(rc: RunConfig, N: float, T: float, dt: float, dt_report: float) -> ConvergenceRow:
    """One sweep row: compare both dynamics at time T.  Failures are caught."""
    t0 = time.perf_counter()
    try:
        ref = meanfield_reference(rc, T, dt)[-1]
        basis, H, traj, _ = micro_run(rc, N, T, dt_report)
        rec = record(rc, basis, H, traj[-1], ref)
        row = ConvergenceRow(
            N=N,
            err_X=float(np.max(np.abs(rec.EX - ref.X))),
            err_V=float(np.max(np.abs(rec.EP_over_N - ref.V))),
            err_trace=rec.trace_dist,
            err_hs=rec.hs_dist,
            Nb_mean=rec.Nb_mean,
        )
    except Exception as exc:  # a failed row must not take the sweep down
        log.error("row N=%g failed: %s", N, exc)
        nan = float("nan")
        row = ConvergenceRow(N, nan, nan, nan, nan, status=f"failed: {type(exc).__name__}: {exc}")
    row.runtime = time.perf_counter() - t0
    return row


def _row_job(args):
    return run_row(*args)


def run_convergence_sweep(plan: ExperimentPlan, rc: RunConfig | None = None) -> SweepResult:
    rc = rc or plan.run_config()
    jobs = [(rc, float(N), plan.T, plan.dt, plan.dt_report) for N in plan.N_list]
    if plan.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            rows = list(pool.map(_row_job, jobs))
    else:
        rows = [_row_job(j) for j in jobs]
    rows.sort(key=lambda r: r.N)
    ok = [r for r in rows if r.ok]
    fits = {}
    for col in ("err_X", "err_V", "err_trace", "err_hs"):
        try:
            fits[col] = fit_rate([r.N for r in ok], [getattr(r, col) for r in ok])
        except ValueError as exc:
            log.warning("no rate fit for %s: %s", col, exc)
    return SweepResult(rows, fits)


def fit_rate(Ns, errs) -> RateFit:
    """Least-squares slope of log(err) against log(N)."""
    Ns = np.asarray(Ns, dtype=float)
    errs = np.asarray(errs, dtype=float)
    keep = np.isfinite(errs) & (errs > 0) & (Ns > 0)
    if not keep.all():
        warnings.warn(f"excluding {int((~keep).sum())} nonpositive or non-finite points from the rate fit",
                      RuntimeWarning, stacklevel=2)
    if keep.sum() < 2:
        raise ValueError("need at least two positive points to fit a rate")
    x, y = np.log(Ns[keep]), np.log(errs[keep])
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return RateFit(float(coef[0]), float(coef[1]), res, int(keep.sum()))


# --- reports and regression ---------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12e}"


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    Path(path).write_text(buf.getvalue())


def emit_report(out_dir: str | Path, result: SweepResult | None, rc: RunConfig, plan: ExperimentPlan,
                extra: dict[str, float] | None = None) -> str:
    """Write convergence.csv, rates.csv, timings.csv and summary.txt; return the summary text.

    Everything except timings.csv is a deterministic function of the inputs.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [
        "# mflimit convergence report",
        f"version = {__version__}",
        f"config_hash = {rc.digest()}",
        f"N_list = {' '.join(_fmt(n) for n in plan.N_list)}",
        f"T = {_fmt(plan.T)}",
        f"dt = {_fmt(plan.dt)}",
        f"dt_report = {_fmt(plan.dt_report)}",
        f"seed = {plan.seed}",
        f"toggles = {' '.join(plan.toggles)}",
        f"n_max = {rc.n_max}",
        f"composite_dim = {rc.lattice.tracer_states * math.comb(rc.n_max + rc.lattice.modes, rc.lattice.modes)}",
    ]
    if result is not None:
        rows = [[r.N, r.err_X, r.err_V, r.err_trace, r.err_hs, r.Nb_mean, r.status] for r in result.rows]
        write_csv(out / "convergence.csv", ROW_COLUMNS, rows)
        write_csv(out / "rates.csv", ["quantity", "slope", "intercept", "residual", "points"],
                  [[k, f.slope, f.intercept, f.residual, f.used] for k, f in sorted(result.fits.items())])
        write_csv(out / "timings.csv", ["N", "runtime_s"], [[r.N, r.runtime] for r in result.rows])
        for r in result.rows:
            lines.append(f"row N={_fmt(r.N)} err_X={_fmt(r.err_X)} err_trace={_fmt(r.err_trace)} status={r.status}")
        for name, ok in sorted(result.gates().items()):
            lines.append(f"gate {name} = {'pass' if ok else 'FAIL'}")
    for k, v in sorted((extra or {}).items()):
        lines.append(f"{k} = {_fmt(v)}")
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text)
    (out / "config.cfg").write_text(rc.to_text())
    return text


DEFAULT_TOLERANCES = {"N": 0.0, "err_X": 1e-6, "err_V": 1e-6, "err_trace": 1e-6, "err_hs": 1e-6,
                      "Nb_mean": 1e-8, "slope": 1e-6, "intercept": 1e-6, "residual": 1e-5, "points": 0.0}


@dataclass
class RegressionReport:
    passed: bool
    mismatches: list[str]


def _read(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def regression_check(current: str | Path, golden: str | Path,
                     tolerances: dict[str, float] | None = None) -> RegressionReport:
    """Column-wise relative comparison of every CSV in ``golden`` (timings excluded)."""
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(tolerances or {})
    cur, gold = Path(current), Path(golden)
    issues: list[str] = []
    files = sorted(p for p in gold.glob("*.csv") if p.name != "timings.csv")
    if not files:
        return RegressionReport(False, [f"no golden CSV files in {gold}"])
    for gp in files:
        cp = cur / gp.name
        if not cp.exists():
            issues.append(f"{gp.name}: missing from current outputs")
            continue
        gh, grows = _read(gp)
        ch, crows = _read(cp)
        if gh != ch:
            issues.append(f"{gp.name}: schema mismatch {ch} != {gh}")
            continue
        if len(grows) != len(crows):
            issues.append(f"{gp.name}: row count {len(crows)} != {len(grows)}")
            continue
        for i, (gr, cr) in enumerate(zip(grows, crows)):
            for col, g, c in zip(gh, gr, cr):
                try:
                    gv, cv = float(g), float(c)
                except ValueError:
                    if g != c:
                        issues.append(f"{gp.name}: row {i} column {col}: {c!r} != {g!r}")
                    continue
                if math.isnan(gv) and math.isnan(cv):
                    continue
                t = tol.get(col, 1e-8)
                if cv != gv and abs(cv - gv) > t * abs(gv):
                    issues.append(f"{gp.name}: row {i} column {col}: {cv!r} vs golden {gv!r} (rtol {t:g})")
    return RegressionReport(not issues, issues)

"""Command-line entry point: ``mflimit <command> ...``.

``--config`` accepts either a key=value file or a preset name
(standard, standard_meanfield, tiny).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import PRESETS, RunConfig, load_config, load_plan
from .fock import FockBasis
from .harness import (emit_report, meanfield_reference, micro_run, record, regression_check,
                      run_convergence_sweep, write_csv)
from .meanfield import MeanFieldModel, MeanFieldState, energy, mass
from .meanfield import evolve as mf_evolve
from .micro import composite_dim, memory_estimate

log = logging.getLogger("mflimit")


def _config(name: str) -> RunConfig:
    if name in PRESETS:
        return PRESETS[name]()
    return load_config(name)


def _steps_per_report(dt: float, dt_report: float) -> int:
    k = int(round(dt_report / dt))
    if k < 1 or not np.isclose(k * dt, dt_report, rtol=1e-9):
        raise SystemExit("dt_report must be a multiple of dt")
    return k


def cmd_meanfield(args) -> int:
    rc = _config(args.config)
    model = MeanFieldModel(rc.lattice, rc.potentials, rc.symbol)
    s0 = MeanFieldState(rc.X0_array(), rc.V0_array(), rc.phi0())
    every = _steps_per_report(args.dt, args.dt_report) if args.dt_report else 1
    traj = mf_evolve(model, s0, args.T, args.dt, every)
    dof = rc.lattice.tracer_dof
    header = (["t"] + [f"X{i}" for i in range(dof)] + [f"V{i}" for i in range(dof)]
              + ["mass", "E_total", "E_kin_tracer", "E_h1", "E_pair", "E_coupling"])
    rows = []
    for s in traj:
        e = energy(model, s)
        rows.append([s.t, *s.X.ravel(), *s.V.ravel(), mass(model, s.phi), e.total,
                     e.kinetic_tracer, e.h1_boson, e.pair, e.coupling])
    write_csv(Path(args.out), header, rows)
    return 0


def cmd_micro(args) -> int:
    rc = _config(args.config)
    N = args.N if args.N is not None else rc.N
    cfg = rc.lattice
    if args.dry_run:
        basis = FockBasis(cfg.modes, rc.n_max)
        est = memory_estimate(cfg, basis)
        print(f"tracer states  {cfg.tracer_states}")
        print(f"fock dimension {basis.dim} (modes={cfg.modes}, n_max={rc.n_max})")
        print(f"composite dim  {composite_dim(cfg, basis)}")
        print(f"state vector   {est['state_bytes'] / 1e6:.1f} MB")
        print(f"hamiltonian    ~{est['hamiltonian_bytes'] / 1e6:.1f} MB")
        return 0
    every = _steps_per_report(args.dt, args.dt_report)
    mf = meanfield_reference(rc, args.T, args.dt, every)
    basis, H, traj, _ = micro_run(rc, N, args.T, args.dt_report)
    dof = cfg.tracer_dof
    header = (["t"] + [f"EX{i}" for i in range(dof)] + [f"EP_over_N{i}" for i in range(dof)]
              + ["varX", "varV", "Nb_mean", "Nb_var", "energy", "trace_dist", "hs_dist"])
    rows = []
    for st, ref in zip(traj, mf):
        r = record(rc, basis, H, st, ref)
        rows.append([r.t, *r.EX.ravel(), *r.EP_over_N.ravel(), float(np.sum(r.varX)), float(np.sum(r.varV)),
                     r.Nb_mean, r.Nb_var, r.energy, r.trace_dist, r.hs_dist])
    write_csv(Path(args.out), header, rows)
    return 0


def cmd_fluctuation(args) -> int:
    from .fluctuation import (assemble_generator, cutoff_tail, evolve_truncated, fluctuation_state,
                              gronwall_snapshot, scalar_phase)

    rc = _config(args.config)
    N = args.N if args.N is not None else rc.N
    cfg = rc.lattice
    model = MeanFieldModel(cfg, rc.potentials, rc.symbol)
    every = _steps_per_report(args.dt, args.dt_report)
    fine = meanfield_reference(rc, args.T, args.dt)
    coarse = fine[::every]
    basis, H, traj, _ = micro_run(rc, N, args.T, args.dt_report)
    header = ["t", "Nb_mean", "Nb_sqrt_mom", "Nb_3half_mom", "g_total", "g_dx1", "g_dx3",
              "g_dv1", "g_dv3", "tail_norm_M"]

    def row(omega, mf):
        g = gronwall_snapshot(cfg, basis, omega, mf)
        parts = assemble_generator(model, basis, mf, N)
        p = g.parts
        w = np.sum(np.abs(omega.amplitudes) ** 2, axis=0)
        return [mf.t, float(w @ basis.totals), g.nb_moments["half"], g.nb_moments["three_half"], g.g_total,
                p["g_dx1"], p["g_dx3"], p["g_dv1"], p["g_dv3"],
                cutoff_tail(parts, basis, cfg.tracer_states, args.M, omega)]

    rows = []
    for k, (st, mf) in enumerate(zip(traj, coarse)):
        S = scalar_phase(model, fine, mf.t, N)
        rows.append(row(fluctuation_state(basis, cfg, st, mf, S), mf))
    write_csv(Path(args.out), header, rows)
    if args.truncated:
        omega0 = fluctuation_state(basis, cfg, traj[0], coarse[0], 0.0)
        states, mfs = evolve_truncated(model, basis, N, args.M, omega0, coarse[0], args.T, args.dt_report)
        out = Path(args.out)
        write_csv(out.with_name(out.stem + "_truncated" + out.suffix), header,
                  [row(s, m) for s, m in zip(states, mfs)])
    return 0


def cmd_verify_generator(args) -> int:
    from .fluctuation import verify_generator_identity

    rc = _config(args.config)
    N = args.N if args.N is not None else rc.N
    model = MeanFieldModel(rc.lattice, rc.potentials, rc.symbol)
    s0 = MeanFieldState(rc.X0_array(), rc.V0_array(), rc.phi0())
    mf = mf_evolve(model, s0, args.t, args.dt)[-1] if args.t > 0 else s0
    basis = FockBasis(rc.lattice.modes, rc.n_max)
    res = verify_generator_identity(model, basis, N, mf, args.delta, probes=args.probes,
                                    interior=args.interior, seed=args.seed)
    for k, v in res.residuals.items():
        print(f"residual[{k}] = {v:.6e}")
    print(f"adopted convention: {res.adopted}")
    return 0 if res.residual < args.threshold else 1


def cmd_converge(args) -> int:
    plan_path = Path(args.plan)
    plan = load_plan(plan_path)
    if args.workers:
        plan = replace(plan, workers=args.workers)
    rc = plan.run_config(plan_path.parent)
    result = run_convergence_sweep(plan, rc) if "convergence" in plan.toggles else None
    text = emit_report(args.out, result, rc, plan)
    print(text, end="")
    if result is None:
        return 0
    return 0 if all(result.gates().values()) else 1


def cmd_regress(args) -> int:
    rep = regression_check(args.out, args.golden)
    for m in rep.mismatches:
        print(m)
    print("regression: " + ("pass" if rep.passed else "FAIL"))
    return 0 if rep.passed else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mflimit", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("meanfield", help="integrate the Newton-Hartree system")
    s.add_argument("--config", required=True)
    s.add_argument("--T", type=float, required=True)
    s.add_argument("--dt", type=float, required=True)
    s.add_argument("--dt-report", type=float, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_meanfield)

    s = sub.add_parser("micro", help="evolve the truncated microscopic dynamics")
    s.add_argument("--config", required=True)
    s.add_argument("--N", type=float, default=None)
    s.add_argument("--T", type=float, default=0.5)
    s.add_argument("--dt", type=float, default=1e-3, help="mean-field reference step")
    s.add_argument("--dt-report", type=float, default=0.05)
    s.add_argument("--out", default="micro.csv")
    s.add_argument("--dry-run", action="store_true", help="print dimensions and memory estimate only")
    s.set_defaults(func=cmd_micro)

    s = sub.add_parser("fluctuation", help="fluctuation-state diagnostics")
    s.add_argument("--config", required=True)
    s.add_argument("--N", type=float, default=None)
    s.add_argument("--M", type=int, required=True)
    s.add_argument("--T", type=float, required=True)
    s.add_argument("--dt", type=float, default=1e-3)
    s.add_argument("--dt-report", type=float, default=0.05)
    s.add_argument("--out", required=True)
    s.add_argument("--truncated", action="store_true", help="also run the cut-off flow")
    s.set_defaults(func=cmd_fluctuation)

    s = sub.add_parser("verify-generator", help="check the explicit generator against its defining identity")
    s.add_argument("--config", required=True)
    s.add_argument("--N", type=float, default=None)
    s.add_argument("--t", type=float, default=0.0)
    s.add_argument("--dt", type=float, default=1e-3)
    s.add_argument("--delta", type=float, default=1e-4)
    s.add_argument("--probes", type=int, default=4)
    s.add_argument("--interior", type=int, default=2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threshold", type=float, default=1e-4)
    s.set_defaults(func=cmd_verify_generator)

    s = sub.add_parser("converge", help="run an N-sweep plan")
    s.add_argument("--plan", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=0)
    s.set_defaults(func=cmd_converge)

    s = sub.add_parser("regress", help="compare outputs with a golden directory")
    s.add_argument("--out", required=True)
    s.add_argument("--golden", required=True)
    s.set_defaults(func=cmd_regress)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""Coupled Newton-Hartree dynamics for tracer positions and a condensate field.

    X'' = -int grad_X w(x, X) |phi|^2 dx
    i phi' = -Lap phi + w(x, X) phi + (v * |phi|^2) phi

Time stepping is a palindromic splitting: tracer half-kick, half-drift, a
full boson substep (kinetic / potential / kinetic), then the mirrored
tracer half-steps.  Every boson substep is a unitary multiplier, so the
discrete L2 norm is conserved to roundoff.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .lattice import LatticeConfig, Symbol, apply_kinetic, gradient_norm_sq, kinetic_symbol, spectral_kinetic_phase
from .potentials import PotentialSpec, eval_w_total, grad_X_w_total, hartree_convolution

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MeanFieldModel:
    cfg: LatticeConfig
    spec: PotentialSpec
    symbol: Symbol = "fd"


@dataclass(frozen=True)
class MeanFieldState:
    X: np.ndarray
    V: np.ndarray
    phi: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        V = np.reshape(np.asarray(self.V, dtype=float), X.shape)
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(V))):
            raise ValueError("tracer positions and velocities must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=complex))


@dataclass(frozen=True)
class EnergyBreakdown:
    kinetic_tracer: float
    h1_boson: float
    pair: float
    coupling: float

    @property
    def total(self) -> float:
        return self.kinetic_tracer + self.h1_boson + self.pair + self.coupling


def mass(model: MeanFieldModel, phi) -> float:
    return float(model.cfg.cell * np.sum(np.abs(phi) ** 2))


def h1_norm_sq(model: MeanFieldModel, phi) -> float:
    return mass(model, phi) + gradient_norm_sq(model.cfg, phi, model.symbol)


def coupling_field(model: MeanFieldModel, X) -> np.ndarray:
    return eval_w_total(model.spec, model.cfg, model.cfg.points(), X)


def energy(model: MeanFieldModel, state: MeanFieldState) -> EnergyBreakdown:
    cfg = model.cfg
    rho = np.abs(state.phi) ** 2
    pair = 0.5 * cfg.cell * float(np.sum(hartree_convolution(model.spec, cfg, rho) * rho))
    coupling = cfg.cell * float(np.sum(coupling_field(model, state.X) * rho))
    return EnergyBreakdown(
        kinetic_tracer=0.5 * float(np.sum(state.V**2)),
        h1_boson=h1_norm_sq(model, state.phi),
        pair=pair,
        coupling=coupling,
    )


def force(model: MeanFieldModel, X, phi) -> np.ndarray:
    """-int grad_X w(x, X) |phi|^2 dx, one row per tracer."""
    if model.spec.w_is_zero:
        return np.zeros_like(np.atleast_2d(X))
    g = grad_X_w_total(model.spec, model.cfg, model.cfg.points(), X)
    return -model.cfg.cell * np.einsum("k,kmd->md", np.abs(phi) ** 2, g)


def step_strang(model: MeanFieldModel, state: MeanFieldState, dt: float) -> MeanFieldState:
    """One symmetric splitting step; negative ``dt`` steps backwards."""
    cfg = model.cfg
    half = 0.5 * dt
    V = state.V + half * force(model, state.X, state.phi)
    X = state.X + half * V
    kin = spectral_kinetic_phase(cfg, half, model.symbol)
    phi = apply_kinetic(cfg, state.phi, kin)
    pot = coupling_field(model, X) + hartree_convolution(model.spec, cfg, np.abs(phi) ** 2)
    phi = apply_kinetic(cfg, np.exp(-1j * dt * pot) * phi, kin)
    X = X + half * V
    V = V + half * force(model, X, phi)
    return MeanFieldState(X, V, phi, state.t + dt)


def evolve(model: MeanFieldModel, state: MeanFieldState, T: float, dt: float,
           record_every: int = 1) -> list[MeanFieldState]:
    """Strang trajectory on [t0, t0 + T]; the first entry is ``state``."""
    nsteps = int(round(T / dt))
    if nsteps < 0 or not np.isclose(nsteps * dt, T, rtol=1e-9, atol=1e-12):
        raise ValueError(f"T={T} is not a multiple of dt={dt}")
    traj = [state]
    cur = state
    for n in range(1, nsteps + 1):
        cur = step_strang(model, cur, dt)
        cur = replace(cur, t=state.t + n * dt)
        if n % record_every == 0 or n == nsteps:
            traj.append(cur)
    return traj


# --- conservation ----------------------------------------------------------

@dataclass
class ConservationReport:
    mass_drift: float
    energy_drift: float
    mu: float
    bound_violations: int


def fit_mu(model: MeanFieldModel, state: MeanFieldState, safety: float = 2.0) -> float:
    """Constant of the energy lower bound, fitted at the given state."""
    e = energy(model, state).total
    m = mass(model, state.phi)
    rhs = e + m + m**3
    lhs = float(np.sum(state.V**2)) + h1_norm_sq(model, state.phi)
    if rhs <= 0:
        raise ValueError("energy bound right-hand side is not positive; cannot fit mu")
    return safety * lhs / rhs


def conservation_report(model: MeanFieldModel, traj: list[MeanFieldState]) -> ConservationReport:
    m0 = mass(model, traj[0].phi)
    e0 = energy(model, traj[0]).total
    mu = fit_mu(model, traj[0])
    mass_drift = energy_drift = 0.0
    violations = 0
    for s in traj:
        m = mass(model, s.phi)
        e = energy(model, s).total
        mass_drift = max(mass_drift, abs(np.sqrt(m) - np.sqrt(m0)) / np.sqrt(m0) if m0 > 0 else 0.0)
        energy_drift = max(energy_drift, abs(e - e0) / (1 + abs(e0)))
        lhs = float(np.sum(s.V**2)) + h1_norm_sq(model, s.phi)
        if lhs > mu * (e + m + m**3):
            violations += 1
    return ConservationReport(mass_drift, energy_drift, mu, violations)


# --- Picard fixed-point oracle ---------------------------------------------

class PicardNotContracting(RuntimeError):
    pass


@dataclass
class PicardResult:
    times: np.ndarray
    X: np.ndarray
    V: np.ndarray
    phi: np.ndarray
    distances: list[float] = field(default_factory=list)
    horizon: float = np.inf

    def state(self, n: int = -1) -> MeanFieldState:
        return MeanFieldState(self.X[n], self.V[n], self.phi[n], float(self.times[n]))


def _cumtrapz(y: np.ndarray, tau: float) -> np.ndarray:
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * tau * (y[1:] + y[:-1]), axis=0)
    return out


def contraction_horizon(model: MeanFieldModel, state: MeanFieldState, n_probe: int = 2000) -> float:
    """Rough contraction time (1 + M^2)^-1 / (4 C) from sampled kernel norms.

    The constants are not constructive; this only flags obviously long
    horizons.  Divergence of the iteration is the authoritative check.
    """
    cfg = model.cfg
    from .potentials import v_row, w_and_grad

    xs = np.linspace(0, cfg.length, n_probe, endpoint=False)[:, None] * np.ones(cfg.dim)
    w, g = w_and_grad(model.spec, cfg, xs)
    w_c1 = cfg.tracer_count * (np.max(np.abs(w)) + np.max(np.abs(g)))
    v_sup = np.max(np.abs(v_row(model.spec, cfg))) if not model.spec.v_is_zero else 0.0
    M2 = fit_mu(model, state, safety=1.0) * (energy(model, state).total + mass(model, state.phi) + mass(model, state.phi) ** 3)
    C = 3.0 * (v_sup + 2 * w_c1) + 1e-12
    return 1.0 / (4 * C * (1 + M2))


def picard_solve(model: MeanFieldModel, initial: MeanFieldState, T: float, iterations: int,
                 tau: float = 1e-4, tol: float = 1e-13) -> PicardResult:
    """Iterate the mild-form map on a uniform time grid with trapezoidal quadrature.

    Iteration 0 is the constant anchor trajectory (X0, V0, phi0).
    """
    cfg = model.cfg
    nt = int(round(T / tau))
    if nt < 1:
        raise ValueError("T must cover at least one quadrature step")
    tau = T / nt
    times = initial.t + tau * np.arange(nt + 1)
    rel = times - initial.t
    shape = (cfg.sites,) * cfg.dim
    omega = kinetic_symbol(cfg, model.symbol).ravel()
    fwd = np.exp(1j * rel[:, None] * omega[None, :])  # e^{+i s A}

    X = np.repeat(initial.X[None], nt + 1, axis=0)
    V = np.repeat(initial.V[None], nt + 1, axis=0)
    phi = np.repeat(initial.phi[None], nt + 1, axis=0)
    phi0_hat = np.fft.fftn(initial.phi.reshape(shape)).ravel()

    horizon = contraction_horizon(model, initial)
    if T > horizon:
        log.warning("Picard horizon T=%g exceeds estimated contraction time %.3g", T, horizon)

    dists: list[float] = []
    for it in range(iterations):
        F = np.stack([force(model, X[n], phi[n]) for n in range(nt + 1)])
        G = np.stack([
            (coupling_field(model, X[n]) + hartree_convolution(model.spec, cfg, np.abs(phi[n]) ** 2)) * phi[n]
            for n in range(nt + 1)
        ])
        G_hat = np.fft.fftn(G.reshape((nt + 1,) + shape), axes=tuple(range(1, cfg.dim + 1))).reshape(nt + 1, -1)
        duhamel = _cumtrapz(fwd * G_hat, tau)
        new_hat = np.conj(fwd) * (phi0_hat[None, :] - 1j * duhamel)
        new_phi = np.fft.ifftn(new_hat.reshape((nt + 1,) + shape), axes=tuple(range(1, cfg.dim + 1))).reshape(nt + 1, -1)
        new_V = initial.V[None] + _cumtrapz(F, tau)
        new_X = initial.X[None] + _cumtrapz(V, tau)

        dphi = new_phi - phi
        d_field = max(np.sqrt(h1_norm_sq(model, dphi[n])) for n in range(nt + 1))
        d = float(np.max(np.abs(new_X - X)) + np.max(np.abs(new_V - V)) + d_field)
        dists.append(d)
        X, V, phi = new_X, new_V, new_phi
        if len(dists) >= 3 and d > dists[-2] > dists[-3] and d > tol:
            raise PicardNotContracting(
                f"iterate distance grew {dists[-3]:.3e} -> {dists[-2]:.3e} -> {d:.3e}; horizon T={T} too long")
    return PicardResult(times, X, V, phi, dists, horizon)


def h1_distance(model: MeanFieldModel, a, b) -> float:
    return float(np.sqrt(h1_norm_sq(model, np.asarray(a) - np.asarray(b))))

"""Fluctuation states around the mean-field solution and their generator.

The fluctuation state is Omega_t = e^{-iS(t)} W*(sqrt(N) phi_t) Psi_t.  Its
generator is defined by the identity

    L(t) = W_t* H W_t + i (d/dt W_t*) W_t + dS/dt,

which follows from differentiating e^{-iS} W_t* e^{-itH} directly.  The
explicit normal-ordered expansion of L(t) is built term by term and
checked against that identity numerically (``verify_generator_identity``).

Two explicit conventions are shipped:

``adjudicated``
    number-conserving tracer term  int w(x, X) (N |phi_t|^2 + a*_x a_x),
    the form that reproduces the identity.
``literal``
    the literal  int (w(x, X) - w(x, X_t)) (N |phi_t|^2 - a*_x a_x).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fock import DENSE_EXPM_LIMIT, FockBasis, displace, tail_ok
from .lattice import LatticeConfig
from .meanfield import MeanFieldModel, MeanFieldState, energy, step_strang
from .micro import (CompositeState, _tracer_grid_disp, assemble_hamiltonian, boson_kinetic,
                    momentum_probabilities, quartic_diagonal, tracer_kinetic)
from .potentials import eval_w_total, hartree_convolution, v_matrix, w_on_tracer_grid

log = logging.getLogger(__name__)

CONVENTIONS = ("adjudicated", "literal")


# --- scalar phase ------------------------------------------------------------

def phase_density(model: MeanFieldModel, state: MeanFieldState) -> float:
    """int (w(x, X_s) |phi_s|^2 + 1/2 (v * |phi_s|^2) |phi_s|^2) dx."""
    e = energy(model, state)
    return e.coupling + e.pair


def scalar_phase(model: MeanFieldModel, traj: list[MeanFieldState], t: float, N: float) -> float:
    """S(t) by trapezoidal quadrature over the stored trajectory."""
    times = np.array([s.t for s in traj])
    if len(times) == 0 or np.any(np.diff(times) <= 0):
        raise ValueError("trajectory must be non-empty with increasing times")
    if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
        raise ValueError(f"t={t} outside stored trajectory [{times[0]}, {times[-1]}]")
    stop = int(np.argmin(np.abs(times - t)))
    if abs(times[stop] - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"t={t} is not a stored time (trajectory gap)")
    f = np.array([phase_density(model, s) for s in traj[: stop + 1]])
    if stop == 0:
        return 0.0
    return float(N * np.sum(0.5 * np.diff(times[: stop + 1]) * (f[1:] + f[:-1])))


# --- fluctuation state -------------------------------------------------------

def fluctuation_state(basis: FockBasis, cfg: LatticeConfig, psi: CompositeState,
                      mf: MeanFieldState, S: float) -> CompositeState:
    """e^{-iS} W*(sqrt(N) phi_t) applied to the Fock factor of psi."""
    N = psi.N
    nsq = float(cfg.cell * np.sum(np.abs(mf.phi) ** 2))
    if not tail_ok(N, nsq, basis.n_max):
        raise ValueError(f"n_max={basis.n_max} too small for coherent mean {N * nsq:.3g}")
    out = displace(basis, np.sqrt(N) * mf.phi, cfg.cell, psi.amplitudes.T, adjoint=True).T
    return CompositeState(np.exp(-1j * S) * out, N, psi.t)


# --- explicit generator --------------------------------------------------------

@dataclass
class GeneratorParts:
    kinetic: sp.csr_matrix
    diag: sp.csr_matrix
    offdiag: sp.csr_matrix
    quartic: sp.csr_matrix
    t: float
    convention: str = "adjudicated"

    @property
    def interaction(self) -> sp.csr_matrix:
        return (self.diag + self.offdiag).tocsr()

    def total(self) -> sp.csr_matrix:
        return (self.kinetic + self.diag + self.offdiag + self.quartic).tocsr()

    def hermiticity_defects(self) -> dict[str, float]:
        out = {}
        for name in ("kinetic", "diag", "offdiag", "quartic"):
            A = getattr(self, name)
            D = A - A.conj().T
            out[name] = float(np.max(np.abs(D.data), initial=0.0))
        return out


def _fock_pairing(basis: FockBasis, vm: np.ndarray, phi: np.ndarray, cell: float) -> sp.csr_matrix:
    """(h/2) sum_jk v_jk (phi_j phi_k a*_j a*_k + h.c.)."""
    out = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    for j in range(basis.modes):
        cj = basis.ladder(j, "create")
        for k in range(basis.modes):
            c = vm[j, k] * phi[j] * phi[k]
            if c == 0:
                continue
            term = 0.5 * cell * c * (cj @ basis.ladder(k, "create"))
            out = out + term + term.conj().T
    return out.tocsr()


def _fock_cubic(basis: FockBasis, vm: np.ndarray, phi: np.ndarray, cell: float, N: float) -> sp.csr_matrix:
    """sqrt(h/N) sum_jk v_jk a*_j (phi_k a*_k + conj(phi_k) a_k) a_j."""
    out = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    pref = np.sqrt(cell / N)
    for j in range(basis.modes):
        aj = basis.ladder(j)
        cj = basis.ladder(j, "create")
        for k in range(basis.modes):
            if vm[j, k] == 0 or phi[k] == 0:
                continue
            mid = phi[k] * basis.ladder(k, "create") + np.conj(phi[k]) * basis.ladder(k)
            out = out + pref * vm[j, k] * (cj @ mid @ aj)
    return out.tocsr()


def assemble_generator(model: MeanFieldModel, basis: FockBasis, mf: MeanFieldState, N: float,
                       convention: str = "adjudicated") -> GeneratorParts:
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}")
    cfg, spec = model.cfg, model.spec
    phi = np.asarray(mf.phi, dtype=complex)
    nX, dF = cfg.tracer_states, basis.dim
    h = cfg.cell
    IX = sp.identity(nX, format="csr")
    IF = sp.identity(dF, format="csr")
    occ = basis.states.astype(float)

    kinetic = sp.kron(tracer_kinetic(cfg, N), IF) + sp.kron(IX, boson_kinetic(cfg, basis))

    w_grid = w_on_tracer_grid(spec, cfg)                        # w(x_k, X) on the tracer lattice
    w_t = eval_w_total(spec, cfg, cfg.points(), mf.X)           # w(x_k, X_t)
    dw = w_grid - w_t[None, :]
    rho = np.abs(phi) ** 2
    if convention == "adjudicated":
        scalar = N * h * (w_grid @ rho)
        number = w_grid @ occ.T
    else:
        scalar = N * h * (dw @ rho)
        number = -(dw @ occ.T)
    diag_vals = scalar[:, None] + number
    hart = hartree_convolution(spec, cfg, rho)
    vm = v_matrix(spec, cfg)
    exchange = basis.hopping(h * vm * np.outer(phi, phi.conj()))
    fock_diag = sp.diags(occ @ hart) + exchange
    diag = sp.diags(diag_vals.ravel()) + sp.kron(IX, fock_diag)

    lin = sp.csr_matrix((nX * dF, nX * dF), dtype=complex)
    if not spec.w_is_zero:
        s = np.sqrt(N * h)
        for k in range(basis.modes):
            if phi[k] == 0 or not np.any(dw[:, k]):
                continue
            fk = s * (np.conj(phi[k]) * basis.ladder(k) + phi[k] * basis.ladder(k, "create"))
            lin = lin + sp.kron(sp.diags(dw[:, k]), fk)
    if spec.v_is_zero:
        fock_off = sp.csr_matrix((dF, dF), dtype=complex)
    else:
        fock_off = _fock_pairing(basis, vm, phi, h) + _fock_cubic(basis, vm, phi, h, N)
    offdiag = lin + sp.kron(IX, fock_off)

    quartic = sp.kron(IX, sp.diags(quartic_diagonal(spec, cfg, basis, N)))
    return GeneratorParts(kinetic.tocsr(), diag.tocsr(), offdiag.tocsr(), quartic.tocsr(), mf.t, convention)


def truncated_generator(parts: GeneratorParts, basis: FockBasis, nX: int, M: int) -> tuple[sp.csr_matrix, float]:
    """kinetic + chi(N_b <= M) I(t) + quartic, and its Hermiticity defect."""
    chi = sp.kron(sp.identity(nX), basis.number_cutoff(M), format="csr")
    L = (parts.kinetic + chi @ parts.interaction + parts.quartic).tocsr()
    D = L - L.conj().T
    return L, float(np.max(np.abs(D.data), initial=0.0))


def cutoff_tail(parts: GeneratorParts, basis: FockBasis, nX: int, M: int, omega: CompositeState) -> float:
    """||chi(N_b > M) I(t) Omega||."""
    y = (parts.interaction @ omega.vector).reshape(nX, basis.dim)
    return float(np.linalg.norm(y[:, basis.totals > M]))


def commutator_with_number(op: sp.csr_matrix, basis: FockBasis, nX: int) -> float:
    """max |[op, 1 x N_b]| entry."""
    Nb = sp.kron(sp.identity(nX), basis.number_operator(), format="csr")
    C = op @ Nb - Nb @ op
    return float(np.max(np.abs(C.data), initial=0.0)) if C.nnz else 0.0


# --- identity check --------------------------------------------------------------

@dataclass
class IdentityResult:
    delta: float
    residuals: dict[str, float]
    adopted: str
    probes: int
    notes: list[str] = field(default_factory=list)

    @property
    def residual(self) -> float:
        return self.residuals[self.adopted]


def _interior_probes(basis: FockBasis, nX: int, upto: int, count: int, seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    mask = basis.interior(upto)
    out = []
    for _ in range(count):
        v = np.zeros((nX, basis.dim), dtype=complex)
        v[:, mask] = rng.normal(size=(nX, mask.sum())) + 1j * rng.normal(size=(nX, mask.sum()))
        out.append((v / np.linalg.norm(v)).ravel())
    return out


def _displacer(basis: FockBasis, f, cell: float):
    """Return (W, W*) actions on arrays whose first axis is the Fock index."""
    G = basis.field_generator(f, cell)
    if basis.dim <= DENSE_EXPM_LIMIT:
        W = sla.expm(G.toarray())
        Wd = W.conj().T
        return (lambda y: W @ y), (lambda y: Wd @ y)
    Gc = G.tocsc()
    return (lambda y: spla.expm_multiply(Gc, y)), (lambda y: spla.expm_multiply(-Gc, y))


def identity_side(model: MeanFieldModel, basis: FockBasis, N: float, mf: MeanFieldState, delta: float):
    """Return Phi -> (W*HW + i dW*/dt W) Phi and the phase rate dS/dt.

    dW*/dt and dS/dt come from central differences over one Strang step of
    +/- delta; the phase rate uses the trapezoidal rule over [t-delta, t+delta].
    The full identity side is apply(Phi) + dS/dt * Phi.
    """
    cfg = model.cfg
    H = assemble_hamiltonian(cfg, model.spec, basis, N)
    plus = step_strang(model, mf, delta)
    minus = step_strang(model, mf, -delta)
    h = cfg.cell
    W, Wd = _displacer(basis, np.sqrt(N) * mf.phi, h)
    _, Wd_p = _displacer(basis, np.sqrt(N) * plus.phi, h)
    _, Wd_m = _displacer(basis, np.sqrt(N) * minus.phi, h)
    rate = N * (phase_density(model, minus) + 2 * phase_density(model, mf) + phase_density(model, plus)) / 4
    nX = cfg.tracer_states

    def apply(vec):
        Y = vec.reshape(nX, basis.dim).T                      # Fock index first
        WY = W(Y)
        Z = (H @ WY.T.ravel()).reshape(nX, basis.dim).T
        dW = (Wd_p(WY) - Wd_m(WY)) / (2 * delta)
        return (Wd(Z) + 1j * dW).T.ravel()

    return apply, rate


def verify_generator_identity(model: MeanFieldModel, basis: FockBasis, N: float, mf: MeanFieldState,
                              delta: float, probes: int = 4, interior: int = 2, seed: int = 0) -> IdentityResult:
    """max over interior probes of ||(L_explicit - L_identity) Phi|| / ||Phi||.

    Both explicit conventions are compared with the identity using the
    phase term +dS/dt (from d/dt e^{-iS} = -i dS/dt e^{-iS}); the literal
    display is also tried with -dS/dt.  The adopted convention is the one
    with the smaller residual.
    """
    if interior > basis.n_max - 3:
        raise ValueError("probes must lie in the interior chi(N_b <= n_max - 3)")
    nX = model.cfg.tracer_states
    vecs = _interior_probes(basis, nX, interior, probes, seed)
    core, rate = identity_side(model, basis, N, mf, delta)
    explicit = {c: assemble_generator(model, basis, mf, N, c).total() for c in CONVENTIONS}
    res = {"adjudicated": 0.0, "literal": 0.0, "literal_negative_phase": 0.0}
    for v in vecs:
        c = core(v)
        res["adjudicated"] = max(res["adjudicated"], float(np.linalg.norm(explicit["adjudicated"] @ v - c - rate * v)))
        res["literal"] = max(res["literal"], float(np.linalg.norm(explicit["literal"] @ v - c - rate * v)))
        res["literal_negative_phase"] = max(res["literal_negative_phase"],
                                          float(np.linalg.norm(explicit["literal"] @ v - c + rate * v)))
    adopted = min(CONVENTIONS, key=lambda c: res[c])
    notes = [f"adopted '{adopted}' convention (residuals: "
             + ", ".join(f"{k}={v:.3e}" for k, v in res.items()) + ")"]
    log.info(notes[0])
    return IdentityResult(delta, res, adopted, probes, notes)


# --- Gronwall functional -----------------------------------------------------------

@dataclass
class GronwallSnapshot:
    t: float
    N: float
    dx_moments: dict[int, np.ndarray]
    dv_moments: dict[int, np.ndarray]
    nb_moments: dict[str, float]

    @property
    def parts(self) -> dict[str, float]:
        N = self.N
        return {
            "g_dx3": float(np.sum(self.dx_moments[3])),
            "g_dv3": float(np.sum(self.dv_moments[3])),
            "g_dx1": float(np.sum(self.dx_moments[1])) / N**2,
            "g_dv1": float(np.sum(self.dv_moments[1])) / N**2,
            "g_nb": (self.nb_moments["three_half"] + self.nb_moments["half"]) / N**3,
        }

    @property
    def g_total(self) -> float:
        return float(sum(self.parts.values()))


def gronwall_snapshot(cfg: LatticeConfig, basis: FockBasis, state: CompositeState,
                      mf: MeanFieldState) -> GronwallSnapshot:
    """All weighted moment blocks of the particle-production functional.

    dx_moments[p][c] = ||(X_c - X_t,c)^p Phi||^2 and similarly for
    N^{-1} P - V_t, per tracer coordinate c; nb_moments are
    ||(N_b+1)^{1/2} Phi||^2 and ||(N_b+1)^{3/2} Phi||^2.
    """
    amps = state.amplitudes / np.linalg.norm(state.amplitudes)
    N = state.N
    Xt = np.ravel(mf.X)
    Vt = np.ravel(mf.V)
    disp = _tracer_grid_disp(cfg, Xt)
    w_tr = np.sum(np.abs(amps) ** 2, axis=1)
    dx = {p: np.array([w_tr @ disp[:, c] ** (2 * p) for c in range(cfg.tracer_dof)]) for p in (1, 3)}
    dv = {1: np.zeros(cfg.tracer_dof), 3: np.zeros(cfg.tracer_dof)}
    for c in range(cfg.tracer_dof):
        k, pk = momentum_probabilities(cfg, amps, c)
        q = k / N - Vt[c]
        for p in (1, 3):
            dv[p][c] = pk @ q ** (2 * p)
    w_f = np.sum(np.abs(amps) ** 2, axis=0)
    n1 = basis.totals + 1.0
    nb = {"half": float(w_f @ n1), "three_half": float(w_f @ n1**3)}
    return GronwallSnapshot(state.t, N, dx, dv, nb)


# --- truncated flow ------------------------------------------------------------------

def evolve_truncated(model: MeanFieldModel, basis: FockBasis, N: float, M: int, phi0_state: CompositeState,
                     mf0: MeanFieldState, T: float, dt: float, convention: str = "adjudicated"):
    """Exponential-midpoint integration of i d/dt Phi = L_M(t) Phi.

    Returns lists (states, mean-field states) at t = 0, dt, ..., T.
    L_M is not Hermitian, so the flow is only approximately norm preserving.
    """
    n = int(round(T / dt))
    nX = model.cfg.tracer_states
    states = [phi0_state]
    mfs = [mf0]
    vec = phi0_state.vector.astype(complex)
    cur = mf0
    for i in range(n):
        mid = step_strang(model, cur, 0.5 * dt)
        parts = assemble_generator(model, basis, mid, N, convention)
        L, _ = truncated_generator(parts, basis, nX, M)
        vec = spla.expm_multiply(-1j * dt * L.tocsc(), vec)
        cur = step_strang(model, mid, 0.5 * dt)
        states.append(CompositeState(vec.reshape(nX, basis.dim), N, (i + 1) * dt))
        mfs.append(cur)
    return states, mfs

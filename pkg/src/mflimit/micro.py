"""Second-quantized dynamics on (tracer lattice) x (truncated Fock space).

Composite amplitudes are stored as a (K_X^{md}, dim F) array: tracer index
major, Fock index minor, which is also the ordering of every assembled
sparse operator.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .fock import FockBasis, coherent_state, poisson_tail, tail_ok
from .krylov import propagate
from .lattice import LatticeConfig, discrete_laplacian
from .potentials import PotentialSpec, v_matrix, w_on_tracer_grid

log = logging.getLogger(__name__)

DEFAULT_CEILING = 5_000_000


@dataclass(frozen=True)
class CompositeState:
    amplitudes: np.ndarray
    N: float
    t: float = 0.0

    @property
    def vector(self) -> np.ndarray:
        return self.amplitudes.ravel()

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


def composite_dim(cfg: LatticeConfig, basis: FockBasis) -> int:
    return cfg.tracer_states * basis.dim


def memory_estimate(cfg: LatticeConfig, basis: FockBasis) -> dict:
    """Rough bytes for one state vector and the assembled Hamiltonian."""
    dim = composite_dim(cfg, basis)
    # nnz per row: diagonal + tracer hops + boson hops from occupied modes
    avg_occ = min(basis.modes, basis.n_max)
    nnz_row = 1 + 2 * cfg.tracer_dof + 2 * cfg.dim * avg_occ
    return {"dim": dim, "state_bytes": 16 * dim, "hamiltonian_bytes": 12 * nnz_row * dim}


def boson_kinetic(cfg: LatticeConfig, basis: FockBasis) -> sp.csr_matrix:
    """T_b = sum_jk (-Lap_h)_jk a*_j a_k."""
    return basis.hopping(-discrete_laplacian(cfg, "boson").toarray())


def quartic_diagonal(spec: PotentialSpec, cfg: LatticeConfig, basis: FockBasis, N: float) -> np.ndarray:
    """(1/2N) sum_jk v(x_j - x_k) n_j (n_k - delta_jk) per basis state."""
    if spec.v_is_zero:
        return np.zeros(basis.dim)
    v = v_matrix(spec, cfg)
    n = basis.states.astype(float)
    return (np.einsum("sj,jk,sk->s", n, v, n) - n @ np.diag(v)) / (2 * N)


def tracer_kinetic(cfg: LatticeConfig, N: float) -> sp.csr_matrix:
    return (-discrete_laplacian(cfg, "tracer") / (2 * N)).tocsr()


def assemble_hamiltonian(cfg: LatticeConfig, spec: PotentialSpec, basis: FockBasis, N: float,
                         ceiling: int = DEFAULT_CEILING) -> sp.csr_matrix:
    dim = composite_dim(cfg, basis)
    if dim > ceiling:
        est = memory_estimate(cfg, basis)
        raise MemoryError(f"composite dimension {dim} exceeds ceiling {ceiling} "
                          f"(~{est['hamiltonian_bytes'] / 1e9:.2f} GB for H)")
    nX = cfg.tracer_states
    fock_part = boson_kinetic(cfg, basis) + sp.diags(quartic_diagonal(spec, cfg, basis, N))
    H = sp.kron(tracer_kinetic(cfg, N), sp.identity(basis.dim), format="csr")
    H = H + sp.kron(sp.identity(nX), fock_part, format="csr")
    if not spec.w_is_zero:
        coupling = w_on_tracer_grid(spec, cfg) @ basis.states.T.astype(float)
        H = H + sp.diags(coupling.ravel())
    return H.tocsr()


# --- initial data --------------------------------------------------------------

@dataclass
class InitialReport:
    u_norm: float
    x_moments: dict[int, float]
    p_moments: dict[int, float]
    coherent_mean: float
    coherent_tail: float
    seam_amplitude: float
    fock_norm: float = 1.0


def _tracer_grid_disp(cfg: LatticeConfig, X0) -> np.ndarray:
    """Minimum-image X - X0 for every tracer configuration, (nX, m*d)."""
    X = cfg.tracer_points().reshape(cfg.tracer_states, -1)
    return cfg.minimage(X - np.ravel(X0)[None, :])


def tracer_packet(cfg: LatticeConfig, N: float, X0, V0, width: float = 1.0) -> np.ndarray:
    """u_N(X) = N^{md/4} e^{i N V0.(X-X0)} u(sqrt(N)(X - X0)) with Gaussian u."""
    dof = cfg.tracer_dof
    d = _tracer_grid_disp(cfg, X0)
    norm = (np.pi * width**2) ** (-dof / 4)
    u = N ** (dof / 4) * norm * np.exp(-0.5 * N * np.sum(d**2, axis=1) / width**2)
    return u * np.exp(1j * N * (d @ np.ravel(V0)))


def packet_moments(cfg: LatticeConfig, u: np.ndarray, N: float, X0, V0, powers=(1, 2, 3)):
    """||(|X - X0|^p) u|| and ||(|P/N - V0|^p) u|| on the tracer lattice."""
    hX = cfg.tracer_spacing**cfg.tracer_dof
    d = _tracer_grid_disp(cfg, X0)
    r = np.sqrt(np.sum(d**2, axis=1))
    xm = {p: float(np.sqrt(hX * np.sum(r ** (2 * p) * np.abs(u) ** 2))) for p in powers}
    shape = (cfg.tracer_sites,) * cfg.tracer_dof
    uh = np.fft.fftn(u.reshape(shape), norm="ortho").ravel()
    k1 = 2 * np.pi * np.fft.fftfreq(cfg.tracer_sites, d=cfg.tracer_spacing)
    grids = np.meshgrid(*([k1] * cfg.tracer_dof), indexing="ij")
    kv = np.stack([g.ravel() for g in grids], axis=-1)
    q = np.sqrt(np.sum((kv / N - np.ravel(V0)[None, :]) ** 2, axis=1))
    pm = {p: float(np.sqrt(hX * np.sum(q ** (2 * p) * np.abs(uh) ** 2))) for p in powers}
    return xm, pm


def build_initial(cfg: LatticeConfig, basis: FockBasis, N: float, X0, V0, phi0,
                  u_width: float = 1.0, coherent_method: str = "direct") -> tuple[CompositeState, InitialReport]:
    """Tensor product of the rescaled tracer packet with W(sqrt(N) phi0) Omega."""
    if not N > 0:
        raise ValueError(f"N must be positive, got {N}")
    s = u_width / np.sqrt(N)
    if s < 3 * cfg.tracer_spacing:
        raise ValueError(f"tracer lattice too coarse: packet width {s:.3g} < 3 spacings "
                         f"({3 * cfg.tracer_spacing:.3g})")
    seam = float(np.exp(-0.5 * (0.5 * cfg.length) ** 2 / s**2))
    if seam > 1e-8:
        raise ValueError(f"tracer packet reaches the wrap seam (relative amplitude {seam:.2e})")
    kmax = np.pi / cfg.tracer_spacing
    if N * np.max(np.abs(V0), initial=0.0) + 6 / s > kmax:
        raise ValueError("tracer packet momentum not resolved by the tracer lattice")
    u = tracer_packet(cfg, N, X0, V0, u_width)
    hX = cfg.tracer_spacing**cfg.tracer_dof
    u_norm = float(np.sqrt(hX * np.sum(np.abs(u) ** 2)))
    xm, pm = packet_moments(cfg, u / u_norm, N, X0, V0)

    phi0 = np.asarray(phi0, dtype=complex)
    nsq = float(cfg.cell * np.sum(np.abs(phi0) ** 2))
    chi = coherent_state(basis, phi0, N, cfg.cell, method=coherent_method)
    fock_norm = float(np.linalg.norm(chi))
    report = InitialReport(u_norm, xm, pm, N * nsq, poisson_tail(N * nsq, basis.n_max), seam, fock_norm)
    # lattice-normalized packet (sqrt(h) weights) times normalized Fock part
    amps = np.outer(np.sqrt(hX) * u / u_norm, chi / fock_norm)
    return CompositeState(amps, N, 0.0), report


# --- evolution ---------------------------------------------------------------

def evolve(H, state: CompositeState, T: float, dt_report: float, tol: float = 1e-10,
           m_max: int = 40) -> list[CompositeState]:
    """Trajectory at t0, t0 + dt_report, ..., t0 + T (Lanczos propagation)."""
    nrep = int(round(T / dt_report)) if T else 0
    if nrep and not np.isclose(nrep * dt_report, T, rtol=1e-9):
        raise ValueError("T must be a multiple of dt_report")
    shape = state.amplitudes.shape
    traj = [state]
    vec = state.vector.astype(complex)
    dt_guess = None
    for n in range(1, nrep + 1):
        vec, _ = propagate(H, vec, dt_report, tol=tol, m_max=m_max, dt0=dt_guess)
        dt_guess = propagate.last_dt
        nrm = np.linalg.norm(vec)
        if abs(nrm - 1.0) > 1e-9:
            log.warning("norm drift %.2e at t=%.4g", abs(nrm - 1), state.t + n * dt_report)
        traj.append(replace(state, amplitudes=vec.reshape(shape), t=state.t + n * dt_report))
    return traj


# --- observables ---------------------------------------------------------------

@dataclass
class TracerMoments:
    EX: np.ndarray
    EP_over_N: np.ndarray
    varX: np.ndarray
    varV: np.ndarray


def _axis_view(cfg: LatticeConfig, amps: np.ndarray) -> np.ndarray:
    return amps.reshape((cfg.tracer_sites,) * cfg.tracer_dof + (-1,))


def tracer_probabilities(cfg: LatticeConfig, amps: np.ndarray, axis: int) -> np.ndarray:
    """Marginal position distribution of one tracer coordinate."""
    arr = _axis_view(cfg, amps)
    other = tuple(i for i in range(arr.ndim) if i != axis)
    return np.sum(np.abs(arr) ** 2, axis=other)


def momentum_probabilities(cfg: LatticeConfig, amps: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    arr = _axis_view(cfg, amps)
    ah = np.fft.fft(arr, axis=axis, norm="ortho")
    other = tuple(i for i in range(arr.ndim) if i != axis)
    k = 2 * np.pi * np.fft.fftfreq(cfg.tracer_sites, d=cfg.tracer_spacing)
    return k, np.sum(np.abs(ah) ** 2, axis=other)


def _central_moments(cfg, amps, axis):
    arr = _axis_view(cfg, amps)
    h = cfg.tracer_spacing
    dpsi = -1j * (np.roll(arr, -1, axis=axis) - np.roll(arr, 1, axis=axis)) / (2 * h)
    first = np.vdot(arr, dpsi).real
    second = np.vdot(dpsi, dpsi).real
    return first, second


def measure_tracer(cfg: LatticeConfig, state: CompositeState, X_ref, tracer_p: str = "spectral") -> TracerMoments:
    """<X>, <P>/N and their variances per tracer coordinate.

    Positions are unwrapped around ``X_ref`` with the minimum image.
    """
    amps = state.amplitudes
    nrm2 = np.sum(np.abs(amps) ** 2)
    ref = np.ravel(np.asarray(X_ref, dtype=float))
    x1 = cfg.axis("tracer")
    EX, EP, vX, vV = (np.zeros(cfg.tracer_dof) for _ in range(4))
    for a in range(cfg.tracer_dof):
        prob = tracer_probabilities(cfg, amps, a) / nrm2
        d = cfg.minimage(x1 - ref[a])
        EX[a] = ref[a] + prob @ d
        vX[a] = prob @ d**2 - (prob @ d) ** 2
        if tracer_p == "spectral":
            k, pk = momentum_probabilities(cfg, amps, a)
            pk = pk / nrm2
            m1, m2 = pk @ k, pk @ k**2
        elif tracer_p == "central":
            m1, m2 = _central_moments(cfg, amps, a)
            m1, m2 = m1 / nrm2, m2 / nrm2
        else:
            raise ValueError(f"unknown tracer_p {tracer_p!r}")
        EP[a] = m1 / state.N
        vV[a] = (m2 - m1**2) / state.N**2
    shp = (cfg.tracer_count, cfg.dim)
    return TracerMoments(EX.reshape(shp), EP.reshape(shp), vX.reshape(shp), vV.reshape(shp))


def number_moments(basis: FockBasis, state: CompositeState) -> tuple[float, float]:
    """<N_b> and Var N_b."""
    w = np.sum(np.abs(state.amplitudes) ** 2, axis=0)
    w = w / w.sum()
    n = basis.totals.astype(float)
    mean = float(w @ n)
    return mean, float(w @ n**2 - mean**2)


def expectation(H, state: CompositeState) -> float:
    v = state.vector
    return float(np.vdot(v, H @ v).real / np.vdot(v, v).real)


def one_particle_density(basis: FockBasis, cfg: LatticeConfig, state: CompositeState,
                         check: float = 1e-10) -> np.ndarray:
    """gamma[j, k] = <a*_k a_j> / (N h^d), the kernel of Gamma on the lattice.

    With this index order a coherent state gives the kernel phi_j conj(phi_k).
    """
    psiT = state.amplitudes.T  # (dimF, nX)
    Y = np.stack([basis.ladder(k) @ psiT for k in range(basis.modes)])
    Y = Y.reshape(basis.modes, -1)
    G = (Y.conj() @ Y.T).T  # G[j, k] = <a_k psi, a_j psi> = <a*_k a_j>
    G = G / (state.N * cfg.cell * np.vdot(psiT, psiT).real)
    asym = float(np.max(np.abs(G - G.conj().T), initial=0.0))
    if asym > check:
        raise ArithmeticError(f"one-particle density not Hermitian (defect {asym:.2e})")
    return 0.5 * (G + G.conj().T)


def trace_distance(gamma: np.ndarray, phi, cell: float) -> tuple[float, float]:
    """Trace norm and Hilbert-Schmidt norm of Gamma - |phi><phi|."""
    phi = np.asarray(phi, dtype=complex)
    S = cell * (gamma - np.outer(phi, phi.conj()))
    S = 0.5 * (S + S.conj().T)
    ev = np.linalg.eigvalsh(S)
    return float(np.sum(np.abs(ev))), float(np.sqrt(np.sum(ev**2)))


@dataclass
class MicroRecord:
    t: float
    EX: np.ndarray
    EP_over_N: np.ndarray
    varX: np.ndarray
    varV: np.ndarray
    Nb_mean: float
    Nb_var: float
    energy: float
    trace_dist: float = float("nan")
    hs_dist: float = float("nan")
    extra: dict = field(default_factory=dict)

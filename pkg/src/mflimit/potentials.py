"""Boson-tracer kernel w and boson-boson kernel v on the torus.

All kernel distances use the minimum-image convention.  The Coulomb
interaction is only available in its bounded regularized form
lambda * (eps^2 + |x|^2)^(-1/2) + offset.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lattice import GridField, LatticeConfig, gradient_norm_sq, norm_l2

W_KINDS = ("gaussian", "cosine_bump", "table", "constant", "zero")
V_KINDS = ("regularized_coulomb", "table", "constant", "zero")


@dataclass(frozen=True)
class PotentialSpec:
    kind_w: str = "gaussian"
    amplitude_w: float = 1.0
    width_w: float = 2.0
    table_w: tuple[float, ...] | None = None
    kind_v: str = "regularized_coulomb"
    amplitude_v: float = 1.0
    lam: float = 1.0
    epsilon: float = 0.5
    v_offset: float = 0.0
    table_v: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind_w not in W_KINDS:
            raise ValueError(f"unknown w kind {self.kind_w!r}")
        if self.kind_v not in V_KINDS:
            raise ValueError(f"unknown v kind {self.kind_v!r}")
        if self.kind_w in ("gaussian", "cosine_bump") and not self.width_w > 0:
            raise ValueError("w width must be positive")
        if self.kind_v == "regularized_coulomb" and not 0 < self.epsilon < 1:
            raise ValueError("regularization epsilon must lie in (0, 1)")
        if self.kind_w == "table" and self.table_w is None:
            raise ValueError("table w needs table_w")
        if self.kind_v == "table" and self.table_v is None:
            raise ValueError("table v needs table_v")

    @property
    def w_is_zero(self) -> bool:
        return self.kind_w == "zero" or self.amplitude_w == 0.0

    @property
    def v_is_zero(self) -> bool:
        if self.kind_v == "zero":
            return True
        if self.kind_v == "regularized_coulomb":
            return self.lam == 0.0 and self.v_offset == 0.0
        return self.amplitude_v == 0.0


# --- boson-tracer kernel ---------------------------------------------------

def _trig_table(cfg: LatticeConfig, table) -> tuple[np.ndarray, np.ndarray]:
    vals = np.asarray(table, dtype=float)
    if vals.size != cfg.modes:
        raise ValueError(f"w table needs {cfg.modes} entries, got {vals.size}")
    coeffs = np.fft.fftn(vals.reshape((cfg.sites,) * cfg.dim)).ravel() / cfg.modes
    kk = 2 * np.pi * np.fft.fftfreq(cfg.sites, d=cfg.spacing)
    grids = np.meshgrid(*([kk] * cfg.dim), indexing="ij")
    kvec = np.stack([g.ravel() for g in grids], axis=-1)
    return coeffs, kvec


def w_and_grad(spec: PotentialSpec, cfg: LatticeConfig, disp) -> tuple[np.ndarray, np.ndarray]:
    """Kernel value and gradient at displacements ``disp`` (..., d)."""
    d = cfg.minimage(np.asarray(disp, dtype=float))
    shape = d.shape[:-1]
    A = spec.amplitude_w
    if spec.w_is_zero:
        return np.zeros(shape), np.zeros(d.shape)
    if spec.kind_w == "constant":
        return np.full(shape, A), np.zeros(d.shape)
    r2 = np.sum(d**2, axis=-1)
    if spec.kind_w == "gaussian":
        val = A * np.exp(-0.5 * r2 / spec.width_w**2)
        return val, -d / spec.width_w**2 * val[..., None]
    if spec.kind_w == "cosine_bump":
        W = spec.width_w
        r = np.sqrt(r2)
        inside = r < W
        c = np.where(inside, np.cos(0.5 * np.pi * r / W), 0.0)
        s = np.where(inside, np.sin(0.5 * np.pi * r / W), 0.0)
        val = A * c**8
        dr = -A * 8 * c**7 * s * (0.5 * np.pi / W)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[..., None] > 0, d / r[..., None], 0.0)
        return val, dr[..., None] * unit
    coeffs, kvec = _trig_table(cfg, spec.table_w)
    phase = np.exp(1j * (d @ kvec.T))
    val = np.real(phase @ coeffs)
    grad = np.real((phase * (1j * coeffs)) @ kvec)
    return A * val, A * grad


def eval_w(spec: PotentialSpec, cfg: LatticeConfig, x, X) -> np.ndarray:
    """w(x - X) for a single tracer position X."""
    return w_and_grad(spec, cfg, np.asarray(x) - np.asarray(X))[0]


def eval_w_total(spec: PotentialSpec, cfg: LatticeConfig, x, X) -> np.ndarray:
    """Sum over tracers of w(x - X^(l)); ``x`` is (n, d), ``X`` is (m, d)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    X = np.reshape(np.asarray(X, dtype=float), (-1, cfg.dim))
    disp = x[:, None, :] - X[None, :, :]
    return w_and_grad(spec, cfg, disp)[0].sum(axis=1)


def grad_X_w_total(spec: PotentialSpec, cfg: LatticeConfig, x, X) -> np.ndarray:
    """Gradient of the total coupling with respect to each tracer, (n, m, d)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    X = np.reshape(np.asarray(X, dtype=float), (-1, cfg.dim))
    disp = x[:, None, :] - X[None, :, :]
    return -w_and_grad(spec, cfg, disp)[1]


def w_on_tracer_grid(spec: PotentialSpec, cfg: LatticeConfig) -> np.ndarray:
    """Total coupling at every (tracer configuration, boson site), (K_X^{md}, K^d)."""
    X = cfg.tracer_points()
    x = cfg.points()
    disp = x[None, :, None, :] - X[:, None, :, :]
    return w_and_grad(spec, cfg, disp)[0].sum(axis=-1)


# --- boson-boson kernel ----------------------------------------------------

def eval_v(spec: PotentialSpec, cfg: LatticeConfig, disp) -> np.ndarray:
    d = cfg.minimage(np.asarray(disp, dtype=float))
    shape = d.shape[:-1]
    if spec.v_is_zero:
        return np.zeros(shape)
    if spec.kind_v == "constant":
        return np.full(shape, spec.amplitude_v)
    if spec.kind_v == "regularized_coulomb":
        r2 = np.sum(d**2, axis=-1)
        return spec.lam / np.sqrt(spec.epsilon**2 + r2) + spec.v_offset
    # table indexed by lattice offset; only defined on lattice displacements
    table = np.asarray(spec.table_v, dtype=float).reshape((cfg.sites,) * cfg.dim)
    idx = np.rint(d / cfg.spacing).astype(int) % cfg.sites
    if not np.allclose(idx * cfg.spacing, d % cfg.length, atol=1e-9 * cfg.length):
        raise ValueError("table v can only be evaluated at lattice displacements")
    return spec.amplitude_v * table[tuple(np.moveaxis(idx, -1, 0))]


def v_row(spec: PotentialSpec, cfg: LatticeConfig) -> np.ndarray:
    """v(x_j - 0) for every lattice point, the generator of the circulant."""
    return eval_v(spec, cfg, cfg.points())


def v_matrix(spec: PotentialSpec, cfg: LatticeConfig) -> np.ndarray:
    x = cfg.points()
    return eval_v(spec, cfg, x[:, None, :] - x[None, :, :])


def hartree_convolution(spec: PotentialSpec, cfg: LatticeConfig, rho) -> np.ndarray:
    """(v * rho)(x_j) = h^d sum_k v(x_j - x_k) rho_k by circular convolution."""
    rho = np.asarray(rho)
    if np.iscomplexobj(rho):
        if np.max(np.abs(rho.imag)) > 1e-12:
            raise ValueError("density must be real")
        rho = rho.real
    if rho.min(initial=0.0) < -1e-12:
        raise ValueError("density must be nonnegative")
    if spec.v_is_zero:
        return np.zeros(cfg.modes)
    shape = (cfg.sites,) * cfg.dim
    vk = np.fft.fftn(v_row(spec, cfg).reshape(shape))
    rk = np.fft.fftn(rho.reshape(shape))
    return cfg.cell * np.real(np.fft.ifftn(vk * rk)).ravel()


def hartree_map(spec: PotentialSpec, cfg: LatticeConfig, phi) -> np.ndarray:
    """J(phi) = (v * |phi|^2) phi."""
    phi = np.asarray(phi)
    return hartree_convolution(spec, cfg, np.abs(phi) ** 2) * phi


# --- empirical constants of the fundamental estimates ----------------------

@dataclass
class EstimateReport:
    taylor_w: float
    taylor_grad_w: float
    v_sup_l2: float
    v_sup_l1: float
    v_double: float
    lipschitz: float
    per_sample_lipschitz: list[float] = field(default_factory=list)

    def finite(self) -> bool:
        vals = [self.taylor_w, self.taylor_grad_w, self.v_sup_l2, self.v_sup_l1,
                self.v_double, self.lipschitz]
        return bool(np.all(np.isfinite(vals)))


def smooth_random_field(cfg: LatticeConfig, rng: np.random.Generator, max_mode: int = 3) -> np.ndarray:
    """Band-limited random field; the same draw is resolution independent."""
    n = np.arange(-max_mode, max_mode + 1)
    grids = np.meshgrid(*([n] * cfg.dim), indexing="ij")
    modes = np.stack([g.ravel() for g in grids], axis=-1)
    coef = rng.normal(size=len(modes)) + 1j * rng.normal(size=len(modes))
    coef /= 1.0 + np.sum(modes**2, axis=-1)
    phase = cfg.points() @ (2 * np.pi * modes.T / cfg.length)
    return np.exp(1j * phase) @ coef


def _h1_normalize(cfg, f):
    nrm = np.sqrt(norm_l2(GridField(f, cfg)) ** 2 + gradient_norm_sq(cfg, f))
    if nrm == 0:
        raise ValueError("degenerate sample: zero field")
    return f / nrm


def _h1(cfg, f):
    return np.sqrt(norm_l2(GridField(f, cfg)) ** 2 + gradient_norm_sq(cfg, f))


def check_fundamental_estimates(spec: PotentialSpec, cfg: LatticeConfig, samples,
                                n_points: int = 400, seed: int = 0) -> EstimateReport:
    """Empirical constants for the Taylor, potential and Lipschitz estimates.

    ``samples`` is a sequence of (phi, psi) lattice arrays; both are
    normalized in discrete H1 before use.
    """
    rng = np.random.default_rng(seed)
    L = cfg.length
    xs = rng.uniform(0, L, size=(n_points, cfg.dim))
    ys = xs + rng.normal(scale=0.1 * L, size=xs.shape)
    sep = np.linalg.norm(cfg.minimage(xs - ys), axis=-1)
    keep = sep > 1e-9
    wx, gx = w_and_grad(spec, cfg, xs[keep])
    wy, gy = w_and_grad(spec, cfg, ys[keep])
    taylor_w = float(np.max(np.abs(wx - wy) / sep[keep]))
    taylor_g = float(np.max(np.linalg.norm(gx - gy, axis=-1) / sep[keep]))

    vm = v_matrix(spec, cfg)
    sup_l2 = sup_l1 = dbl = lip = 0.0
    lips = []
    for phi, psi in samples:
        phi = _h1_normalize(cfg, np.asarray(phi, dtype=complex))
        psi = _h1_normalize(cfg, np.asarray(psi, dtype=complex))
        for f in (phi, psi):
            rho = np.abs(f) ** 2
            h1 = _h1(cfg, f)
            l2 = norm_l2(GridField(f, cfg))
            sup_l2 = max(sup_l2, float(np.max(cfg.cell * (vm**2 @ rho)) / h1**2))
            sup_l1 = max(sup_l1, float(np.max(np.abs(cfg.cell * (vm @ rho))) / (l2 * h1)))
            dbl = max(dbl, float(cfg.cell**2 * rho @ (vm**2) @ rho / (l2**2 * h1**2)))
        diff = _h1(cfg, phi - psi)
        if diff == 0.0:
            ratio = 0.0
        else:
            num = _h1(cfg, hartree_map(spec, cfg, phi) - hartree_map(spec, cfg, psi))
            ratio = float(num / ((_h1(cfg, phi) ** 2 + _h1(cfg, psi) ** 2) * diff))
        lips.append(ratio)
        lip = max(lip, ratio)
    return EstimateReport(taylor_w, taylor_g, sup_l2, sup_l1, dbl, lip, lips)


def lipschitz_numerator(spec: PotentialSpec, cfg: LatticeConfig, phi, psi) -> float:
    return _h1(cfg, hartree_map(spec, cfg, phi) - hartree_map(spec, cfg, psi))

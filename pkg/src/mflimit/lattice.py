"""Periodic lattices, discrete Laplacians and weighted inner products.

Every grid in the package lives on the torus [0, L)^d with K points per
axis.  Fields are stored as flat complex arrays of length K^d in C order;
the discrete L2 pairing carries the cell volume h^d so that lattice sums
approximate the continuum integrals.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.sparse as sp

Target = Literal["boson", "tracer"]
Symbol = Literal["fd", "spectral"]


@dataclass(frozen=True)
class LatticeConfig:
    """Shared torus for the boson field and the tracer particles."""

    dim: int = 1
    length: float = 12.8
    sites: int = 4
    tracer_sites: int = 80
    tracer_count: int = 1

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if not self.length > 0:
            raise ValueError("length must be positive")
        for name in ("sites", "tracer_sites"):
            k = getattr(self, name)
            if k < 4 or k % 2:
                raise ValueError(f"{name} must be even and >= 4, got {k}")
        if self.tracer_count < 1:
            raise ValueError("tracer_count must be >= 1")

    @property
    def spacing(self) -> float:
        return self.length / self.sites

    @property
    def tracer_spacing(self) -> float:
        return self.length / self.tracer_sites

    @property
    def modes(self) -> int:
        return self.sites**self.dim

    @property
    def cell(self) -> float:
        """Boson cell volume h^d."""
        return self.spacing**self.dim

    @property
    def tracer_dof(self) -> int:
        """Number of tracer coordinates m*d."""
        return self.tracer_count * self.dim

    @property
    def tracer_states(self) -> int:
        return self.tracer_sites**self.tracer_dof

    def axis(self, target: Target = "boson") -> np.ndarray:
        k = self.sites if target == "boson" else self.tracer_sites
        return np.arange(k) * (self.length / k)

    def points(self) -> np.ndarray:
        """Boson lattice points, shape (K^d, d)."""
        ax = self.axis("boson")
        grids = np.meshgrid(*([ax] * self.dim), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def tracer_points(self) -> np.ndarray:
        """Tracer configurations, shape (K_X^{md}, m, d)."""
        ax = self.axis("tracer")
        grids = np.meshgrid(*([ax] * self.tracer_dof), indexing="ij")
        flat = np.stack([g.ravel() for g in grids], axis=-1)
        return flat.reshape(-1, self.tracer_count, self.dim)

    def minimage(self, dx):
        """Wrap displacements into [-L/2, L/2)."""
        L = self.length
        return (np.asarray(dx) + 0.5 * L) % L - 0.5 * L


@dataclass(frozen=True)
class GridField:
    values: np.ndarray
    config: LatticeConfig

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != (self.config.modes,):
            raise ValueError(f"field has shape {v.shape}, expected ({self.config.modes},)")
        object.__setattr__(self, "values", v)


def _stencil_1d(k: int, h: float) -> sp.csr_matrix:
    main = -2.0 * np.ones(k)
    off = np.ones(k - 1)
    lap = sp.diags([off, main, off], [-1, 0, 1], shape=(k, k), format="lil")
    lap[0, k - 1] = 1.0
    lap[k - 1, 0] = 1.0
    return (lap.tocsr() / h**2).astype(float)


def _sum_over_axes(one_d: sp.csr_matrix, naxes: int) -> sp.csr_matrix:
    k = one_d.shape[0]
    total = sp.csr_matrix((k**naxes, k**naxes))
    for ax in range(naxes):
        ops = [sp.identity(k, format="csr")] * naxes
        ops[ax] = one_d
        term = ops[0]
        for op in ops[1:]:
            term = sp.kron(term, op, format="csr")
        total = total + term
    return total.tocsr()


def discrete_laplacian(cfg: LatticeConfig, target: Target = "boson") -> sp.csr_matrix:
    """Periodic 3-point (per axis) Laplacian.

    For ``target="tracer"`` the operator acts on all m*d tracer coordinates.
    """
    if target == "boson":
        return _sum_over_axes(_stencil_1d(cfg.sites, cfg.spacing), cfg.dim)
    return _sum_over_axes(_stencil_1d(cfg.tracer_sites, cfg.tracer_spacing), cfg.tracer_dof)


def wavenumbers(k: int, h: float) -> np.ndarray:
    return 2 * np.pi * np.fft.fftfreq(k, d=h)


def kinetic_symbol(cfg: LatticeConfig, symbol: Symbol = "fd") -> np.ndarray:
    """Eigenvalues of -Laplacian on the FFT grid, shape (K,)*d.

    ``fd`` is the symbol of the finite-difference stencil, ``spectral``
    the exact |k|^2.
    """
    kk = wavenumbers(cfg.sites, cfg.spacing)
    if symbol == "fd":
        one = (2.0 / cfg.spacing**2) * (1.0 - np.cos(kk * cfg.spacing))
    elif symbol == "spectral":
        one = kk**2
    else:
        raise ValueError(f"unknown kinetic symbol {symbol!r}")
    grids = np.meshgrid(*([one] * cfg.dim), indexing="ij")
    return np.sum(grids, axis=0)


def spectral_kinetic_phase(cfg: LatticeConfig, dt: float, symbol: Symbol = "fd") -> np.ndarray:
    """Fourier multipliers exp(-i omega_k dt) of the free boson flow."""
    return np.exp(-1j * dt * kinetic_symbol(cfg, symbol))


def apply_kinetic(cfg: LatticeConfig, f: np.ndarray, multiplier: np.ndarray) -> np.ndarray:
    shape = (cfg.sites,) * cfg.dim
    fh = np.fft.fftn(np.reshape(f, shape))
    return np.fft.ifftn(fh * multiplier).ravel()


def _check(f: GridField, g: GridField):
    if f.config != g.config:
        raise ValueError("fields live on different lattices")


def inner(f: GridField, g: GridField) -> complex:
    _check(f, g)
    return complex(f.config.cell * np.vdot(f.values, g.values))


def norm_l2(f: GridField) -> float:
    return float(np.sqrt(f.config.cell * np.sum(np.abs(f.values) ** 2)))


def gradient_norm_sq(cfg: LatticeConfig, values: np.ndarray, symbol: Symbol = "fd") -> float:
    """||grad_h f||^2 with forward differences (fd) or in Fourier space."""
    if symbol == "fd":
        arr = np.reshape(values, (cfg.sites,) * cfg.dim)
        total = 0.0
        for ax in range(cfg.dim):
            diff = (np.roll(arr, -1, axis=ax) - arr) / cfg.spacing
            total += np.sum(np.abs(diff) ** 2)
        return float(cfg.cell * total)
    fh = np.fft.fftn(np.reshape(values, (cfg.sites,) * cfg.dim))
    # Parseval: sum |f|^2 = sum |fh|^2 / K^d
    return float(cfg.cell * np.sum(kinetic_symbol(cfg, symbol) * np.abs(fh) ** 2) / cfg.modes)


def norm_h1(f: GridField, symbol: Symbol = "fd") -> float:
    return float(np.sqrt(norm_l2(f) ** 2 + gradient_norm_sq(f.config, f.values, symbol)))


def plane_wave(cfg: LatticeConfig, mode: tuple[int, ...] | int) -> GridField:
    """Unit-norm plane wave exp(i 2 pi n.x / L) / sqrt(L^d)."""
    n = np.atleast_1d(mode)
    phase = cfg.points() @ (2 * np.pi * n / cfg.length)
    return GridField(np.exp(1j * phase) / np.sqrt(cfg.length**cfg.dim), cfg)

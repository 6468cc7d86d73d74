import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mflimit.lattice import (GridField, LatticeConfig, apply_kinetic, discrete_laplacian, gradient_norm_sq,
                             inner, kinetic_symbol, norm_h1, norm_l2, plane_wave, spectral_kinetic_phase)


def dense_stencil(K, h):
    A = np.zeros((K, K))
    for j in range(K):
        A[j, j] = -2.0
        A[j, (j + 1) % K] += 1.0
        A[j, (j - 1) % K] += 1.0
    return A / h**2


@pytest.mark.parametrize("kw", [dict(sites=3), dict(sites=2), dict(tracer_sites=5), dict(dim=4), dict(length=-1.0)])
def test_config_rejects_invalid(kw):
    with pytest.raises(ValueError):
        LatticeConfig(**kw)


def test_laplacian_kills_constants():
    cfg = LatticeConfig(sites=8)
    assert np.allclose(discrete_laplacian(cfg) @ np.full(8, 3.7), 0.0, atol=1e-13)


def test_laplacian_plane_wave_eigenvalue():
    K, L = 8, 8.0
    cfg = LatticeConfig(length=L, sites=K)
    h = L / K
    f = np.exp(2j * np.pi * np.arange(K) / K)
    lam = -(2 / h**2) * (1 - np.cos(2 * np.pi / K))
    assert np.allclose(discrete_laplacian(cfg) @ f, lam * f, atol=1e-13)


def test_laplacian_matches_dense_stencil(rng):
    cfg = LatticeConfig(length=5.0, sites=8)
    f = rng.normal(size=8) + 1j * rng.normal(size=8)
    ref = dense_stencil(8, cfg.spacing) @ f
    assert np.max(np.abs(discrete_laplacian(cfg) @ f - ref)) < 1e-14 * np.max(np.abs(ref)) * 10


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_laplacian_hermitian_and_row_sums(dim):
    cfg = LatticeConfig(dim=dim, sites=4, length=3.0)
    A = discrete_laplacian(cfg)
    assert abs(A - A.T).max() == 0.0
    assert np.allclose(np.asarray(A.sum(axis=1)).ravel(), 0.0, atol=1e-12)


def test_tracer_laplacian_spans_all_coordinates():
    cfg = LatticeConfig(dim=1, sites=4, tracer_sites=6, tracer_count=2)
    A = discrete_laplacian(cfg, "tracer")
    assert A.shape == (36, 36)
    one = dense_stencil(6, cfg.tracer_spacing)
    ref = np.kron(one, np.eye(6)) + np.kron(np.eye(6), one)
    assert np.allclose(A.toarray(), ref, atol=1e-12)


def test_kinetic_phase_trivial_cases():
    cfg = LatticeConfig(length=8.0, sites=8)
    assert np.all(spectral_kinetic_phase(cfg, 0.0) == 1.0)
    assert spectral_kinetic_phase(cfg, 0.37).ravel()[0] == 1.0
    mult = spectral_kinetic_phase(cfg, 0.1)
    assert np.allclose(np.abs(mult), 1.0)


def test_kinetic_phase_fd_mode_one():
    cfg = LatticeConfig(length=8.0, sites=8)
    dt, h = 0.1, cfg.spacing
    expected = np.exp(-1j * dt * (2 / h**2) * (1 - np.cos(2 * np.pi / 8)))
    assert abs(spectral_kinetic_phase(cfg, dt, "fd")[1] - expected) < 1e-14


def test_fd_symbol_diagonalizes_stencil(rng):
    cfg = LatticeConfig(dim=2, sites=6, length=4.0)
    f = rng.normal(size=36) + 1j * rng.normal(size=36)
    via_fft = apply_kinetic(cfg, f, kinetic_symbol(cfg, "fd"))
    assert np.allclose(via_fft, -(discrete_laplacian(cfg) @ f), atol=1e-10)


def test_constant_field_norm():
    cfg = LatticeConfig(length=6.0, sites=12)
    f = GridField(np.full(12, 1 / np.sqrt(6.0)), cfg)
    assert abs(norm_l2(f) - 1.0) < 1e-14


def test_plane_waves_orthogonal():
    cfg = LatticeConfig(dim=2, length=5.0, sites=8)
    a, b = plane_wave(cfg, (1, 0)), plane_wave(cfg, (2, -1))
    assert abs(inner(a, b)) < 1e-14
    assert abs(norm_l2(a) - 1) < 1e-14


def test_norm_matches_direct_sum(rng):
    cfg = LatticeConfig(length=3.3, sites=16)
    v = rng.normal(size=16) + 1j * rng.normal(size=16)
    direct = 0.0
    for z in v:
        direct += cfg.spacing * (z.real**2 + z.imag**2)
    assert abs(norm_l2(GridField(v, cfg)) - np.sqrt(direct)) < 1e-14


def test_mismatched_configs_rejected():
    a = GridField(np.ones(4), LatticeConfig(sites=4))
    b = GridField(np.ones(4), LatticeConfig(sites=4, length=2.0))
    with pytest.raises(ValueError):
        inner(a, b)
    with pytest.raises(ValueError):
        GridField(np.ones(5), LatticeConfig(sites=4))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), dim=st.integers(1, 3), k=st.sampled_from([4, 6, 8]))
def test_parseval(seed, dim, k):
    cfg = LatticeConfig(dim=dim, sites=k, length=2.5)
    r = np.random.default_rng(seed)
    f = r.normal(size=cfg.modes) + 1j * r.normal(size=cfg.modes)
    fh = np.fft.fftn(f.reshape((k,) * dim), norm="ortho")
    assert abs(np.sum(np.abs(fh) ** 2) - np.sum(np.abs(f) ** 2)) < 1e-12 * np.sum(np.abs(f) ** 2)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), dim=st.integers(1, 3))
def test_gradient_consistent_with_laplacian(seed, dim):
    cfg = LatticeConfig(dim=dim, sites=6, length=4.0)
    r = np.random.default_rng(seed)
    f = r.normal(size=cfg.modes) + 1j * r.normal(size=cfg.modes)
    quad = cfg.cell * np.vdot(f, -(discrete_laplacian(cfg) @ f)).real
    g = gradient_norm_sq(cfg, f, "fd")
    assert abs(g - quad) < 1e-12 * max(1.0, g)


def test_h1_norm_of_plane_wave():
    cfg = LatticeConfig(length=8.0, sites=8)
    pw = plane_wave(cfg, 1)
    omega = (2 / cfg.spacing**2) * (1 - np.cos(2 * np.pi / 8))
    assert abs(norm_h1(pw) ** 2 - (1 + omega)) < 1e-12

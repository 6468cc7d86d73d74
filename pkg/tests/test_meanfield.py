import numpy as np
import pytest
from dataclasses import replace

from mflimit.lattice import LatticeConfig, plane_wave
from mflimit.meanfield import (MeanFieldModel, MeanFieldState, PicardNotContracting, conservation_report, energy,
                               evolve, fit_mu, force, h1_distance, h1_norm_sq, mass, picard_solve, step_strang)
from mflimit.potentials import PotentialSpec

from conftest import free_spec


def naive_energy(model, st):
    """Loop-based reimplementation of the energy functional."""
    cfg, spec = model.cfg, model.spec
    h, K, L = cfg.spacing, cfg.sites, cfg.length
    phi = st.phi
    kin = 0.5 * sum(v * v for v in st.V.ravel())
    l2 = sum(h * abs(z) ** 2 for z in phi)
    grad = sum(h * abs((phi[(j + 1) % K] - phi[j]) / h) ** 2 for j in range(K))
    pair = 0.0
    coup = 0.0
    for j in range(K):
        xj = j * h
        for k in range(K):
            d = (xj - k * h + L / 2) % L - L / 2
            pair += 0.5 * h * h * abs(phi[j]) ** 2 * abs(phi[k]) ** 2 * (spec.lam / np.sqrt(spec.epsilon**2 + d * d))
        for X in st.X[:, 0]:
            d = (xj - X + L / 2) % L - L / 2
            coup += h * abs(phi[j]) ** 2 * spec.amplitude_w * np.exp(-0.5 * d * d / spec.width_w**2)
    return kin + l2 + grad + pair + coup


def test_energy_of_empty_field():
    model = MeanFieldModel(LatticeConfig(sites=8), PotentialSpec())
    st = MeanFieldState([[1.0]], [[0.6]], np.zeros(8))
    assert energy(model, st).total == pytest.approx(0.18, abs=1e-15)


def test_energy_of_plane_wave_free():
    cfg = LatticeConfig(length=8.0, sites=8)
    model = MeanFieldModel(cfg, free_spec())
    pw = plane_wave(cfg, 2).values
    st = MeanFieldState([[0.0]], [[0.5]], pw)
    omega = (2 / cfg.spacing**2) * (1 - np.cos(2 * np.pi * 2 / 8))
    assert energy(model, st).total == pytest.approx(0.125 + 1 + omega, abs=1e-12)


def test_energy_matches_naive_oracle(rng):
    cfg = LatticeConfig(length=12.8, sites=16, tracer_count=2)
    model = MeanFieldModel(cfg, PotentialSpec(width_w=1.7))
    phi = rng.normal(size=16) + 1j * rng.normal(size=16)
    st = MeanFieldState([[2.0], [9.5]], [[0.1], [-0.3]], phi)
    e = energy(model, st)
    assert e.total == pytest.approx(naive_energy(model, st), rel=1e-12)
    assert e.total == pytest.approx(e.kinetic_tracer + e.h1_boson + e.pair + e.coupling, abs=1e-12)


def test_free_evolution_exact():
    cfg = LatticeConfig(length=8.0, sites=8)
    model = MeanFieldModel(cfg, free_spec())
    pw = plane_wave(cfg, 1).values
    s0 = MeanFieldState([[1.0]], [[0.3]], pw)
    T, dt = 0.7, 0.01
    sT = evolve(model, s0, T, dt)[-1]
    omega = (2 / cfg.spacing**2) * (1 - np.cos(2 * np.pi / 8))
    assert np.max(np.abs(sT.phi - np.exp(-1j * omega * T) * pw)) < 1e-12
    assert sT.X[0, 0] == pytest.approx(1.0 + 0.3 * T, abs=1e-13)


def test_zero_w_means_constant_velocity(rng):
    cfg = LatticeConfig(length=8.0, sites=16)
    model = MeanFieldModel(cfg, PotentialSpec(kind_w="zero"))
    s0 = MeanFieldState([[2.0]], [[0.25]], rng.normal(size=16) + 0j)
    for s in evolve(model, s0, 0.2, 0.01):
        assert s.V[0, 0] == 0.25


def test_empty_field_is_classical_motion():
    cfg = LatticeConfig(length=8.0, sites=16)
    model = MeanFieldModel(cfg, PotentialSpec())
    s0 = MeanFieldState([[2.0]], [[0.25]], np.zeros(16))
    sT = evolve(model, s0, 1.0, 0.01)[-1]
    assert np.all(force(model, s0.X, s0.phi) == 0)
    assert sT.X[0, 0] == pytest.approx(2.25, abs=1e-13)
    assert np.all(sT.phi == 0)


def test_force_matches_energy_gradient(mf_model, mf_initial):
    # keep the minimum-image seam X + L/2 off the lattice, where the kernel has a kink
    base = replace(mf_initial, X=mf_initial.X + 0.05)
    eps = 1e-6
    up = replace(base, X=base.X + eps)
    dn = replace(base, X=base.X - eps)
    fd = -(energy(mf_model, up).coupling - energy(mf_model, dn).coupling) / (2 * eps)
    assert force(mf_model, base.X, base.phi)[0, 0] == pytest.approx(fd, rel=1e-7)


def test_time_reversibility(mf_model, mf_initial):
    cur = mf_initial
    for _ in range(50):
        cur = step_strang(mf_model, cur, 1e-2)
    for _ in range(50):
        cur = step_strang(mf_model, cur, -1e-2)
    assert np.max(np.abs(cur.phi - mf_initial.phi)) < 1e-9
    assert np.max(np.abs(cur.X - mf_initial.X)) < 1e-9
    assert np.max(np.abs(cur.V - mf_initial.V)) < 1e-9


def test_second_order_self_convergence(mf_model, mf_initial):
    ref = evolve(mf_model, mf_initial, 1.0, 1.25e-4)[-1]
    e1 = h1_distance(mf_model, evolve(mf_model, mf_initial, 1.0, 1e-3)[-1].phi, ref.phi)
    e2 = h1_distance(mf_model, evolve(mf_model, mf_initial, 1.0, 5e-4)[-1].phi, ref.phi)
    assert 3.0 <= e1 / e2 <= 5.0


def test_mass_conserved_and_energy_bound(mf_model, mf_initial):
    rep = conservation_report(mf_model, evolve(mf_model, mf_initial, 0.5, 1e-3))
    assert rep.mass_drift < 1e-10
    assert rep.bound_violations == 0
    assert rep.mu > 0


def test_fit_mu_refuses_nonpositive_bound():
    cfg = LatticeConfig(sites=8)
    model = MeanFieldModel(cfg, PotentialSpec(amplitude_w=-50.0))
    phi = np.full(8, 1 / np.sqrt(cfg.length))
    st = MeanFieldState([[cfg.length / 2]], [[0.0]], phi)
    assert energy(model, st).total + mass(model, phi) + mass(model, phi) ** 3 <= 0
    with pytest.raises(ValueError):
        fit_mu(model, st)


def test_picard_free_converges_in_one_iteration():
    cfg = LatticeConfig(length=8.0, sites=8)
    model = MeanFieldModel(cfg, free_spec())
    pw = plane_wave(cfg, 1).values
    s0 = MeanFieldState([[1.0]], [[0.0]], pw)
    res = picard_solve(model, s0, 0.1, 2, tau=1e-3)
    omega = (2 / cfg.spacing**2) * (1 - np.cos(2 * np.pi / 8))
    assert np.max(np.abs(res.phi[-1] - np.exp(-1j * omega * 0.1) * pw)) < 1e-13
    assert res.distances[1] < 1e-13


def test_picard_zero_iterations_returns_anchor(mf_model, mf_initial):
    res = picard_solve(mf_model, mf_initial, 0.01, 0, tau=1e-3)
    assert np.all(res.phi == mf_initial.phi[None])
    assert np.all(res.X == mf_initial.X[None])


def test_picard_agrees_with_strang_short_horizon(mf_model, mf_initial):
    ref = evolve(mf_model, mf_initial, 0.02, 1e-4)[-1]
    res = picard_solve(mf_model, mf_initial, 0.02, 10, tau=1e-4)
    assert h1_distance(mf_model, res.phi[-1], ref.phi) < 1e-6
    assert np.max(np.abs(res.X[-1] - ref.X)) < 1e-8


def test_picard_detects_divergence():
    cfg = LatticeConfig(length=12.8, sites=32)
    model = MeanFieldModel(cfg, PotentialSpec(amplitude_w=40.0, width_w=1.0, lam=40.0))
    x = cfg.points()[:, 0]
    phi = np.exp(-((x - 6.4) ** 2)) + 0j
    phi /= np.sqrt(cfg.cell * np.sum(np.abs(phi) ** 2))
    s0 = MeanFieldState([[6.0]], [[0.0]], phi)
    with pytest.raises(PicardNotContracting):
        picard_solve(model, s0, 3.0, 12, tau=1e-2)


def test_state_coerces_shapes():
    st = MeanFieldState(1.0, 2.0, np.zeros(4))
    assert st.X.shape == (1, 1) and st.V.shape == (1, 1)
    with pytest.raises(ValueError):
        MeanFieldState([np.nan], [0.0], np.zeros(4))


def test_evolve_rejects_incommensurate_T(mf_model, mf_initial):
    with pytest.raises(ValueError):
        evolve(mf_model, mf_initial, 0.0105, 1e-3)

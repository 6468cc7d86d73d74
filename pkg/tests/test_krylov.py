import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from mflimit.krylov import KrylovError, lanczos_expm, propagate


def random_hermitian(n, density, seed):
    r = np.random.default_rng(seed)
    A = sp.random(n, n, density=density, random_state=r, dtype=complex,
                  data_rvs=lambda k: r.normal(size=k) + 1j * r.normal(size=k))
    return ((A + A.conj().T) / 2).tocsr()


def test_matches_dense_exponential():
    H = random_hermitian(300, 0.02, 1)
    v = np.random.default_rng(2).normal(size=300) + 0j
    v /= np.linalg.norm(v)
    w, steps = propagate(H, v, 1.3, tol=1e-12)
    ref = sla.expm(-1.3j * H.toarray()) @ v
    assert np.max(np.abs(w - ref)) < 1e-9
    assert steps >= 1


def test_zero_time_identity():
    H = random_hermitian(50, 0.1, 3)
    v = np.arange(50, dtype=complex)
    w, steps = propagate(H, v, 0.0)
    assert np.array_equal(w, v) and steps == 0


def test_diagonal_phases():
    d = np.linspace(-3, 5, 40)
    H = sp.diags(d).tocsr()
    v = np.ones(40, dtype=complex) / np.sqrt(40)
    w, _ = propagate(H, v, 0.9)
    assert np.max(np.abs(w - np.exp(-0.9j * d) * v)) < 1e-10


def test_negative_time_inverts():
    H = random_hermitian(120, 0.05, 4)
    v = np.random.default_rng(5).normal(size=120) + 0j
    w, _ = propagate(H, v, 0.7)
    back, _ = propagate(H, w, -0.7)
    assert np.max(np.abs(back - v)) < 1e-8


def test_happy_breakdown_is_exact():
    H = sp.diags([1.0, 2.0, 3.0]).tocsr()
    v = np.array([1.0, 1.0, 0.0], dtype=complex)
    w, err, m = lanczos_expm(H, v, 0.5, m_max=10)
    assert m == 2 and err == 0.0
    assert np.allclose(w, np.exp(-0.5j * np.array([1, 2, 3])) * v, atol=1e-13)


def test_zero_vector():
    w, err, m = lanczos_expm(sp.identity(5).tocsr(), np.zeros(5, dtype=complex), 1.0)
    assert m == 0 and err == 0 and np.all(w == 0)


def test_unreachable_tolerance_raises():
    H = random_hermitian(200, 0.05, 6) * 50
    v = np.ones(200, dtype=complex)
    with pytest.raises(KrylovError):
        propagate(H, v, 1.0, tol=0.0, m_max=4)

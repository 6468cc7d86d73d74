"""Lanczos approximation of exp(-i t H) v for sparse Hermitian H."""

from __future__ import annotations

import logging

import numpy as np
import scipy.linalg as sla

log = logging.getLogger(__name__)


class KrylovError(RuntimeError):
    pass


def lanczos_expm(H, v, dt: float, m_max: int = 40):
    """One Krylov step.  Returns (w, error_estimate, krylov_dim).

    Uses full reorthogonalization.  The error estimate is the usual
    a-posteriori bound beta_m |e_m^T exp(-i dt T_m) e_1| times ||v||.
    """
    beta0 = np.linalg.norm(v)
    if beta0 == 0:
        return np.zeros_like(v), 0.0, 0
    n = v.shape[0]
    m_max = min(m_max, n)
    Q = np.zeros((m_max + 1, n), dtype=complex)
    alpha = np.zeros(m_max)
    beta = np.zeros(m_max)
    Q[0] = v / beta0
    m = m_max
    breakdown = False
    for j in range(m_max):
        w = H @ Q[j]
        alpha[j] = np.vdot(Q[j], w).real
        w = w - alpha[j] * Q[j] - (beta[j - 1] * Q[j - 1] if j > 0 else 0)
        # two passes of Gram-Schmidt against the whole basis
        for _ in range(2):
            w -= Q[: j + 1].T @ (Q[: j + 1].conj() @ w)
        beta[j] = np.linalg.norm(w)
        if beta[j] < 1e-13 * max(1.0, abs(alpha[j])):
            m = j + 1
            breakdown = True
            break
        Q[j + 1] = w / beta[j]
    evals, evecs = sla.eigh_tridiagonal(alpha[:m], beta[: m - 1])
    y = evecs @ (np.exp(-1j * dt * evals) * evecs[0].conj())
    err = 0.0 if breakdown else float(beta[m - 1] * abs(y[m - 1]) * beta0)
    return beta0 * (Q[:m].T @ y), err, m


def propagate(H, v, T: float, tol: float = 1e-10, m_max: int = 40, dt0: float | None = None):
    """exp(-i T H) v with adaptive substeps; per-substep error below ``tol``.

    Returns (vector, substep count).  The last accepted substep size is
    stored on the function for reuse as the next initial guess.
    """
    if T == 0:
        return np.array(v, dtype=complex, copy=True), 0
    sign = np.sign(T)
    remaining = abs(T)
    dt = min(remaining, dt0 if dt0 else remaining)
    w = np.asarray(v, dtype=complex)
    steps = 0
    floor = 1e-12 * abs(T)
    while remaining > 0:
        dt = min(dt, remaining)
        cand, err, m = lanczos_expm(H, w, sign * dt, m_max)
        if err > tol:
            dt *= 0.5
            if dt < floor:
                raise KrylovError(
                    f"Krylov step did not converge: err={err:.2e} at dt={dt:.2e}, m={m}, "
                    f"remaining={remaining:.3e}")
            continue
        w = cand
        remaining -= dt
        steps += 1
        if err < 0.1 * tol:
            dt *= 1.5
    propagate.last_dt = dt
    return w, steps


propagate.last_dt = None

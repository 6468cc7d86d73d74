"""Truncated bosonic Fock space over the lattice modes.

Basis states are occupation vectors with total number <= n_max, ranked
graded-lexicographically: first by total number, then lexicographically
within a sector.  Each sector is therefore a contiguous index block and
number cutoffs are plain slices.

Lattice field convention: a_x -> a_k / sqrt(h^d), hence
a(f) = sqrt(h^d) sum_k conj(f_k) a_k and a*(f) = sqrt(h^d) sum_k f_k a*_k,
so that W(f)* a_k W(f) = a_k + sqrt(h^d) f_k.
"""

from __future__ import annotations

from functools import cached_property
from itertools import combinations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import comb

DENSE_EXPM_LIMIT = 4000


def _compositions(total: int, parts: int):
    """Lexicographically ascending compositions of ``total`` into ``parts``."""
    # stars and bars; reversed bar positions give ascending first entries
    out = []
    for bars in combinations(range(total + parts - 1), parts - 1):
        prev = -1
        occ = []
        for b in bars:
            occ.append(b - prev - 1)
            prev = b
        occ.append(total + parts - 2 - prev)
        out.append(occ)
    out.sort()
    return out


class FockBasis:
    def __init__(self, modes: int, n_max: int):
        if modes < 1 or n_max < 0:
            raise ValueError("need modes >= 1 and n_max >= 0")
        self.modes = modes
        self.n_max = n_max
        top = n_max + modes + 1
        self._binom = comb(np.arange(top)[:, None], np.arange(modes + 1)[None, :], exact=False)
        self._binom = np.rint(self._binom).astype(np.int64)
        states = [occ for n in range(n_max + 1) for occ in _compositions(n, modes)]
        self.states = np.asarray(states, dtype=np.int64).reshape(-1, modes)
        self.totals = self.states.sum(axis=1)
        self.offsets = np.array([self._below(n) for n in range(n_max + 2)])

    def __repr__(self):
        return f"FockBasis(modes={self.modes}, n_max={self.n_max}, dim={self.dim})"

    @property
    def dim(self) -> int:
        return int(comb(self.n_max + self.modes, self.modes, exact=True))

    def _C(self, a, b):
        a = np.asarray(a)
        b = np.asarray(b)
        ok = (a >= 0) & (b >= 0) & (a >= b)
        return np.where(ok, self._binom[np.clip(a, 0, None), np.clip(b, 0, None)], 0)

    def _below(self, n: int) -> int:
        """Number of basis states with total < n."""
        return 0 if n <= 0 else int(comb(n - 1 + self.modes, self.modes, exact=True))

    def rank(self, occ) -> np.ndarray:
        """Index of occupation vector(s), vectorized over leading axes."""
        occ = np.asarray(occ, dtype=np.int64)
        flat = occ.reshape(-1, self.modes)
        n = flat.sum(axis=1)
        idx = np.zeros(len(flat), dtype=np.int64)
        n_arr = np.arange(self.n_max + 2)
        below = np.array([self._below(k) for k in n_arr])
        idx += below[np.clip(n, 0, self.n_max + 1)]
        rem = n.copy()
        for i in range(self.modes - 1):
            r = self.modes - 1 - i
            o = flat[:, i]
            idx += self._C(rem + r, r) - self._C(rem - o + r, r)
            rem = rem - o
        return idx.reshape(occ.shape[:-1])

    def unrank(self, i) -> np.ndarray:
        return self.states[i]

    def sector(self, n: int) -> slice:
        return slice(self.offsets[n], self.offsets[n + 1])

    def interior(self, upto: int) -> np.ndarray:
        """Boolean mask of states with total <= upto."""
        return self.totals <= upto

    def vacuum(self) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[0] = 1.0
        return v

    @cached_property
    def _annihilators(self) -> list[sp.csr_matrix]:
        ops = []
        for k in range(self.modes):
            src = np.nonzero(self.states[:, k] > 0)[0]
            tgt_occ = self.states[src].copy()
            tgt_occ[:, k] -= 1
            tgt = self.rank(tgt_occ)
            vals = np.sqrt(self.states[src, k].astype(float))
            ops.append(sp.csr_matrix((vals, (tgt, src)), shape=(self.dim, self.dim)))
        return ops

    def ladder(self, k: int, kind: str = "annihilate") -> sp.csr_matrix:
        if not 0 <= k < self.modes:
            raise IndexError(f"mode {k} out of range")
        a = self._annihilators[k]
        if kind == "annihilate":
            return a
        if kind == "create":
            return a.T.tocsr()
        raise ValueError(f"unknown ladder kind {kind!r}")

    def number_operator(self) -> sp.csr_matrix:
        return sp.diags(self.totals.astype(float), format="csr")

    def number_cutoff(self, M: int) -> sp.csr_matrix:
        """Projector chi(N_b <= M)."""
        if M < 0:
            raise ValueError("cutoff must be nonnegative")
        return sp.diags((self.totals <= M).astype(float), format="csr")

    def hopping(self, matrix) -> sp.csr_matrix:
        """Second quantization sum_jk A_jk a*_j a_k of a one-body matrix."""
        A = np.asarray(matrix)
        out = sp.diags(self.states @ np.diag(A), format="csr").astype(A.dtype)
        rows, cols, vals = [], [], []
        for j in range(self.modes):
            for k in range(self.modes):
                if j == k or A[j, k] == 0:
                    continue
                src = np.nonzero(self.states[:, k] > 0)[0]
                occ = self.states[src].copy()
                nk = occ[:, k].astype(float)
                occ[:, k] -= 1
                nj = occ[:, j].astype(float)
                occ[:, j] += 1
                rows.append(self.rank(occ))
                cols.append(src)
                vals.append(A[j, k] * np.sqrt(nk * (nj + 1)))
        if rows:
            off = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                shape=(self.dim, self.dim))
            out = out + off
        return out.tocsr()

    def field_generator(self, f, cell: float) -> sp.csr_matrix:
        """a*(f) - a(f) for a lattice field f (anti-Hermitian)."""
        f = np.asarray(f, dtype=complex)
        s = np.sqrt(cell)
        G = sp.csr_matrix((self.dim, self.dim), dtype=complex)
        for k in range(self.modes):
            if f[k] == 0:
                continue
            a = self._annihilators[k]
            G = G + s * (f[k] * a.T - np.conj(f[k]) * a)
        return G.tocsr()


# --- coherent states and displacements ---------------------------------------

def tail_ok(N: float, norm_sq: float, n_max: int) -> bool:
    mean = N * norm_sq
    return mean + 6.0 * np.sqrt(mean) <= n_max


def poisson_tail(mean: float, n_max: int, moment: int = 0) -> float:
    """sum_{n > n_max} n^moment e^{-mean} mean^n / n!"""
    from scipy.stats import poisson

    if mean == 0:
        return 0.0
    n = np.arange(n_max + 1, n_max + 200)
    return float(np.sum(n.astype(float) ** moment * poisson.pmf(n, mean)))


def coherent_state(basis: FockBasis, phi, N: float, cell: float, method: str = "direct",
                   check_tail: bool = True) -> np.ndarray:
    """W(sqrt(N) phi) Omega on the truncated space (not renormalized).

    ``direct`` builds exp(-N|phi|^2/2) sum_n (N^{n/2}/sqrt(n!)) phi^{(x) n}
    component by component; ``expm`` exponentiates the truncated generator.
    """
    phi = np.asarray(phi, dtype=complex)
    norm_sq = float(cell * np.sum(np.abs(phi) ** 2))
    if norm_sq > 1 + 1e-12:
        raise ValueError("coherent state needs ||phi|| <= 1")
    if check_tail and not tail_ok(N, norm_sq, basis.n_max):
        raise ValueError(
            f"truncation n_max={basis.n_max} too small for mean {N * norm_sq:.3g} "
            f"(need mean + 6 sqrt(mean) <= n_max)")
    if method == "direct":
        # amplitude of |n_1..n_K> is e^{-|alpha|^2/2} prod_k alpha_k^{n_k}/sqrt(n_k!)
        alpha = np.sqrt(N * cell) * phi
        from scipy.special import gammaln

        occ = basis.states
        logfact = 0.5 * gammaln(occ + 1.0).sum(axis=1)
        with np.errstate(divide="ignore"):
            logs = np.log(np.abs(alpha))
        logabs = np.where(occ > 0, occ * np.where(np.isfinite(logs), logs, 0.0)[None, :], 0.0).sum(axis=1)
        phase = np.exp(1j * (occ @ np.angle(alpha)))
        amp = np.exp(logabs - logfact - 0.5 * N * norm_sq) * phase
        zero_modes = np.abs(alpha) == 0
        if zero_modes.any():
            amp[(occ[:, zero_modes] > 0).any(axis=1)] = 0.0
        return amp
    if method == "expm":
        return displace(basis, np.sqrt(N) * phi, cell, basis.vacuum())
    raise ValueError(f"unknown coherent-state method {method!r}")


def displacement_matrix(basis: FockBasis, f, cell: float) -> np.ndarray:
    """Dense W(f) = exp(a*(f) - a(f)) on the truncated space."""
    if basis.dim > DENSE_EXPM_LIMIT:
        raise ValueError(f"dense displacement refused for dim {basis.dim}")
    return sla.expm(basis.field_generator(f, cell).toarray())


def displace(basis: FockBasis, f, cell: float, vec, adjoint: bool = False) -> np.ndarray:
    """Apply W(f) (or W(f)*) to vector(s) whose first axis is the Fock index."""
    G = basis.field_generator(f, cell)
    if adjoint:
        G = -G
    vec = np.asarray(vec, dtype=complex)
    if basis.dim <= DENSE_EXPM_LIMIT:
        return sla.expm(G.toarray()) @ vec
    return spla.expm_multiply(G.tocsc(), vec)


def weyl_conjugate_check(basis: FockBasis, phi, N: float, cell: float, k: int, interior: int,
                         probes: int = 8, seed: int = 0) -> float:
    """max over random probes of ||P (W* a_k W - a_k - sqrt(N h^d) phi_k) P v|| / ||v||.

    P projects onto total number <= ``interior``.  W is applied as an action,
    so large truncations do not need a dense matrix.
    """
    phi = np.asarray(phi, dtype=complex)
    if N == 0 or not np.any(phi):
        return 0.0
    f = np.sqrt(N) * phi
    a = basis.ladder(k)
    shift = np.sqrt(N * cell) * phi[k]
    mask = basis.interior(interior)
    rng = np.random.default_rng(seed)
    V = np.zeros((basis.dim, probes), dtype=complex)
    V[mask] = rng.normal(size=(mask.sum(), probes)) + 1j * rng.normal(size=(mask.sum(), probes))
    R = displace(basis, f, cell, a @ displace(basis, f, cell, V), adjoint=True) - a @ V - shift * V
    R[~mask] = 0.0
    return float(np.max(np.linalg.norm(R, axis=0) / np.linalg.norm(V, axis=0)))

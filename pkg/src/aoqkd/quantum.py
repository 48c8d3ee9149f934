"""Gell-Mann operator bases, mutually unbiased bases and MUB process tomography."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

HERMITIAN_TOL = 1e-10


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    return all(n % k for k in range(2, int(n ** 0.5) + 1))


@lru_cache(maxsize=16)
def gell_mann(d: int) -> np.ndarray:
    """(d*d, d, d) trace-orthonormal Hermitian generators, sigma_0 = I/sqrt(d).

    Order: identity, then (symmetric, antisymmetric) for each pair j < k,
    then the d-1 diagonal generators. With this normalization
    sum_m sigma_m^dag sigma_m = d * I.
    """
    if d < 2:
        raise ValueError("dimension must be >= 2")
    out = [np.eye(d, dtype=complex) / np.sqrt(d)]
    for j in range(d):
        for k in range(j + 1, d):
            s = np.zeros((d, d), dtype=complex)
            s[j, k] = s[k, j] = 1 / np.sqrt(2)
            a = np.zeros((d, d), dtype=complex)
            a[j, k], a[k, j] = -1j / np.sqrt(2), 1j / np.sqrt(2)
            out += [s, a]
    for l in range(1, d):
        g = np.zeros((d, d), dtype=complex)
        g[np.arange(l), np.arange(l)] = 1
        g[l, l] = -l
        out.append(g / np.sqrt(l * (l + 1)))
    basis = np.stack(out)
    basis.setflags(write=False)
    return basis


@dataclass(frozen=True, eq=False)
class MubSet:
    """``bases[a]`` is a (d, d) array whose column t is |psi_t^a>."""

    d: int
    bases: np.ndarray

    @property
    def n_bases(self) -> int:
        return self.bases.shape[0]

    def state(self, alpha, t) -> np.ndarray:
        return self.bases[alpha][:, t]

    def projector(self, alpha, t) -> np.ndarray:
        v = self.state(alpha, t)
        return np.outer(v, v.conj())

    def overlaps(self) -> np.ndarray:
        """|<psi_m^a|psi_n^b>|^2 indexed [a, b, m, n]."""
        g = np.einsum("aim,bin->abmn", self.bases.conj(), self.bases)
        return np.abs(g) ** 2

    def max_deviation(self) -> float:
        """Largest departure from the unbiasedness relations."""
        o = self.overlaps()
        k = self.n_bases
        target = np.full_like(o, 1 / self.d)
        for a in range(k):
            target[a, a] = np.eye(self.d)
        return float(np.max(np.abs(o - target)))


def build_mubs(d: int) -> MubSet:
    """Complete MUB set: canonical basis plus the d quadratic-phase bases for prime d.

    d = 4 uses the explicit two-qubit construction. For d = 2 the
    quadratic phase is degenerate, so the third basis is the sigma_y
    eigenbasis.
    """
    if d == 4:
        return build_mubs_dim4()
    if not is_prime(d):
        raise ValueError(f"complete MUB sets are built for prime d or d=4, got {d}")
    omega = np.exp(2j * np.pi / d)
    j = np.arange(d)
    s = np.array([sum(range(k, d)) for k in j])
    bases = [np.eye(d, dtype=complex)]
    if d == 2:
        bases.append(np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2))
        bases.append(np.array([[1, 1], [1j, -1j]], dtype=complex) / np.sqrt(2))
    else:
        for alpha in range(d):
            cols = [omega ** ((t * (d - j)) % d) * omega ** ((-alpha * s) % d) for t in range(d)]
            bases.append(np.stack(cols, axis=1) / np.sqrt(d))
    return MubSet(d, np.stack(bases))


def build_mubs_dim4() -> MubSet:
    h = 0.5
    i = 0.5j
    sets = [
        np.eye(4),
        [[h, h, h, h], [h, -h, -h, h], [h, h, -h, -h], [h, -h, h, -h]],
        [[h, i, i, -h], [h, -i, -i, -h], [h, i, -i, h], [h, -i, i, h]],
        [[h, h, -i, i], [h, -h, i, i], [h, h, i, -i], [h, -h, -i, -i]],
        [[h, -i, h, i], [h, i, -h, i], [h, i, h, -i], [h, -i, -h, -i]],
    ]
    # listed as rows; store vectors as columns
    return MubSet(4, np.stack([np.array(b, dtype=complex).T for b in sets]))


# -- process matrices ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProcessMatrix:
    """chi over ``gell_mann(d)`` with unit trace; E(rho) = d sum chi_mn s_m rho s_n^dag."""

    chi: np.ndarray

    def __post_init__(self):
        c = np.array(self.chi, dtype=complex)
        n = c.shape[0]
        d = int(round(np.sqrt(n)))
        if c.shape != (n, n) or d * d != n:
            raise ValueError(f"chi must be (d^2, d^2), got {c.shape}")
        if np.max(np.abs(c - c.conj().T)) > HERMITIAN_TOL * max(1.0, np.abs(c).max()):
            raise ValueError("chi is not Hermitian")
        c = (c + c.conj().T) / 2
        c.setflags(write=False)
        object.__setattr__(self, "chi", c)

    @property
    def d(self) -> int:
        return int(round(np.sqrt(self.chi.shape[0])))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.chi)

    def is_physical(self, tol=1e-10) -> bool:
        return bool(self.eigenvalues().min() >= -tol)

    def apply(self, rho) -> np.ndarray:
        s = gell_mann(self.d)
        return self.d * np.einsum("mn,mij,jk,nlk->il", self.chi, s, rho, s.conj())

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "col", "re", "im"])
            for (r, c), v in np.ndenumerate(self.chi):
                w.writerow([r, c, repr(float(v.real)), repr(float(v.imag))])

    def to_json(self, path, **meta):
        doc = {
            "d": self.d,
            "basis": "gell-mann, trace-orthonormal, sigma_0 = I/sqrt(d)",
            "normalization": "trace 1; E(rho) = d * sum chi_mn s_m rho s_n^dag",
            "re": self.chi.real.tolist(),
            "im": self.chi.imag.tolist(),
            **meta,
        }
        with open(path, "w", newline="\n") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")


def ideal_chi(d: int) -> ProcessMatrix:
    c = np.zeros((d * d, d * d), dtype=complex)
    c[0, 0] = 1
    return ProcessMatrix(c)


def depolarizing_chi(d: int) -> ProcessMatrix:
    return ProcessMatrix(np.eye(d * d, dtype=complex) / d ** 2)


def chi_from_unitary(u) -> ProcessMatrix:
    u = np.asarray(u, dtype=complex)
    d = u.shape[0]
    c = np.einsum("mij,ij->m", gell_mann(d).conj(), u)  # Tr(s_m^dag U)
    return ProcessMatrix(np.outer(c, c.conj()) / d)


def _vec_basis(d):
    # column m is vec(s_m) in column-stacking order, so J = d V chi V^dag
    return np.stack([s.T.ravel() for s in gell_mann(d)], axis=1)


def choi(p: ProcessMatrix) -> np.ndarray:
    v = _vec_basis(p.d)
    return p.d * v @ p.chi @ v.conj().T


def from_choi(j: np.ndarray) -> ProcessMatrix:
    d = int(round(np.sqrt(j.shape[0])))
    v = _vec_basis(d)
    c = v.conj().T @ j @ v / d
    return ProcessMatrix((c + c.conj().T) / 2)


def _psd_sqrt(m):
    w, v = np.linalg.eigh((m + m.conj().T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T


def process_fidelity(chi_exp: ProcessMatrix, chi_th: ProcessMatrix) -> float:
    """Uhlmann fidelity [Tr sqrt(sqrt(a) b sqrt(a))]^2 between unit-trace process matrices."""
    for p in (chi_exp, chi_th):
        if not p.is_physical():
            raise ValueError("process fidelity needs positive semidefinite chi; project it first")
    if chi_exp.d != chi_th.d:
        raise ValueError("process matrices have different dimensions")
    a = _psd_sqrt(chi_exp.chi)
    inner = a @ chi_th.chi @ a
    w = np.linalg.eigvalsh((inner + inner.conj().T) / 2)
    f = float(np.sum(np.sqrt(np.clip(w, 0, None))) ** 2)
    return min(f, 1.0)


# -- tomography ------------------------------------------------------------

@lru_cache(maxsize=8)
def _design(d: int):
    """Rows of p = A vec(chi), ordered (alpha, m, beta, n)."""
    mubs = build_mubs(d)
    s = gell_mann(d)
    b = mubs.bases
    # u[alpha, m, beta, n, a] = <psi_m^alpha| s_a |psi_n^beta>
    u = np.einsum("xim,aij,yjn->xmyna", b.conj(), s, b)
    a = d * np.einsum("...a,...b->...ab", u, u.conj())
    k = mubs.n_bases
    a = a.reshape(k * d * k * d, d ** 4)
    a.setflags(write=False)
    return a


def probabilities_from_chi(p: ProcessMatrix) -> np.ndarray:
    """Analytic table p[alpha, m, beta, n] = Tr(Pi_m^alpha E(Pi_n^beta))."""
    d = p.d
    k = d + 1
    return (_design(d) @ p.chi.ravel()).real.reshape(k, d, k, d)


def probability_table(transfers, mubs: MubSet) -> np.ndarray:
    """Table p[alpha, m, beta, n] from logical-mode transfer matrices.

    With several transfer matrices the detected powers are summed before
    normalizing, as a long acquisition over a changing channel would.
    """
    transfers = np.asarray(transfers, dtype=complex)
    if transfers.ndim == 2:
        transfers = transfers[None]
    b = mubs.bases
    amp = np.einsum("xim,tij,yjn->txmyn", b.conj(), transfers, b)
    power = np.sum(np.abs(amp) ** 2, axis=0)
    total = power.sum(axis=1, keepdims=True)
    if np.any(total <= 0):
        raise ValueError("an input state produced no detected power")
    return power / total


def reconstruct_chi(table, d: int, project=True) -> ProcessMatrix:
    """Least-squares inversion of the prepare/measure table.

    With ``project`` the estimate is Hermitized, clipped to the positive
    cone, made trace preserving and scaled to unit trace.
    """
    table = np.asarray(table, dtype=float)
    k = d + 1
    if table.shape != (k, d, k, d):
        raise ValueError(f"need a complete ({k}, {d}, {k}, {d}) table, got {table.shape}")
    a = _design(d)
    x, _, rank, _ = np.linalg.lstsq(a, table.ravel().astype(complex), rcond=None)
    if rank < d ** 4:
        raise np.linalg.LinAlgError(f"tomography system is rank deficient ({rank} < {d ** 4})")
    c = x.reshape(d * d, d * d)
    c = (c + c.conj().T) / 2
    if not project:
        return ProcessMatrix(c)
    w, v = np.linalg.eigh(c)
    c = (v * np.clip(w, 0, None)) @ v.conj().T
    return trace_preserving(ProcessMatrix(c / np.trace(c).real))


def trace_preserving(p: ProcessMatrix) -> ProcessMatrix:
    """Rescale the Choi matrix so the input marginal is the identity; keeps positivity."""
    d = p.d
    j = choi(p)
    marg = np.einsum("ijkj->ik", j.reshape(d, d, d, d))
    w, v = np.linalg.eigh((marg + marg.conj().T) / 2)
    if w.min() <= 1e-12 * max(w.max(), 1e-300):
        return p
    k = np.kron((v / np.sqrt(w)) @ v.conj().T, np.eye(d))
    jp = k @ j @ k.conj().T
    c = from_choi(jp).chi
    return ProcessMatrix(c / np.trace(c).real)


def write_table_csv(path, table):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha", "m", "beta", "n", "p"])
        for (a, m, b, n), v in np.ndenumerate(table):
            w.writerow([a, m, b, n, repr(float(v))])

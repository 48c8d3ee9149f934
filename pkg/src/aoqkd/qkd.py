"""Crosstalk matrices, dit error rates and asymptotic key rates for d-dimensional BB84."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.stats import unitary_group

ROW_TOL = 1e-9


def shannon_term(x: float, d: int) -> float:
    """h(x) = -x log2(x/(d-1)) - (1-x) log2(1-x), with h(0) = 0."""
    if x == 0:
        return 0.0
    if x == 1:
        return -math.log2(1 / (d - 1))
    return -x * (math.log2(x) - math.log2(d - 1)) - (1 - x) * math.log2(1 - x)  # x/(d-1) can underflow


def key_rate(q: float, d: int) -> float:
    """Secret bits per sifted photon, log2(d) - 2 h(Q); negative means no key."""
    if d < 2:
        raise ValueError("dimension must be >= 2")
    if not 0 <= q < 1:
        raise ValueError(f"QDER must lie in [0, 1), got {q}")
    return math.log2(d) - 2 * shannon_term(q, d)


def qder_threshold(d: int, tol=1e-9) -> float:
    """QDER at which the key rate reaches zero (root on (0, (d-1)/d))."""
    if d < 2:
        raise ValueError("dimension must be >= 2")
    return brentq(lambda q: key_rate(q, d), 1e-12, (d - 1) / d, xtol=tol)


@dataclass(frozen=True, eq=False)
class CrosstalkMatrix:
    """Row i is Alice's input, column j Bob's projection; rows sum to one."""

    c: np.ndarray
    basis: str
    trials: int
    stderr: np.ndarray
    qder_samples: np.ndarray  # per-trial QDER

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("crosstalk matrix must be square")
        if np.any(c < -ROW_TOL) or np.any(c > 1 + ROW_TOL):
            raise ValueError("crosstalk entries must lie in [0, 1]")
        if np.max(np.abs(c.sum(axis=1) - 1)) > ROW_TOL:
            raise ValueError("crosstalk rows must sum to one")

    @property
    def d(self) -> int:
        return self.c.shape[0]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row"] + [f"c{j}" for j in range(self.d)])
            for i, row in enumerate(self.c):
                w.writerow([i] + [repr(float(v)) for v in row])


def normalized_rows(transfer: np.ndarray, coefficients: np.ndarray) -> np.ndarray:
    """Row-normalized |<b_j|T|b_i>|^2 for basis vectors b (columns of ``coefficients``)."""
    amp = coefficients.conj().T @ transfer @ coefficients  # amp[j, i]
    p = np.abs(amp.T) ** 2
    total = p.sum(axis=1, keepdims=True)
    if np.any(total <= 0):
        raise ValueError("an input mode delivered no power to any projection")
    return p / total


def crosstalk(transfers, coefficients, basis="logical") -> CrosstalkMatrix:
    """Average of per-trial row-normalized matrices; ``transfers`` is (trials, d, d)."""
    transfers = np.asarray(transfers, dtype=complex)
    if transfers.ndim == 2:
        transfers = transfers[None]
    if len(transfers) < 1:
        raise ValueError("need at least one trial")
    per = np.stack([normalized_rows(t, coefficients) for t in transfers])
    n = len(per)
    se = per.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(per.shape[1:])
    q = 1 - np.trace(per, axis1=1, axis2=2) / per.shape[1]
    return CrosstalkMatrix(per.mean(axis=0), basis, n, se, q)


def qder(c) -> float:
    """1 - Tr(C)/d."""
    m = c.c if isinstance(c, CrosstalkMatrix) else np.asarray(c, dtype=float)
    return float(1 - np.trace(m) / m.shape[0])


def haar_transfers(d: int, trials: int, rng) -> np.ndarray:
    """A Haar-random unitary per trial: the fully scrambling channel."""
    return np.stack([unitary_group.rvs(d, random_state=rng) for _ in range(trials)])


@dataclass(frozen=True)
class BasisResult:
    basis: str
    qder: float
    stderr: float
    key_rate: float
    secure: bool


@dataclass(frozen=True)
class QkdReport:
    d: int
    ao: bool
    threshold: float
    bases: tuple  # BasisResult per basis

    @property
    def qder(self) -> float:
        return float(np.mean([b.qder for b in self.bases]))

    @property
    def key_rate(self) -> float:
        return key_rate(min(self.qder, 1 - 1e-15), self.d)

    @property
    def secure(self) -> bool:
        """Every basis mean below the threshold."""
        return all(b.secure for b in self.bases)

    @property
    def average_secure(self) -> bool:
        return self.qder < self.threshold


def report(d: int, ao: bool, matrices: dict) -> QkdReport:
    """``matrices`` maps basis name to its CrosstalkMatrix."""
    thr = qder_threshold(d)
    out = []
    for name, c in matrices.items():
        q = float(np.mean(c.qder_samples))
        se = float(np.std(c.qder_samples, ddof=1) / np.sqrt(len(c.qder_samples))) if c.trials > 1 else 0.0
        out.append(BasisResult(name, q, se, key_rate(min(q, 1 - 1e-15), d), q < thr))
    return QkdReport(d, ao, thr, tuple(out))

"""Orthonormal Zernike polynomials in single-index ANSI order (piston is j=1)."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np

JMAX = 66  # through radial order 10

_NAMES = {
    1: "Piston", 2: "Tip Y", 3: "Tip X", 4: "Astigmatism +45d", 5: "Defocus",
    6: "Astigmatism 0/90d", 7: "Trefoil Y", 8: "Coma X", 9: "Coma Y", 10: "Trefoil X",
}


def nm_from_index(j: int) -> tuple[int, int]:
    """ANSI single index (1-based) -> (n, m)."""
    if not 1 <= j <= JMAX:
        raise ValueError(f"Zernike index must be in [1, {JMAX}], got {j}")
    j0 = j - 1
    n = int((np.sqrt(8 * j0 + 1) - 1) // 2)
    m = 2 * j0 - n * (n + 2)
    return n, m


def index_from_nm(n: int, m: int) -> int:
    return (n * (n + 2) + m) // 2 + 1


def zernike_name(j: int) -> str:
    n, m = nm_from_index(j)
    return _NAMES.get(j, f"Z(n={n},m={m})")


def normalization(j: int) -> float:
    n, m = nm_from_index(j)
    return np.sqrt(n + 1) if m == 0 else np.sqrt(2 * (n + 1))


def _radial(n: int, m: int, rho):
    m = abs(m)
    out = np.zeros_like(rho, dtype=float)
    for k in range((n - m) // 2 + 1):
        c = (-1) ** k * factorial(n - k) / (
            factorial(k) * factorial((n + m) // 2 - k) * factorial((n - m) // 2 - k))
        out = out + c * rho ** (n - 2 * k)
    return out


def zernike_eval(j: int, rho, phi):
    """Normalized Z_j(rho, phi); unit disk mean of Z_j^2 is one."""
    n, m = nm_from_index(j)
    rho = np.asarray(rho, dtype=float)
    phi = np.asarray(phi, dtype=float)
    r = _radial(n, m, rho)
    if m > 0:
        ang = np.cos(m * phi)
    elif m < 0:
        ang = np.sin(-m * phi)
    else:
        ang = np.ones_like(phi)
    return normalization(j) * r * ang


@dataclass(frozen=True, eq=False)
class ZernikeSpectrum:
    coeffs: np.ndarray  # radians, coeffs[0] is piston (j=1)
    radius: float

    @property
    def jmax(self) -> int:
        return len(self.coeffs)

    def __getitem__(self, j):
        return self.coeffs[j - 1]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "name", "coefficient"])
            for j, a in enumerate(self.coeffs, start=1):
                w.writerow([j, zernike_name(j), repr(float(a))])


@lru_cache(maxsize=8)
def _design(grid, jmax):
    """Zernike values on the pupil pixels, shape (npix, jmax), plus the pupil mask."""
    rho, phi = grid.polar()
    radius = grid.aperture / 2
    mask = grid.pupil()
    r = rho[mask] / radius
    p = phi[mask]
    a = np.stack([zernike_eval(j, r, p) for j in range(1, jmax + 1)], axis=1)
    q, rr = np.linalg.qr(a)
    return mask, a, q, rr


def zernike_map(j: int, grid) -> np.ndarray:
    """Z_j sampled over the whole grid, scaled to the grid's pupil radius."""
    rho, phi = grid.polar()
    return zernike_eval(j, rho / (grid.aperture / 2), phi)


@lru_cache(maxsize=4)
def zernike_stack(grid, jmax: int) -> np.ndarray:
    """(jmax, n, n) maps of Z_1..Z_jmax; read-only."""
    s = np.stack([zernike_map(j, grid) for j in range(1, jmax + 1)])
    s.setflags(write=False)
    return s


def reconstruct(spec: ZernikeSpectrum, grid) -> np.ndarray:
    rho, phi = grid.polar()
    r = rho / spec.radius
    out = np.zeros((grid.n, grid.n))
    for j, a in enumerate(spec.coeffs, start=1):
        if a != 0:
            out += a * zernike_eval(j, r, phi)
    return out


def decompose(phase, grid=None, jmax: int = 10) -> ZernikeSpectrum:
    """Least-squares projection of a phase map onto Z_1..Z_jmax over the pupil.

    ``phase`` is a PhaseScreen or a 2D array (then ``grid`` is required).
    """
    if not 1 <= jmax <= JMAX:
        raise ValueError(f"jmax must be in [1, {JMAX}], got {jmax}")
    if grid is None:
        grid = phase.grid
        phase = phase.phase
    mask, _, q, rr = _design(grid, jmax)
    coeffs = np.linalg.solve(rr, q.T @ np.asarray(phase)[mask])
    return ZernikeSpectrum(coeffs, grid.aperture / 2)

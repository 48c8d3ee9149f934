"""Kolmogorov phase screens, modal synthesis, Fried estimation and frozen flow."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .field import GridSpec, write_container, read_container
from .zernike import JMAX, zernike_stack

GREENWOOD_CONSTANT = 0.43
# Kolmogorov phase PSD coefficient for spatial frequency in cycles per meter
KOLMOGOROV_PSD = 0.023


class UnresolvedTurbulenceError(ValueError):
    pass


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True, eq=False)
class PhaseScreen:
    phase: np.ndarray  # radians
    grid: GridSpec
    r0: float
    method: str

    def __post_init__(self):
        p = np.array(self.phase, dtype=float)
        if p.shape != (self.grid.n, self.grid.n):
            raise ValueError(f"phase shape {p.shape} does not match grid n={self.grid.n}")
        if not np.all(np.isfinite(p)):
            raise ValueError("phase screen must be finite")
        p.setflags(write=False)
        object.__setattr__(self, "phase", p)

    @classmethod
    def flat(cls, grid):
        return cls(np.zeros((grid.n, grid.n)), grid, math.inf, "flat")

    def scaled(self, factor) -> "PhaseScreen":
        return PhaseScreen(self.phase * factor, self.grid, self.r0 * factor ** (-6 / 5), self.method)

    def save(self, path):
        write_container(path, self.phase, self.grid, self.r0)

    @classmethod
    def load(cls, path, aperture=None, method="loaded"):
        data, n, pitch, wavelength, r0 = read_container(path)
        if np.iscomplexobj(data):
            raise ValueError(f"{path} holds a complex payload, not a screen")
        return cls(data, GridSpec(n, pitch, wavelength, aperture), r0, method)


def remove_piston(phase, grid):
    mask = grid.pupil()
    return phase - phase[mask].mean()


def kolmogorov_screen(r0, shape, pitch, rng, subharmonics=10):
    """Raw FFT screen of ``shape`` (ny, nx) with low-frequency subharmonic compensation."""
    rng = _rng(rng)
    ny, nx = shape
    dfx, dfy = 1 / (nx * pitch), 1 / (ny * pitch)
    fx = np.fft.fftfreq(nx, pitch)
    fy = np.fft.fftfreq(ny, pitch)
    f2 = fx[None, :] ** 2 + fy[:, None] ** 2
    f2[0, 0] = 1.0
    psd = KOLMOGOROV_PSD * r0 ** (-5 / 3) * f2 ** (-11 / 6)
    psd[0, 0] = 0.0
    cn = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(psd * dfx * dfy)
    hi = np.fft.ifft2(cn).real * (nx * ny)

    x = np.arange(nx) * pitch
    y = np.arange(ny) * pitch
    k = np.array([-1, 0, 1])
    lo = np.zeros(shape)
    for p in range(1, subharmonics + 1):
        sfx, sfy = dfx / 3 ** p, dfy / 3 ** p
        fxa, fyb = k * sfx, k * sfy
        s2 = fxa[None, :] ** 2 + fyb[:, None] ** 2
        s2[1, 1] = 1.0
        amp = np.sqrt(KOLMOGOROV_PSD * r0 ** (-5 / 3) * s2 ** (-11 / 6) * sfx * sfy)
        amp[1, 1] = 0.0
        c = (rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))) * amp  # c[b, a]
        ey = np.exp(2j * np.pi * np.outer(y, fyb))
        ex = np.exp(2j * np.pi * np.outer(fxa, x))
        lo += (ey @ c @ ex).real
    return hi + lo - lo.mean()


def gen_screen_fft(r0: float, grid: GridSpec, seed=None, subharmonics=10) -> PhaseScreen:
    """Kolmogorov screen with Fried parameter ``r0``, piston removed over the pupil."""
    if not r0 > 0:
        raise ValueError("r0 must be positive")
    if r0 < 2 * grid.pitch:
        raise UnresolvedTurbulenceError(
            f"r0={r0:.3g} m is below two pixels ({2 * grid.pitch:.3g} m) and cannot be resolved")
    if math.isinf(r0):
        return PhaseScreen.flat(grid)
    phase = kolmogorov_screen(r0, (grid.n, grid.n), grid.pitch, _rng(seed), subharmonics)
    return PhaseScreen(remove_piston(phase, grid), grid, r0, "fft-kolmogorov")


def gen_screen_zernike(sigma, grid: GridSpec, seed=None) -> PhaseScreen:
    """Modal screen sum_j a_j Z_j with a_j ~ N(0, sigma[j-1]^2) over the pupil."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise ValueError("sigma entries must be non-negative")
    if not 1 <= len(sigma) <= JMAX:
        raise ValueError(f"need between 1 and {JMAX} sigma entries, got {len(sigma)}")
    coeffs = _rng(seed).standard_normal(len(sigma)) * sigma
    phase = np.tensordot(coeffs, zernike_stack(grid, len(sigma)), axes=1)
    return PhaseScreen(remove_piston(phase, grid), grid, math.nan, "zernike-synthesis")


def structure_function(phase, max_lag):
    """Mean squared phase difference at integer lags 1..max_lag along both axes."""
    out = np.empty(max_lag)
    for k in range(1, max_lag + 1):
        dx = phase[:, k:] - phase[:, :-k]
        dy = phase[k:, :] - phase[:-k, :]
        out[k - 1] = 0.5 * (np.mean(dx ** 2) + np.mean(dy ** 2))
    return out


def kolmogorov_structure(r, r0):
    return 6.88 * (np.asarray(r) / r0) ** (5 / 3)


def estimate_fried(centroids, length: float, wavelength: float) -> float:
    """r0 = 0.98 lambda / beta with beta = mean centroid displacement / length.

    ``centroids`` holds displacements from the turbulence-free position, either
    as magnitudes (N,) or vectors (N, 2). Returns ``inf`` when the beam never
    moves.
    """
    c = np.asarray(centroids, dtype=float)
    s = np.hypot(c[:, 0], c[:, 1]) if c.ndim == 2 else np.abs(c)
    if len(s) < 100:
        raise ValueError(f"need at least 100 centroid samples, got {len(s)}")
    if not length > 0:
        raise ValueError("length must be positive")
    s_bar = s.mean()
    if s_bar == 0:
        return math.inf
    beta = s_bar / length  # small-angle form
    return 0.98 * wavelength / beta


def greenwood_frequency(wind_speed, r0):
    return GREENWOOD_CONSTANT * abs(wind_speed) / r0


def wind_for_greenwood(f_g, r0):
    return f_g * r0 / GREENWOOD_CONSTANT


class TurbulenceSeries:
    """Frozen-flow screen sequence.

    A master screen ``length`` grids long translates along +x by
    ``wind_speed * dt`` per frame (linear interpolation for sub-pixel shifts).
    When the window runs off the end a fresh master is synthesized from the
    next seed in the sequence.
    """

    def __init__(self, r0, grid, wind_speed, dt, seed=0, length=4, subharmonics=10):
        if not dt > 0:
            raise ValueError("frame interval must be positive")
        self.r0 = r0
        self.grid = grid
        self.wind_speed = float(wind_speed)
        self.dt = float(dt)
        self.length = length
        self.subharmonics = subharmonics
        self._seed = np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed
        self._masters = 0
        self._offset = 0.0
        self.frame = 0
        self._master = self._new_master()

    @property
    def greenwood(self) -> float:
        return greenwood_frequency(self.wind_speed, self.r0)

    @property
    def shift_per_frame(self) -> float:
        """Translation per frame in pixels."""
        return abs(self.wind_speed) * self.dt / self.grid.pitch

    def _new_master(self):
        child = np.random.SeedSequence(self._seed.entropy, spawn_key=self._seed.spawn_key + (self._masters,))
        self._masters += 1
        n = self.grid.n
        return kolmogorov_screen(self.r0, (n, self.length * n + 1), self.grid.pitch,
                                 np.random.default_rng(child), self.subharmonics)

    def _window(self):
        n = self.grid.n
        i = int(np.floor(self._offset))
        f = self._offset - i
        block = self._master[:, i:i + n + 1]
        phase = block[:, :n] if f == 0 else (1 - f) * block[:, :n] + f * block[:, 1:]
        return PhaseScreen(remove_piston(phase, self.grid), self.grid, self.r0, "fft-kolmogorov")

    def advance(self) -> PhaseScreen:
        """Return the current frame, then move the window on by one interval."""
        screen = self._window()
        self.frame += 1
        self._offset += self.shift_per_frame
        if self._offset + self.grid.n + 1 > self._master.shape[1]:
            self._master = self._new_master()
            self._offset = 0.0
        return screen


def advance(series: TurbulenceSeries) -> PhaseScreen:
    return series.advance()

"""Angular-spectrum propagation, thin screens and channel composition."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft as sfft

from .field import ComplexField, GridSpec, GridMismatchError, phasor
from .turbulence import PhaseScreen


class AliasingError(ValueError):
    def __init__(self, z, z_max):
        super().__init__(
            f"propagation distance {z:.4g} m exceeds the angular-spectrum sampling bound; "
            f"max safe z for this field is {z_max:.4g} m")
        self.z = z
        self.z_max = z_max


# Spectral power allowed to sit beyond the band the transfer function samples correctly.
SPECTRAL_TAIL = 1e-3


@lru_cache(maxsize=32)
def _transfer(grid: GridSpec, z: float):
    f = sfft.fftfreq(grid.n, grid.pitch)
    f2 = f[None, :] ** 2 + f[:, None] ** 2
    arg = 1 / grid.wavelength ** 2 - f2
    kz = 2 * np.pi * np.sqrt(np.abs(arg))
    # evanescent components are left untouched so the step stays unitary
    h = np.where(arg > 0, np.exp(1j * kz * z), 1.0)
    h.setflags(write=False)
    return h


def spectral_extent(spectrum: np.ndarray, grid: GridSpec, tail=SPECTRAL_TAIL) -> float:
    """Per-axis frequency |f| enclosing all but ``tail`` of the spectral power."""
    p = np.abs(spectrum) ** 2
    total = p.sum()
    f = np.abs(sfft.fftfreq(grid.n, grid.pitch))
    order = np.argsort(f, kind="stable")
    fmax = 0.0
    for axis_power in (p.sum(axis=0), p.sum(axis=1)):
        cum = np.cumsum(axis_power[order]) / total
        k = min(np.searchsorted(cum, 1 - tail), len(order) - 1)
        fmax = max(fmax, f[order][k])
    return fmax


def max_safe_distance(grid: GridSpec, fmax: float) -> float:
    """Largest z whose transfer-function chirp is Nyquist sampled out to ``fmax``.

    Band-limit condition: fmax <= 1 / (lambda sqrt((2 z / L)^2 + 1)).
    """
    if fmax <= 0:
        return np.inf
    q = 1 / (grid.wavelength * fmax) ** 2 - 1
    return grid.extent / 2 * np.sqrt(max(q, 0.0))


def propagate_free(field: ComplexField, z: float, check=True) -> ComplexField:
    """Exact angular-spectrum propagation by ``z`` meters (negative z back-propagates)."""
    if z == 0:
        return field
    spec = sfft.fft2(field.samples, norm="ortho")
    if check:
        z_max = max_safe_distance(field.grid, spectral_extent(spec, field.grid))
        if abs(z) > z_max:
            raise AliasingError(abs(z), z_max)
    out = sfft.ifft2(spec * _transfer(field.grid, float(z)), norm="ortho")
    return ComplexField(out, field.grid)


def apply_screen(field: ComplexField, screen: PhaseScreen) -> ComplexField:
    if field.grid.n != screen.grid.n or field.grid.pitch != screen.grid.pitch:
        raise GridMismatchError("field and screen grids differ")
    return ComplexField(field.samples * phasor(screen.phase), field.grid)


def far_field(field: ComplexField) -> np.ndarray:
    """Centred far-field amplitude (orthonormal DFT)."""
    return sfft.fftshift(sfft.fft2(sfft.ifftshift(field.samples), norm="ortho"))


@dataclass(frozen=True)
class Free:
    z: float

    def __post_init__(self):
        if self.z < 0:
            raise ValueError("free-space distances must be >= 0")


@dataclass(frozen=True)
class Screen:
    screen: PhaseScreen


@dataclass(frozen=True)
class ChannelSpec:
    """Ordered free-space / screen segments with an optional receiver pupil."""

    segments: tuple = ()
    aperture: float | None = None

    def __add__(self, other: "ChannelSpec") -> "ChannelSpec":
        if self.aperture is not None:
            raise ValueError("cannot append segments after a receiver aperture")
        return ChannelSpec(tuple(self.segments) + tuple(other.segments), other.aperture)

    @property
    def length(self) -> float:
        return sum(s.z for s in self.segments if isinstance(s, Free))


def aperture_mask(grid: GridSpec, diameter: float) -> np.ndarray:
    rho, _ = grid.polar()
    return rho <= diameter / 2


def run_channel(field: ComplexField, spec: ChannelSpec, check=True) -> ComplexField:
    out = field
    for seg in spec.segments:
        if isinstance(seg, Free):
            out = propagate_free(out, seg.z, check=check)
        elif isinstance(seg, Screen):
            out = apply_screen(out, seg.screen)
        else:
            raise TypeError(f"unknown channel segment {seg!r}")
    if spec.aperture is not None:
        out = out.masked(aperture_mask(out.grid, spec.aperture))
    return out

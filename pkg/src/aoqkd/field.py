"""Sampled optical fields and the OAM / ANG mode sets built on them."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import gammaincc


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Square sampling grid centred on pixel ``n // 2``.

    ``aperture`` is the receiver pupil diameter in meters; it defaults to half
    the grid extent.
    """

    n: int = 256
    pitch: float = 12e-3 / 256
    wavelength: float = 633e-9
    aperture: float | None = None

    def __post_init__(self):
        if self.n < 32 or self.n & (self.n - 1):
            raise ValueError(f"grid size must be a power of two >= 32, got {self.n}")
        if not self.pitch > 0 or not self.wavelength > 0:
            raise ValueError("pitch and wavelength must be positive")
        if self.aperture is None:
            object.__setattr__(self, "aperture", self.extent / 2)
        if not 0 < self.aperture <= self.extent:
            raise ValueError("aperture must fit inside the grid")

    @classmethod
    def default(cls, waist=1.0e-3, wavelength=633e-9, n=256):
        # Grid spans 12 waists; the pupil (6 waists) covers half of it.
        return cls(n=n, pitch=12 * waist / n, wavelength=wavelength, aperture=6 * waist)

    @property
    def extent(self) -> float:
        return self.n * self.pitch

    def axis(self) -> np.ndarray:
        return (np.arange(self.n) - self.n // 2) * self.pitch

    def xy(self):
        return _xy(self)

    def polar(self):
        return _polar(self)

    def pupil(self) -> np.ndarray:
        """Boolean hard-edged pupil mask of diameter ``aperture``."""
        return _pupil(self)

    def refined(self, factor=2) -> "GridSpec":
        """Same physical extent sampled ``factor`` times finer."""
        return GridSpec(self.n * factor, self.pitch / factor, self.wavelength, self.aperture)


@lru_cache(maxsize=16)
def _xy(grid: GridSpec):
    a = grid.axis()
    x, y = np.meshgrid(a, a)
    x.setflags(write=False)
    y.setflags(write=False)
    return x, y


@lru_cache(maxsize=16)
def _polar(grid: GridSpec):
    x, y = _xy(grid)
    rho, phi = np.hypot(x, y), np.arctan2(y, x)
    rho.setflags(write=False)
    phi.setflags(write=False)
    return rho, phi


@lru_cache(maxsize=16)
def _pupil(grid: GridSpec):
    rho, _ = _polar(grid)
    mask = rho <= grid.aperture / 2
    mask.setflags(write=False)
    return mask


def check_same_grid(*items):
    grids = {item.grid for item in items}
    if len(grids) != 1:
        raise GridMismatchError(f"grid mismatch: {grids}")


@dataclass(frozen=True, eq=False)
class ComplexField:
    """Complex amplitude sampled on a ``GridSpec``; power is sum |E|^2 pitch^2."""

    samples: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        s = np.array(self.samples, dtype=np.complex128)
        if s.shape != (self.grid.n, self.grid.n):
            raise GridMismatchError(f"samples shape {s.shape} does not match grid n={self.grid.n}")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def power(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2) * self.grid.pitch ** 2)

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.samples) ** 2

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.samples)

    def normalized(self) -> "ComplexField":
        p = self.power
        if not np.isfinite(p) or p <= 0:
            raise ValueError("cannot normalize a field with zero or non-finite power")
        return ComplexField(self.samples / np.sqrt(p), self.grid)

    def phase_fixed(self) -> "ComplexField":
        """Rotate the global phase so the largest-magnitude sample is real positive."""
        k = np.argmax(np.abs(self.samples))
        v = self.samples.flat[k]
        return ComplexField(self.samples * (abs(v) / v), self.grid)

    def scaled(self, c) -> "ComplexField":
        return ComplexField(self.samples * c, self.grid)

    def masked(self, mask) -> "ComplexField":
        return ComplexField(self.samples * mask, self.grid)

    def centroid(self):
        """Intensity centroid (x, y) in meters."""
        x, y = self.grid.xy()
        w = self.intensity
        total = w.sum()
        return float((w * x).sum() / total), float((w * y).sum() / total)


def phasor(phase: np.ndarray) -> np.ndarray:
    """exp(i * phase) for real phase; cos/sin is much cheaper than a complex exp."""
    phase = np.asarray(phase, dtype=float)
    out = np.empty(phase.shape, dtype=complex)
    np.cos(phase, out=out.real)
    np.sin(phase, out=out.imag)
    return out


def superpose(fields, coeffs) -> ComplexField:
    check_same_grid(*fields)
    coeffs = np.asarray(coeffs, dtype=complex)
    stack = np.stack([f.samples for f in fields])
    return ComplexField(np.tensordot(coeffs, stack, axes=1), fields[0].grid)


def overlap(a: ComplexField, b: ComplexField) -> complex:
    """Inner product <a|b> = sum conj(a) b pitch^2."""
    check_same_grid(a, b)
    return complex(np.vdot(a.samples, b.samples) * a.grid.pitch ** 2)


def make_gaussian(w0: float, grid: GridSpec) -> ComplexField:
    return make_oam_mode(0, w0, grid)


def make_oam_mode(ell: int, w0: float, grid: GridSpec) -> ComplexField:
    """Normalized LG(p=0) mode of azimuthal charge ``ell`` at its waist."""
    ell = int(ell)
    if abs(ell) > 16:
        raise ValueError(f"|ell| must be <= 16, got {ell}")
    half = grid.extent / 2
    if not w0 * np.sqrt(1 + abs(ell)) < half / 2:
        raise ValueError(
            f"grid too small for ell={ell}: w0*sqrt(1+|ell|)={w0 * np.sqrt(1 + abs(ell)):.3g} m "
            f"must be below a quarter of the grid extent ({half / 2:.3g} m)")
    # LG_0^ell power outside radius R is Q(|ell|+1, 2R^2/w0^2)
    clipped = gammaincc(abs(ell) + 1, 2 * half ** 2 / w0 ** 2)
    if clipped > 1e-4:
        raise ValueError(f"grid too small for ell={ell}: {clipped:.2e} of the power beyond the edge")
    rho, phi = grid.polar()
    s = (np.sqrt(2) * rho / w0) ** abs(ell) * np.exp(-(rho / w0) ** 2) * np.exp(1j * ell * phi)
    return ComplexField(s, grid).normalized().phase_fixed()


def ang_index(ell: int, d: int) -> int:
    """Heaviside index map j = d/2 + (ell-1)H(ell) + ell H(-ell); ell=0 is excluded."""
    if ell == 0:
        raise ValueError("ell=0 has no index in the even-dimensional map")
    return d // 2 + (ell - 1) * (ell > 0) + ell * (ell < 0)


def logical_ells(d: int) -> list[int]:
    """OAM charges for dimension d: zero excluded for even d, centred set for odd d."""
    if d < 2:
        raise ValueError("dimension must be >= 2")
    if d % 2 == 0:
        ells = [ell for ell in range(-d // 2, d // 2 + 1) if ell != 0]
        return sorted(ells, key=lambda ell: ang_index(ell, d))
    return list(range(-(d - 1) // 2, (d - 1) // 2 + 1))


@dataclass(frozen=True, eq=False)
class ModeBasis:
    """Ordered orthonormal mode set.

    ``coefficients`` holds each mode's expansion over the logical OAM modes
    (column k is mode k), which lets channels be handled through transfer
    matrices instead of re-propagating superpositions.
    """

    d: int
    kind: str
    ells: tuple
    modes: tuple
    w0: float
    coefficients: np.ndarray = dc_field(repr=False, default=None)

    @property
    def grid(self):
        return self.modes[0].grid

    def gram(self) -> np.ndarray:
        stack = np.stack([m.samples.ravel() for m in self.modes])
        return stack.conj() @ stack.T * self.grid.pitch ** 2


def make_logical_basis(d: int, w0: float, grid: GridSpec) -> ModeBasis:
    ells = tuple(logical_ells(d))
    modes = tuple(make_oam_mode(ell, w0, grid) for ell in ells)
    return ModeBasis(d, "logical", ells, modes, w0, np.eye(d, dtype=complex))


def ang_matrix(d: int) -> np.ndarray:
    """Column k holds (1/sqrt d) exp(2 pi i jk/d) over j."""
    j = np.arange(d)
    return np.exp(2j * np.pi * np.outer(j, j) / d) / np.sqrt(d)


def make_ang_basis(d: int, w0: float, grid: GridSpec, logical: ModeBasis | None = None) -> ModeBasis:
    if d % 2 or not 2 <= d <= 16:
        raise ValueError(f"ANG basis needs an even dimension in [2, 16], got {d}")
    logical = logical or make_logical_basis(d, w0, grid)
    coeffs = ang_matrix(d)
    # no phase fixing here: the Fourier phases define the basis
    modes = tuple(superpose(logical.modes, coeffs[:, k]) for k in range(d))
    return ModeBasis(d, "ANG", logical.ells, modes, w0, coeffs)


def make_superposition_basis(kind: str, coefficients, logical: ModeBasis) -> ModeBasis:
    """Basis whose column k is a coefficient vector over ``logical`` (e.g. a MUB)."""
    coefficients = np.asarray(coefficients, dtype=complex)
    modes = tuple(superpose(logical.modes, coefficients[:, k]) for k in range(coefficients.shape[1]))
    return ModeBasis(logical.d, kind, logical.ells, modes, logical.w0, coefficients)


def fiber_coupling(field: ComplexField, fiber_w0: float) -> float:
    """Power fraction coupled into a centred Gaussian fiber mode of waist ``fiber_w0``."""
    rho, _ = field.grid.polar()
    g = np.exp(-(rho / fiber_w0) ** 2)
    g = g / np.sqrt(np.sum(g ** 2) * field.grid.pitch ** 2)
    eta = abs(np.vdot(g, field.samples) * field.grid.pitch ** 2) ** 2
    return float(min(eta, 1.0))


def projective_probability(field: ComplexField, basis: ModeBasis) -> np.ndarray:
    """Unnormalized detection probabilities |<mode_j|field>|^2."""
    check_same_grid(field, *basis.modes)
    stack = np.stack([m.samples.ravel() for m in basis.modes])
    amp = stack.conj() @ field.samples.ravel() * field.grid.pitch ** 2
    return np.abs(amp) ** 2


# -- serialization ---------------------------------------------------------

_MAGIC = b"AOQF"
_HEADER = struct.Struct("<4sIIIddd")  # magic, version, kind, n, pitch, wavelength, r0
KIND_REAL, KIND_COMPLEX = 0, 1


def write_container(path, data: np.ndarray, grid: GridSpec, r0: float = float("nan")):
    """Flat little-endian container: header then float64 payload (re/im interleaved if complex)."""
    data = np.asarray(data)
    kind = KIND_COMPLEX if np.iscomplexobj(data) else KIND_REAL
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, 1, kind, grid.n, grid.pitch, grid.wavelength, r0))
        fh.write(data.astype("<c16" if kind else "<f8").tobytes())


def read_container(path):
    """Returns (data, n, pitch, wavelength, r0)."""
    raw = Path(path).read_bytes()
    magic, version, kind, n, pitch, wavelength, r0 = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != 1:
        raise ValueError(f"{path}: not a field container")
    dtype = "<c16" if kind == KIND_COMPLEX else "<f8"
    data = np.frombuffer(raw, dtype=dtype, offset=_HEADER.size).reshape(n, n)
    return data.astype(complex if kind else float), n, pitch, wavelength, r0


def save_field(path, f: ComplexField):
    write_container(path, f.samples, f.grid)


def load_field(path, aperture=None) -> ComplexField:
    data, n, pitch, wavelength, _ = read_container(path)
    if not np.iscomplexobj(data):
        raise ValueError(f"{path} holds a real payload, not a field")
    return ComplexField(data, GridSpec(n, pitch, wavelength, aperture))


def save_png(path_stem, f: ComplexField):
    """Write ``<stem>_intensity.png`` and ``<stem>_phase.png`` for inspection."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    stem = str(path_stem)
    plt.imsave(stem + "_intensity.png", f.intensity, cmap="inferno", origin="lower")
    plt.imsave(stem + "_phase.png", f.phase, cmap="twilight", vmin=-np.pi, vmax=np.pi, origin="lower")

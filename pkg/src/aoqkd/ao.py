"""Closed-loop adaptive optics: Shack-Hartmann sensor, 97-actuator mirror, integrator."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field, replace

import numpy as np
from scipy import fft as sfft

from .field import ComplexField, GridSpec, check_same_grid, phasor

log = logging.getLogger(__name__)


class CalibrationError(RuntimeError):
    pass


class WfsSignalError(RuntimeError):
    pass


# -- wavefront sensor ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class WfsGeometry:
    """Square lenslet array spanning the pupil diameter.

    ``valid`` flags subapertures (row-major, ``n_sub`` x ``n_sub``) that
    receive at least ``threshold`` of the brightest subaperture's flux.
    """

    grid: GridSpec
    n_sub: int
    valid: np.ndarray
    pad: int = 2
    reference_slopes: np.ndarray | None = None
    noise: float = 0.0  # rad/m rms added to each slope

    @property
    def sub_pixels(self) -> int:
        return int(round(self.grid.aperture / self.n_sub / self.grid.pitch))

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    @property
    def n_slopes(self) -> int:
        return 2 * self.n_valid

    def with_reference(self, slopes) -> "WfsGeometry":
        return replace(self, reference_slopes=np.asarray(slopes, dtype=float))

    def centres(self):
        """Subaperture centre coordinates (x, y) in meters for the valid set."""
        s = self.sub_pixels * self.grid.pitch
        c = (np.arange(self.n_sub) - (self.n_sub - 1) / 2) * s
        x, y = np.meshgrid(c, c)
        return x.ravel()[self.valid], y.ravel()[self.valid]


def _subapertures(samples: np.ndarray, grid: GridSpec, n_sub: int, sub: int):
    """(n_sub*n_sub, sub, sub) blocks of the pupil region."""
    lo = grid.n // 2 - n_sub * sub // 2
    block = samples[lo:lo + n_sub * sub, lo:lo + n_sub * sub]
    return block.reshape(n_sub, sub, n_sub, sub).swapaxes(1, 2).reshape(n_sub * n_sub, sub, sub)


def make_wfs(grid: GridSpec, n_sub=16, threshold=0.5, reference: ComplexField | None = None,
             pad=2, noise=0.0) -> WfsGeometry:
    sub = int(round(grid.aperture / n_sub / grid.pitch))
    if sub < 2:
        raise ValueError(f"subaperture spans {sub} pixel(s); refine the grid")
    pupil = grid.pupil().astype(float)
    illum = pupil if reference is None else pupil * reference.intensity
    flux = _subapertures(illum, grid, n_sub, sub).sum(axis=(1, 2))
    if flux.max() <= 0:
        raise WfsSignalError("reference beam leaves every subaperture dark")
    valid = flux >= threshold * flux.max()
    valid.setflags(write=False)
    return WfsGeometry(grid, n_sub, valid, pad, None, noise)


def _spot_frequencies(sub, pad, pitch):
    m = pad * sub + 1  # odd so the frequency axis is symmetric about zero
    return m, sfft.fftfreq(m, pitch)


def wfs_measure(field: ComplexField, geom: WfsGeometry, rng=None) -> np.ndarray:
    """Slopes (rad/m) from lenslet focal-spot centroids: [x slopes..., y slopes...]."""
    grid = field.grid
    sub = geom.sub_pixels
    e = field.samples * grid.pupil()
    blocks = _subapertures(e, grid, geom.n_sub, sub)[geom.valid]
    m, f = _spot_frequencies(sub, geom.pad, grid.pitch)
    spots = np.abs(sfft.fft2(blocks, s=(m, m))) ** 2
    flux = spots.sum(axis=(1, 2))
    if not np.any(flux > 0):
        raise WfsSignalError("no flux on any valid subaperture")
    safe = np.where(flux > 0, flux, 1.0)
    fx = (spots.sum(axis=1) * f).sum(axis=1) / safe
    fy = (spots.sum(axis=2) * f).sum(axis=1) / safe
    slopes = 2 * np.pi * np.concatenate([fx, fy])
    if geom.reference_slopes is not None:
        slopes = slopes - geom.reference_slopes
    if geom.noise > 0:
        rng = rng if rng is not None else np.random.default_rng()
        slopes = slopes + geom.noise * rng.standard_normal(slopes.shape)
    return slopes


# -- deformable mirror -----------------------------------------------------

def actuator_layout(n_across=11, corner=3):
    """Boolean (n_across, n_across) map with triangular corners of side ``corner`` removed."""
    i, j = np.indices((n_across, n_across))
    far = n_across - 1
    keep = np.ones((n_across, n_across), bool)
    for a, b in ((i, j), (i, far - j), (far - i, j), (far - i, far - j)):
        keep &= ~(a + b < corner)
    return keep


@dataclass(frozen=True, eq=False)
class DmModel:
    """Gaussian-influence mirror on an 11x11 grid with cut corners (97 actuators).

    Commands are surface phase in radians. The surface is separable:
    S = Gy @ C @ Gx.T with C the command map on the actuator grid.
    """

    grid: GridSpec
    layout: np.ndarray
    pitch: float  # actuator spacing, meters
    coupling: float = 0.3
    stroke: float = 20.0
    commands: np.ndarray = None

    def __post_init__(self):
        if self.commands is None:
            object.__setattr__(self, "commands", np.zeros(self.n_actuators))
        c = np.array(self.commands, dtype=float)
        if c.shape != (self.n_actuators,):
            raise ValueError(f"expected {self.n_actuators} commands, got {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "commands", c)

    @property
    def n_actuators(self) -> int:
        return int(self.layout.sum())

    @property
    def sigma(self) -> float:
        """Influence width such that the response at one pitch equals ``coupling``."""
        return self.pitch / np.sqrt(2 * np.log(1 / self.coupling))

    @property
    def clipped(self) -> bool:
        return bool(np.any(np.abs(self.commands) > self.stroke))

    def positions(self):
        n = self.layout.shape[0]
        c = (np.arange(n) - (n - 1) / 2) * self.pitch
        x, y = np.meshgrid(c, c)
        return x[self.layout], y[self.layout]

    def _profiles(self):
        n = self.layout.shape[0]
        c = (np.arange(n) - (n - 1) / 2) * self.pitch
        a = self.grid.axis()
        return np.exp(-(a[:, None] - c[None, :]) ** 2 / (2 * self.sigma ** 2))

    def with_commands(self, commands) -> "DmModel":
        return replace(self, commands=commands)

    def surface(self) -> np.ndarray:
        g = self._profiles()
        cmap = np.zeros(self.layout.shape)
        cmap[self.layout] = np.clip(self.commands, -self.stroke, self.stroke)
        return g @ cmap @ g.T

    def phasor(self) -> np.ndarray:
        """exp(-i * surface), the factor the mirror applies."""
        return phasor(-self.surface())

    def influence(self, k) -> np.ndarray:
        return self.with_commands(np.eye(self.n_actuators)[k]).surface()


def make_dm(grid: GridSpec, n_across=11, corner=3, coupling=0.3, stroke=20.0, pitch=None) -> DmModel:
    """Default spacing puts n_across actuators edge to edge across the pupil."""
    layout = actuator_layout(n_across, corner)
    layout.setflags(write=False)
    pitch = pitch or grid.aperture / (n_across - 1)
    return DmModel(grid, layout, pitch, coupling, stroke)


def dm_apply(field: ComplexField, dm: DmModel) -> ComplexField:
    """Multiply by exp(-i * surface): the mirror subtracts its surface phase."""
    if field.grid != dm.grid:
        check_same_grid(field, dm)
    if not np.any(dm.commands):
        return field
    if dm.clipped:
        log.debug("DM commands clipped at +/-%g rad", dm.stroke)
    return ComplexField(field.samples * dm.phasor(), field.grid)


# -- calibration and control -----------------------------------------------

@dataclass(frozen=True, eq=False)
class Calibration:
    dm: DmModel
    wfs: WfsGeometry
    interaction: np.ndarray  # slopes per unit command, (n_slopes, n_act)
    reconstructor: np.ndarray  # (n_act, n_slopes)
    singular_values: np.ndarray
    n_retained: int
    tau: float
    right_vectors: np.ndarray  # rows are right singular vectors

    @property
    def condition(self) -> float:
        s = self.singular_values[:self.n_retained]
        return float(s[0] / s[-1])

    def discarded_modes(self) -> np.ndarray:
        return self.right_vectors[self.n_retained:]


def plane_reference(grid: GridSpec, radius=None, order=16) -> ComplexField:
    """Expanded beam approximating a plane wave: super-Gaussian wider than the pupil."""
    radius = radius or 0.45 * grid.extent
    rho, _ = grid.polar()
    return ComplexField(np.exp(-(rho / radius) ** order), grid).normalized()


def calibrate(dm: DmModel, wfs: WfsGeometry, reference: ComplexField | None = None,
              tau=0.02, poke=0.1) -> Calibration:
    """Push-pull poke every actuator; reconstructor is the truncated-SVD pseudo-inverse."""
    reference = reference or plane_reference(dm.grid)
    base = wfs_measure(reference, replace(wfs, noise=0.0))
    wfs = wfs.with_reference(base if wfs.reference_slopes is None else wfs.reference_slopes)
    quiet = replace(wfs, noise=0.0)
    cols = []
    eye = np.eye(dm.n_actuators)
    for k in range(dm.n_actuators):
        plus = wfs_measure(dm_apply(reference, dm.with_commands(poke * eye[k])), quiet)
        minus = wfs_measure(dm_apply(reference, dm.with_commands(-poke * eye[k])), quiet)
        cols.append((plus - minus) / (2 * poke))
    m = np.stack(cols, axis=1)
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    if s[0] <= 0:
        raise CalibrationError("interaction matrix is identically zero")
    keep = int(np.sum(s >= tau * s[0]))
    if keep == 0:
        raise CalibrationError("rank collapse: every singular value is below the threshold")
    r = (vt[:keep].T / s[:keep]) @ u[:, :keep].T
    cal = Calibration(dm, wfs, m, r, s, keep, tau, vt)
    log.info("calibrated %d actuators, kept %d modes, condition %.3g", dm.n_actuators, keep, cal.condition)
    return cal


@dataclass(eq=False)
class LoopState:
    calibration: Calibration
    gain: float = 0.4
    leak: float = 0.99
    loop_rate: float = 200.0
    commands: np.ndarray = None
    iteration: int = 0
    residuals: list = dc_field(default_factory=list)
    clipped: bool = False
    wfs_rate: float = 1000.0  # recorded metadata
    dm_settling: float = 1.5e-3  # recorded metadata

    def __post_init__(self):
        if self.commands is None:
            self.commands = np.zeros(self.calibration.dm.n_actuators)

    @property
    def dm(self) -> DmModel:
        return self.calibration.dm.with_commands(self.commands)

    def reset(self):
        self.commands = np.zeros_like(self.commands)
        self.iteration = 0
        self.residuals = []
        self.clipped = False


def residual_rms(corrected: ComplexField, ideal: ComplexField | None = None, threshold=1e-2) -> float:
    """Piston-removed rms phase (rad) of ``corrected`` relative to ``ideal`` over the lit pupil."""
    e = corrected.samples
    if ideal is not None:
        e = e * np.conj(ideal.samples)
    amp = np.abs(corrected.samples if ideal is None else ideal.samples)
    mask = corrected.grid.pupil() & (amp > threshold * amp.max())
    z = e[mask]
    piston = np.sum(z)
    ph = np.angle(z * np.conj(piston))
    return float(np.sqrt(np.mean(ph ** 2)))


def loop_step(state: LoopState, reference: ComplexField, signal: ComplexField | None = None,
              ideal_reference: ComplexField | None = None, rng=None):
    """One integrator iteration; the same mirror shape corrects both beams.

    Returns (state, corrected_signal). The update takes effect on the next
    call (one frame of latency).
    """
    dm = state.dm
    state.clipped = state.clipped or dm.clipped
    factor = dm.phasor() if np.any(state.commands) else 1.0
    corrected_ref = ComplexField(reference.samples * factor, reference.grid)
    slopes = wfs_measure(corrected_ref, state.calibration.wfs, rng)
    state.residuals.append(residual_rms(corrected_ref, ideal_reference))
    corrected_signal = ComplexField(signal.samples * factor, signal.grid) if signal is not None else None
    state.commands = state.leak * state.commands - state.gain * (state.calibration.reconstructor @ slopes)
    state.iteration += 1
    return state, corrected_signal


def fitting_error(phase: np.ndarray, dm: DmModel) -> float:
    """Least-squares fitting floor: rms of ``phase`` minus its best DM + piston fit over the pupil."""
    mask = dm.grid.pupil()
    basis = [dm.influence(k)[mask] for k in range(dm.n_actuators)]
    basis.append(np.ones(mask.sum()))
    a = np.stack(basis, axis=1)
    target = phase[mask]
    coef, *_ = np.linalg.lstsq(a, target, rcond=None)
    res = target - a @ coef
    return float(np.sqrt(np.mean((res - res.mean()) ** 2)))

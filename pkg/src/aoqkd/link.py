"""The simulated link: source, one turbulent screen mid-cell, receiver with AO and pupil.

Channels reduce to transfer matrices over the logical OAM modes,
T[j, k] = <det_j | pupil * DM * U mode_k>, where det_j is mode j carried
through the same path without turbulence. Any basis expanded over the
logical modes then follows by linearity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .ao import LoopState, calibrate, dm_apply, loop_step, make_dm, make_wfs, plane_reference, residual_rms
from .field import ComplexField, GridSpec, make_oam_mode, phasor
from .propagation import ChannelSpec, Free, Screen, aperture_mask, propagate_free
from .turbulence import PhaseScreen, TurbulenceSeries, gen_screen_fft, wind_for_greenwood

# named seed streams; trial k of stream s draws from SeedSequence(seed, spawn_key=(s, k))
STREAMS = {"screen": 1, "wfs": 2, "scrambler": 3, "series": 4, "fried": 5, "zernike": 6}


def trial_rng(seed: int, stream: str, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(STREAMS[stream], trial)))


def trial_seed(seed: int, stream: str, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(STREAMS[stream], trial))


@dataclass(frozen=True)
class LinkGeometry:
    """Free path before the cell, cell length, free path after (meters)."""

    before: float = 0.5
    cell: float = 0.3
    after: float = 0.5

    def __post_init__(self):
        if min(self.before, self.cell, self.after) < 0:
            raise ValueError("link distances must be non-negative")

    @property
    def to_screen(self) -> float:
        return self.before + self.cell / 2

    @property
    def to_receiver(self) -> float:
        return self.after + self.cell / 2

    @property
    def length(self) -> float:
        return self.before + self.cell + self.after


@dataclass(frozen=True)
class AoSettings:
    gain: float = 0.4
    leak: float = 0.99
    tau: float = 0.02
    stroke: float = 20.0
    coupling: float = 0.3
    n_sub: int = 16
    threshold: float = 0.5
    pad: int = 2
    noise: float = 0.0
    iterations: int = 50  # loop steps on a static realization before measuring


class Link:
    """Fixed optical layout; screens are supplied per realization."""

    def __init__(self, grid: GridSpec, waist: float, r0: float, geometry=LinkGeometry(), ao=AoSettings(),
                 subharmonics=10):
        if not r0 > 0:
            raise ValueError("r0 must be positive (use inf for no turbulence)")
        self.grid = grid
        self.waist = waist
        self.r0 = r0
        self.geometry = geometry
        self.ao = ao
        self.subharmonics = subharmonics
        self._screen_modes = {}
        self._detection = {}

    @property
    def turbulent(self) -> bool:
        return math.isfinite(self.r0)

    def _prop(self, f, z):
        return propagate_free(f, z, check=False)

    def mode_at_screen(self, ell: int) -> ComplexField:
        if ell not in self._screen_modes:
            src = make_oam_mode(ell, self.waist, self.grid)
            self._screen_modes[ell] = propagate_free(src, self.geometry.to_screen)
        return self._screen_modes[ell]

    def detection_mode(self, ell: int) -> ComplexField:
        """Mode ``ell`` after the turbulence-free path: what the receiver projects onto."""
        if ell not in self._detection:
            self._detection[ell] = propagate_free(self.mode_at_screen(ell), self.geometry.to_receiver)
        return self._detection[ell]

    @cached_property
    def reference_at_screen(self) -> ComplexField:
        return propagate_free(plane_reference(self.grid), self.geometry.to_screen)

    @cached_property
    def ideal_reference(self) -> ComplexField:
        return propagate_free(self.reference_at_screen, self.geometry.to_receiver)

    @cached_property
    def pupil(self) -> np.ndarray:
        return aperture_mask(self.grid, self.grid.aperture)

    @cached_property
    def calibration(self):
        ao = self.ao
        dm = make_dm(self.grid, coupling=ao.coupling, stroke=ao.stroke)
        wfs = make_wfs(self.grid, ao.n_sub, ao.threshold, self.ideal_reference, ao.pad, ao.noise)
        return calibrate(dm, wfs, self.ideal_reference, tau=ao.tau)

    def new_loop(self) -> LoopState:
        return LoopState(self.calibration, gain=self.ao.gain, leak=self.ao.leak)

    def channel_spec(self, screen: PhaseScreen) -> ChannelSpec:
        g = self.geometry
        return ChannelSpec((Free(g.to_screen), Screen(screen), Free(g.to_receiver)), self.grid.aperture)

    def screen(self, rng) -> PhaseScreen:
        if not self.turbulent:
            return PhaseScreen.flat(self.grid)
        return gen_screen_fft(self.r0, self.grid, rng, self.subharmonics)

    def receive(self, at_screen: ComplexField, factor: np.ndarray) -> ComplexField:
        """Field at the receiver plane (before mirror and pupil)."""
        return self._prop(ComplexField(at_screen.samples * factor, self.grid), self.geometry.to_receiver)

    def converge(self, factor: np.ndarray, rng=None, iterations=None) -> LoopState:
        """Run the loop on a static realization, starting from a flat mirror."""
        state = self.new_loop()
        ref = self.receive(self.reference_at_screen, factor)
        for _ in range(self.ao.iterations if iterations is None else iterations):
            loop_step(state, ref, None, self.ideal_reference, rng)
        return state

    def project(self, field: ComplexField, ells) -> np.ndarray:
        """Amplitudes <det_ell | pupil * field> for each ell."""
        e = (field.samples * self.pupil).ravel()
        return np.array([np.vdot(self.detection_mode(ell).samples.ravel(), e) for ell in ells]) * self.grid.pitch ** 2

    def transfer(self, ells, screen: PhaseScreen, ao_states=(False, True), rng=None) -> dict:
        """Transfer matrices over ``ells`` keyed by AO state; both share one realization."""
        ells = list(ells)
        factor = phasor(screen.phase)
        received = [self.receive(self.mode_at_screen(ell), factor) for ell in ells]
        out = {}
        for on in ao_states:
            dm = self.converge(factor, rng).dm if on else None
            cols = [self.project(dm_apply(f, dm) if on else f, ells) for f in received]
            out[on] = np.stack(cols, axis=1)
        return out

    def coupling(self, field: ComplexField) -> float:
        """Power fraction in the ideal Gaussian receiver mode (fiber matched to the clean beam)."""
        return float(abs(self.project(field, [0])[0]) ** 2)

    def centroid(self, factor: np.ndarray):
        """Gaussian beam centroid (x, y) at the receiver, inside the pupil."""
        f = self.receive(self.mode_at_screen(0), factor).masked(self.pupil)
        return f.centroid()


@dataclass(frozen=True)
class CouplingSample:
    t: float
    residual: float
    coupling: float
    ao_on: bool


def coupling_series(link: Link, duration: float, t_on: float, greenwood: float, loop_rate: float,
                    seed, rng=None):
    """Frozen-flow time series of Gaussian coupling with the loop closed from ``t_on``.

    One frame per loop period; the mirror is flat while the loop is open.
    """
    dt = 1 / loop_rate
    series = None
    if link.turbulent:
        series = TurbulenceSeries(link.r0, link.grid, wind_for_greenwood(greenwood, link.r0), dt, seed,
                                  subharmonics=link.subharmonics)
    state = link.new_loop()
    gauss = link.mode_at_screen(0)
    frames = int(round(duration * loop_rate))
    flat = np.ones((link.grid.n, link.grid.n))
    out = []
    for k in range(frames):
        t = k * dt
        factor = phasor(series.advance().phase) if series is not None else flat
        ref = link.receive(link.reference_at_screen, factor)
        sig = link.receive(gauss, factor)
        on = t >= t_on
        if on:
            state, sig = loop_step(state, ref, sig, link.ideal_reference, rng)
            res = state.residuals[-1]
        else:
            res = residual_rms(ref, link.ideal_reference)
        out.append(CouplingSample(t, res, link.coupling(sig), on))
    return out

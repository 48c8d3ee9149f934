"""Experiment runners shared by the command line and the acceptance suite.

Every runner is a pure function of a RunConfig. Trials draw from
SeedSequence(seed, spawn_key=(stream, trial)), so results do not depend on
the worker count or on how many other trials ran.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .ao import LoopState, calibrate, fitting_error, loop_step, make_dm, make_wfs, plane_reference
from .config import RunConfig
from .field import GridSpec, ang_matrix, logical_ells, phasor
from .link import AoSettings, Link, LinkGeometry, coupling_series, trial_rng, trial_seed
from .propagation import apply_screen
from .qkd import crosstalk, report
from .quantum import ProcessMatrix, build_mubs, ideal_chi, probability_table, process_fidelity, reconstruct_chi
from .turbulence import (PhaseScreen, estimate_fried, gen_screen_fft, gen_screen_zernike, kolmogorov_structure,
                         structure_function)
from .zernike import decompose

log = logging.getLogger(__name__)


def make_grid(cfg: RunConfig, n=None) -> GridSpec:
    g = cfg.grid
    n = n or g.n
    return GridSpec(n, g.extent_waists * g.waist / n, g.wavelength, g.aperture_waists * g.waist)


def ao_settings(cfg: RunConfig) -> AoSettings:
    a = cfg.ao
    return AoSettings(a.gain, a.leak, a.tau, a.stroke, a.coupling, a.n_sub, a.threshold, a.pad, a.noise,
                      a.iterations)


def make_link(cfg: RunConfig, n=None, r0=None) -> Link:
    c = cfg.channel
    return Link(make_grid(cfg, n), cfg.grid.waist, cfg.r0 if r0 is None else r0,
                LinkGeometry(c.before, c.cell, c.after), ao_settings(cfg), cfg.turbulence.subharmonics)


# -- worker plumbing -------------------------------------------------------

_LINKS = {}


def _cached_link(cfg_json: str, n, r0) -> tuple:
    key = (cfg_json, n, r0)
    if key not in _LINKS:
        from .config import from_dict
        cfg = from_dict(json.loads(cfg_json))
        _LINKS.clear()
        _LINKS[key] = (cfg, make_link(cfg, n, r0))
    return _LINKS[key]


def _map(cfg: RunConfig, fn, jobs):
    """Ordered map, optionally across processes."""
    if cfg.threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * cfg.threads))))


def _transfer_job(job):
    cfg_json, r0, ells, trial = job
    cfg, link = _cached_link(cfg_json, None, r0)
    screen = link.screen(trial_rng(cfg.seed, "screen", trial))
    rng = trial_rng(cfg.seed, "wfs", trial) if cfg.ao.noise > 0 else None
    t = link.transfer(ells, screen, rng=rng)
    return t[False], t[True]


def transfer_trials(cfg: RunConfig, ells, r0=None) -> tuple:
    """Per-trial transfer matrices (AO off, AO on), each (trials, len(ells), len(ells)).

    Trial k always sees the screen drawn from the k-th screen seed, so the
    AO states and all dimensions share realizations.
    """
    r0 = cfg.r0 if r0 is None else r0
    trials = cfg.trials if math.isfinite(r0) else 1
    blob = json.dumps(cfg.to_dict(), sort_keys=True)
    out = _map(cfg, _transfer_job, [(blob, r0, tuple(ells), k) for k in range(trials)])
    return np.stack([o[0] for o in out]), np.stack([o[1] for o in out])


def _sub(transfers, ells, wanted):
    idx = [list(ells).index(e) for e in wanted]
    return transfers[:, idx][:, :, idx]


# -- QKD sweep -------------------------------------------------------------

@dataclass
class QkdOutcome:
    reports: list  # QkdReport, ordered by (d, ao)
    matrices: dict  # (d, basis, ao) -> CrosstalkMatrix


def basis_coefficients(basis: str, d: int) -> np.ndarray:
    if basis == "logical":
        return np.eye(d, dtype=complex)
    if basis == "ANG":
        return ang_matrix(d)
    raise ValueError(f"unknown basis {basis!r}")


def qkd_from_transfers(dims, bases, ells, t_off, t_on) -> QkdOutcome:
    reports, mats = [], {}
    for d in dims:
        want = logical_ells(d)
        for ao, t in ((False, t_off), (True, t_on)):
            sub = _sub(t, ells, want)
            per = {}
            for b in bases:
                c = crosstalk(sub, basis_coefficients(b, d), b)
                per[b] = c
                mats[(d, b, ao)] = c
            reports.append(report(d, ao, per))
    return QkdOutcome(reports, mats)


def run_qkd(cfg: RunConfig) -> QkdOutcome:
    dims = sorted(cfg.qkd.dims)
    ells = sorted({e for d in dims for e in logical_ells(d)})
    t_off, t_on = transfer_trials(cfg, ells)
    return qkd_from_transfers(dims, cfg.qkd.bases, ells, t_off, t_on)


# -- tomography ------------------------------------------------------------

@dataclass
class TomographyResult:
    condition: str
    ao: bool
    chi: ProcessMatrix
    fidelity: float
    fidelity_stderr: float
    table: np.ndarray


def tomography_from_transfers(d, transfers, averaged=True) -> tuple:
    mubs = build_mubs(d)
    ideal = ideal_chi(d)
    if averaged:
        table = probability_table(transfers, mubs)
        chi = reconstruct_chi(table, d)
        return chi, process_fidelity(chi, ideal), 0.0, table
    chis, fids, tables = [], [], []
    for t in transfers:
        tab = probability_table(t, mubs)
        c = reconstruct_chi(tab, d)
        chis.append(c.chi)
        fids.append(process_fidelity(c, ideal))
        tables.append(tab)
    se = float(np.std(fids, ddof=1) / np.sqrt(len(fids))) if len(fids) > 1 else 0.0
    return ProcessMatrix(np.mean(chis, axis=0)), float(np.mean(fids)), se, np.mean(tables, axis=0)


def run_tomography(cfg: RunConfig) -> list:
    d = cfg.tomography.d
    ells = logical_ells(d)
    out = []
    for condition, r0 in (("no-turbulence", math.inf), ("turbulence", cfg.r0)):
        t_off, t_on = transfer_trials(cfg, ells, r0)
        for ao, t in ((False, t_off), (True, t_on)):
            chi, f, se, table = tomography_from_transfers(d, t, cfg.tomography.averaged)
            out.append(TomographyResult(condition, ao, chi, f, se, table))
    return out


# -- Gaussian coupling time series -----------------------------------------

@dataclass
class CouplingRun:
    seed_index: int
    samples: list

    def means(self):
        c = np.array([s.coupling for s in self.samples])
        on = np.array([s.ao_on for s in self.samples])
        off_mean = float(c[~on].mean()) if (~on).any() else math.nan
        on_mean = float(c[on].mean()) if on.any() else math.nan
        return off_mean, on_mean


def _coupling_job(job):
    cfg_json, k = job
    cfg, link = _cached_link(cfg_json, json.loads(cfg_json)["coupling"]["grid_n"], None)
    rng = trial_rng(cfg.seed, "wfs", k) if cfg.ao.noise > 0 else None
    samples = coupling_series(link, cfg.coupling.duration, cfg.coupling.t_on, cfg.turbulence.greenwood,
                              cfg.ao.loop_rate, trial_seed(cfg.seed, "series", k), rng)
    return CouplingRun(k, samples)


def under_sampled(cfg: RunConfig) -> bool:
    return cfg.turbulence.greenwood > cfg.ao.loop_rate / 2


def run_coupling(cfg: RunConfig) -> list:
    if under_sampled(cfg):
        log.warning("Greenwood frequency %.3g Hz exceeds half the loop rate (%.3g Hz): loop is under-sampled",
                    cfg.turbulence.greenwood, cfg.ao.loop_rate)
    blob = json.dumps(cfg.to_dict(), sort_keys=True)
    return _map(cfg, _coupling_job, [(blob, k) for k in range(cfg.coupling.seeds)])


# -- Fried estimation ------------------------------------------------------

@dataclass
class FriedResult:
    centroids: np.ndarray  # (frames, 2) displacement from the clean centroid (m)
    r0_configured: float
    r0_estimated: float
    cell_length: float

    def d_over_r0(self, diameter) -> float:
        return diameter / self.r0_estimated


def _fried_job(job):
    cfg_json, k = job
    cfg, link = _cached_link(cfg_json, None, None)
    screen = link.screen(trial_rng(cfg.seed, "fried", k))
    x, y = link.centroid(phasor(screen.phase))
    return x, y


def run_fried(cfg: RunConfig) -> FriedResult:
    """Independent realizations, one centroid each; the lever arm is the path after the cell."""
    link = make_link(cfg)
    x0, y0 = link.centroid(np.ones((link.grid.n, link.grid.n)))
    blob = json.dumps(cfg.to_dict(), sort_keys=True)
    pts = np.array(_map(cfg, _fried_job, [(blob, k) for k in range(cfg.fried.frames)]))
    disp = pts - [x0, y0]
    est = estimate_fried(disp, cfg.channel.cell, cfg.grid.wavelength)
    return FriedResult(disp, cfg.r0, est, cfg.channel.cell)


# -- Zernike statistics ----------------------------------------------------

@dataclass
class ZernikeStats:
    setting: float  # hotplate-style setting, or -1 for modal synthesis
    d_over_r0: float
    sigma: np.ndarray  # per index j = 1..jmax
    target: np.ndarray | None  # input sigma for modal synthesis


def _coeff_job(job):
    cfg_json, r0, k = job
    cfg = json.loads(cfg_json)
    from .config import from_dict
    c = from_dict(cfg)
    grid = make_grid(c)
    jmax = c.zernike.jmax
    rng = trial_rng(c.seed, "zernike", k)
    if r0 is None:
        screen = gen_screen_zernike(c.zernike.sigma, grid, rng)
    elif math.isinf(r0):
        screen = PhaseScreen.flat(grid)
    else:
        screen = gen_screen_fft(r0, grid, rng, c.turbulence.subharmonics)
    return decompose(screen, jmax=jmax).coeffs


def run_zernike_stats(cfg: RunConfig) -> list:
    z = cfg.zernike
    blob = json.dumps(cfg.to_dict(), sort_keys=True)
    out = []
    if z.source == "sigma":
        coeffs = np.array(_map(cfg, _coeff_job, [(blob, None, k) for k in range(cfg.trials)]))
        target = np.zeros(z.jmax)
        target[:len(z.sigma)] = z.sigma
        out.append(ZernikeStats(-1, math.nan, coeffs.std(axis=0, ddof=1), target))
        return out
    for s in z.settings:
        dr = s * z.d_over_r0_per_setting
        r0 = math.inf if dr == 0 else cfg.beam_diameter / dr
        coeffs = np.array(_map(cfg, _coeff_job, [(blob, r0, k) for k in range(cfg.trials)]))
        sig = coeffs.std(axis=0, ddof=1) if len(coeffs) > 1 else np.zeros(z.jmax)
        out.append(ZernikeStats(s, dr, sig, None))
    return out


# -- screen ensembles ------------------------------------------------------

@dataclass
class StructureStats:
    r0: float
    lags: np.ndarray  # pixels
    measured: np.ndarray  # ensemble-mean D(r), rad^2
    theory: np.ndarray


def _structure_job(job):
    cfg_json, r0, k, max_lag = job
    from .config import from_dict
    c = from_dict(json.loads(cfg_json))
    screen = gen_screen_fft(r0, make_grid(c), trial_rng(c.seed, "screen", k), c.turbulence.subharmonics)
    return structure_function(screen.phase, max_lag)


def structure_lags(grid: GridSpec) -> int:
    """Largest lag used: a quarter of the pupil diameter."""
    return int(grid.aperture / 4 / grid.pitch)


def run_screens(cfg: RunConfig, sink=None) -> list:
    """Structure-function statistics per r0; ``sink(r0, k, screen)`` receives saved screens."""
    grid = make_grid(cfg)
    max_lag = structure_lags(grid)
    blob = json.dumps(cfg.to_dict(), sort_keys=True)
    out = []
    for r0 in cfg.screens.r0_list:
        sf = np.array(_map(cfg, _structure_job, [(blob, r0, k, max_lag) for k in range(cfg.trials)]))
        lags = np.arange(1, max_lag + 1)
        out.append(StructureStats(r0, lags, sf.mean(axis=0), kolmogorov_structure(lags * grid.pitch, r0)))
        if sink is not None:
            for k in range(min(cfg.screens.save, cfg.trials)):
                sink(r0, k, gen_screen_fft(r0, grid, trial_rng(cfg.seed, "screen", k), cfg.turbulence.subharmonics))
    return out


# -- static loop convergence -----------------------------------------------

@dataclass
class StaticRun:
    residuals: np.ndarray  # (screens, iterations + 1) rad; last entry is after the final update
    floors: np.ndarray  # least-squares fitting error per screen


def run_static_ao(cfg: RunConfig, screens: int, iterations: int = 50) -> StaticRun:
    """Close the loop on static screens placed at the mirror plane."""
    grid = make_grid(cfg)
    a = cfg.ao
    dm = make_dm(grid, coupling=a.coupling, stroke=a.stroke)
    ref = plane_reference(grid)
    wfs = make_wfs(grid, a.n_sub, a.threshold, ref, a.pad, a.noise)
    cal = calibrate(dm, wfs, ref, tau=a.tau)
    hist, floors = [], []
    for k in range(screens):
        screen = gen_screen_fft(cfg.r0, grid, trial_rng(cfg.seed, "screen", k), cfg.turbulence.subharmonics)
        aberrated = apply_screen(ref, screen)
        state = LoopState(cal, gain=a.gain, leak=a.leak)
        for _ in range(iterations + 1):
            loop_step(state, aberrated, None, ref)
        hist.append(state.residuals)
        floors.append(fitting_error(screen.phase, dm))
    return StaticRun(np.array(hist), np.array(floors))

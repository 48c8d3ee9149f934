import numpy as np
import pytest

from aoqkd.ao import (LoopState, WfsSignalError, actuator_layout, calibrate, dm_apply, fitting_error, loop_step,
                      make_dm, make_wfs, plane_reference, residual_rms, wfs_measure)
from aoqkd.field import ComplexField
from aoqkd.propagation import apply_screen
from aoqkd.turbulence import PhaseScreen, gen_screen_fft
from aoqkd.zernike import zernike_map


@pytest.fixture(scope="module")
def setup():
    from aoqkd.field import GridSpec
    grid = GridSpec.default(n=128)
    ref = plane_reference(grid)
    dm = make_dm(grid)
    wfs = make_wfs(grid, 16, 0.5, ref)
    return grid, ref, dm, wfs, calibrate(dm, wfs, ref)


def _interior(wfs):
    """Valid subapertures lying wholly inside the pupil (edge ones see a clipped spot)."""
    cx, cy = wfs.centres()
    half = wfs.sub_pixels * wfs.grid.pitch / 2
    return np.hypot(np.abs(cx) + half, np.abs(cy) + half) <= wfs.grid.aperture / 2


def _aberrate(ref, phase):
    return ComplexField(ref.samples * np.exp(1j * phase), ref.grid)


def test_actuator_count():
    assert actuator_layout().sum() == 97


def test_wfs_has_enough_valid_subapertures(setup):
    _, _, _, wfs, _ = setup
    assert wfs.n_valid >= 0.6 * 16 * 16 * np.pi / 4
    assert wfs.n_slopes == 2 * wfs.n_valid


def test_flat_wavefront_gives_zero_slopes(setup):
    _, ref, _, wfs, _ = setup
    assert np.max(np.abs(wfs_measure(ref, wfs))) < 1e-8


def test_tip_gives_uniform_slopes(setup):
    grid, ref, _, wfs, _ = setup
    r = grid.aperture / 2
    s1 = wfs_measure(_aberrate(ref, 0.5 * zernike_map(2, grid)), wfs)
    s2 = wfs_measure(_aberrate(ref, 1.0 * zernike_map(2, grid)), wfs)
    nv = wfs.n_valid
    inner = _interior(wfs)
    sx, sy = s1[:nv][inner], s1[nv:][inner]
    expected = 2 * 0.5 / r  # gradient of a * 2 y / R
    assert np.median(sy) == pytest.approx(expected, rel=0.05)
    assert np.std(sy) < 0.05 * expected
    assert np.max(np.abs(sx)) < 0.01 * expected
    assert np.median(s2[nv:][inner]) / np.median(sy) == pytest.approx(2, rel=0.02)


@pytest.mark.parametrize("sign", [1, -1])
def test_defocus_slopes_are_radial(setup, sign):
    grid, ref, _, wfs, _ = setup
    s = wfs_measure(_aberrate(ref, sign * 0.5 * zernike_map(5, grid)), wfs)
    nv = wfs.n_valid
    cx, cy = wfs.centres()
    radial = s[:nv] * cx + s[nv:] * cy
    assert np.all(sign * radial > 0)
    tangential = s[:nv] * cy - s[nv:] * cx
    inner = _interior(wfs)
    assert np.max(np.abs(tangential[inner])) < 0.05 * np.max(np.abs(radial[inner]))


def test_dark_reference_rejected(small_grid):
    with pytest.raises(WfsSignalError):
        make_wfs(small_grid, reference=ComplexField(np.zeros((128, 128)), small_grid))


def test_zero_commands_leave_field_untouched(setup):
    _, ref, dm, _, _ = setup
    assert dm_apply(ref, dm) is ref


def test_single_poke_is_a_gaussian_bump(setup):
    grid, _, dm, _, _ = setup
    k = dm.n_actuators // 2  # central actuator
    surf = dm.influence(k)
    ax, ay = dm.positions()
    iy, ix = np.unravel_index(np.argmax(surf), surf.shape)
    assert abs(grid.axis()[ix] - ax[k]) <= grid.pitch
    assert abs(grid.axis()[iy] - ay[k]) <= grid.pitch
    fwhm = 2 * np.sqrt(2 * np.log(2)) * dm.sigma
    width = np.sum(surf[iy] >= 0.5 * surf.max()) * grid.pitch
    assert width == pytest.approx(fwhm, abs=2 * grid.pitch)
    # neighbour coupling at one actuator pitch
    assert np.exp(-dm.pitch ** 2 / (2 * dm.sigma ** 2)) == pytest.approx(dm.coupling)


def test_stroke_is_clipped(setup):
    _, _, dm, _, _ = setup
    big = dm.with_commands(np.full(dm.n_actuators, 100.0))
    assert big.clipped
    limit = dm.with_commands(np.full(dm.n_actuators, dm.stroke))
    assert np.allclose(big.surface(), limit.surface())


def test_reconstructor_inverts_retained_modes(setup):
    *_, cal = setup
    v = cal.right_vectors[:cal.n_retained]
    rm = v @ cal.reconstructor @ cal.interaction @ v.T
    assert np.max(np.abs(rm - np.eye(cal.n_retained))) < 1e-6
    assert np.isfinite(cal.condition)


def test_discarded_modes_are_unseen(setup):
    *_, cal = setup
    s0 = cal.singular_values[0]
    for v in cal.discarded_modes():
        assert np.linalg.norm(cal.interaction @ v) < cal.tau * s0


def test_zero_aberration_keeps_mirror_flat(setup):
    *_, cal = setup
    ref = setup[1]
    state = LoopState(cal)
    for _ in range(5):
        loop_step(state, ref)
    assert np.max(np.abs(state.commands)) < 1e-12


def test_fitted_mirror_reaches_fitting_floor(setup):
    grid, ref, dm, _, _ = setup
    screen = gen_screen_fft(2e-3 / 1.7, grid, 21)
    mask = grid.pupil()
    a = np.stack([dm.influence(k)[mask] for k in range(dm.n_actuators)] + [np.ones(mask.sum())], axis=1)
    coef, *_ = np.linalg.lstsq(a, screen.phase[mask], rcond=None)
    fitted = dm.with_commands(coef[:-1])
    corrected = dm_apply(apply_screen(ref, screen), fitted)
    floor = fitting_error(screen.phase, dm)
    assert residual_rms(corrected, ref) <= floor * 1.01
    assert residual_rms(apply_screen(ref, screen), ref) > 3 * floor


def test_static_loop_converges(setup):
    grid, ref, _, _, cal = setup
    screen = gen_screen_fft(2e-3 / 1.7, grid, 4)
    aberrated = apply_screen(ref, screen)
    state = LoopState(cal, gain=0.4, leak=1.0)
    for _ in range(51):
        loop_step(state, aberrated, None, ref)
    assert state.residuals[-1] < 2 * np.pi / 10
    assert state.residuals[-1] < 0.5 * state.residuals[0]


def test_signal_beam_gets_the_same_correction(setup):
    grid, ref, _, _, cal = setup
    state = LoopState(cal)
    state.commands = np.linspace(-0.5, 0.5, cal.dm.n_actuators)
    sig = plane_reference(grid)
    _, out = loop_step(state, ref, sig)
    expect = dm_apply(sig, cal.dm.with_commands(np.linspace(-0.5, 0.5, cal.dm.n_actuators)))
    assert np.allclose(out.samples, expect.samples)


def test_residual_rms_ignores_piston(setup):
    grid, ref, _, _, _ = setup
    shifted = ComplexField(ref.samples * np.exp(1j * 0.7), grid)
    assert residual_rms(shifted, ref) < 1e-12
    screen = PhaseScreen(0.2 * zernike_map(4, grid), grid, np.nan, "astig")
    assert residual_rms(apply_screen(ref, screen), ref) == pytest.approx(0.2, rel=0.02)

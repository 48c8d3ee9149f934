import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aoqkd.field import ComplexField, GridSpec, fiber_coupling, make_gaussian, make_oam_mode, overlap
from aoqkd.link import Link
from aoqkd.propagation import (AliasingError, ChannelSpec, Free, Screen, apply_screen, far_field,
                               propagate_free, run_channel)
from aoqkd.turbulence import PhaseScreen, gen_screen_fft

W0 = 1e-3


def _second_moment_waist(f: ComplexField) -> float:
    x, _ = f.grid.xy()
    i = f.intensity
    return 2 * np.sqrt((i * x ** 2).sum() / i.sum())


def _analytic_lg(ell, w0, z, grid):
    k = 2 * np.pi / grid.wavelength
    zr = np.pi * w0 ** 2 / grid.wavelength
    w = w0 * np.sqrt(1 + (z / zr) ** 2)
    curv = z / (z ** 2 + zr ** 2)  # 1/R
    rho, phi = grid.polar()
    s = (np.sqrt(2) * rho / w) ** abs(ell) * np.exp(-(rho / w) ** 2) * np.exp(1j * ell * phi) \
        * np.exp(1j * k * rho ** 2 * curv / 2)
    return ComplexField(s, grid).normalized()


def test_zero_distance_is_identity(grid):
    m = make_oam_mode(2, W0, grid)
    assert np.max(np.abs(propagate_free(m, 0.0).samples - m.samples)) < 1e-12


@settings(max_examples=8, deadline=None)
@given(st.floats(-1.0, 1.0))
def test_propagation_conserves_power(z):
    grid = GridSpec.default(n=64)
    m = make_oam_mode(1, W0, grid)
    assert propagate_free(m, z, check=False).power == pytest.approx(m.power, rel=1e-10)


def test_forward_then_back_returns(grid):
    m = make_oam_mode(-3, W0, grid)
    back = propagate_free(propagate_free(m, 0.8), -0.8)
    assert np.max(np.abs(back.samples - m.samples)) < 1e-10


def test_gaussian_spreads_as_predicted(grid):
    w0, z = 0.3e-3, 0.5
    zr = np.pi * w0 ** 2 / grid.wavelength
    out = propagate_free(make_gaussian(w0, grid), z)
    assert _second_moment_waist(out) == pytest.approx(w0 * np.sqrt(1 + (z / zr) ** 2), rel=0.01)


def test_lg_mode_follows_analytic_propagation(grid):
    w0, z = 0.4e-3, 0.6
    out = propagate_free(make_oam_mode(2, w0, grid), z)
    assert abs(overlap(_analytic_lg(2, w0, z, grid), out)) ** 2 >= 0.999


def test_aliasing_is_reported(small_grid):
    with pytest.raises(AliasingError) as err:
        propagate_free(make_gaussian(0.2e-3, small_grid), 500.0)
    assert err.value.z_max < 500.0


def test_flat_screen_is_identity(grid):
    m = make_oam_mode(1, W0, grid)
    assert np.array_equal(apply_screen(m, PhaseScreen.flat(grid)).samples, m.samples)


def test_phase_conjugation_flattens(grid):
    m = make_oam_mode(3, W0, grid)
    out = apply_screen(m, PhaseScreen(-m.phase, grid, np.nan, "conjugate"))
    lit = m.intensity > 1e-6 * m.intensity.max()
    assert np.max(np.abs(np.angle(out.samples[lit]))) < 1e-9


def test_tilt_moves_far_field_centroid(grid):
    df = 1 / grid.extent
    f0 = 8 * df  # cycles per meter, i.e. an angle of lambda f0
    x, _ = grid.xy()
    tilted = apply_screen(make_gaussian(W0, grid), PhaseScreen(2 * np.pi * f0 * x, grid, np.nan, "tilt"))
    ff = np.abs(far_field(tilted)) ** 2
    f = (np.arange(grid.n) - grid.n // 2) * df
    fx = (ff.sum(axis=0) * f).sum() / ff.sum()
    assert grid.wavelength * fx == pytest.approx(grid.wavelength * f0, rel=0.02)


def test_empty_channel_is_identity(grid):
    m = make_gaussian(W0, grid)
    assert np.array_equal(run_channel(m, ChannelSpec()).samples, m.samples)
    out = run_channel(m, ChannelSpec((Screen(PhaseScreen.flat(grid)), Free(0.0))))
    assert np.max(np.abs(out.samples - m.samples)) < 1e-12


def test_channel_composition_and_aperture(grid):
    a = ChannelSpec((Free(0.3),))
    b = ChannelSpec((Free(0.2),), aperture=grid.aperture)
    both = a + b
    assert both.length == pytest.approx(0.5)
    m = make_oam_mode(2, W0, grid)
    out = run_channel(m, both)
    ref = propagate_free(m, 0.5)
    rho, _ = grid.polar()
    assert np.all(out.samples[rho > grid.aperture / 2] == 0)
    assert out.power == pytest.approx(ref.power, rel=1e-4)  # the pupil clips only the far tail
    with pytest.raises(ValueError):
        both + a
    with pytest.raises(ValueError):
        Free(-1.0)


def test_turbulence_drops_ensemble_coupling(small_grid):
    link = Link(small_grid, W0, 2e-3 / 1.7)
    vals = []
    for k in range(12):
        out = run_channel(link.mode_at_screen(0), ChannelSpec(
            (Screen(gen_screen_fft(link.r0, small_grid, k)), Free(link.geometry.to_receiver)), small_grid.aperture))
        vals.append(link.coupling(out))
    assert np.mean(vals) < 0.6
    clean = run_channel(make_gaussian(W0, small_grid), link.channel_spec(PhaseScreen.flat(small_grid)))
    assert fiber_coupling(make_gaussian(W0, small_grid), W0) == pytest.approx(1, abs=1e-9)
    assert link.coupling(clean) == pytest.approx(1, abs=1e-6)

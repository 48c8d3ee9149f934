import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aoqkd.field import GridSpec
from aoqkd.turbulence import gen_screen_fft
from aoqkd.zernike import (JMAX, ZernikeSpectrum, _radial, decompose, index_from_nm, nm_from_index,
                           reconstruct, zernike_eval, zernike_map, zernike_name)


def _disk_gram(jmax, n_rho=40, n_phi=64):
    """Gram matrix on the unit disk by Gauss-Legendre in rho and the trapezoid rule in phi.

    Both rules are exact for the polynomial and trigonometric orders involved.
    """
    x, w = np.polynomial.legendre.leggauss(n_rho)
    rho = (x + 1) / 2
    w_rho = w / 2 * rho  # Jacobian rho d rho
    phi = np.arange(n_phi) * 2 * np.pi / n_phi
    r, p = np.meshgrid(rho, phi, indexing="ij")
    wt = (w_rho[:, None] * np.full(n_phi, 2 * np.pi / n_phi)[None, :]) / np.pi
    z = np.stack([zernike_eval(j, r, p) for j in range(1, jmax + 1)])
    return np.einsum("aij,bij,ij->ab", z, z, wt)


def test_piston_is_one():
    assert np.all(zernike_eval(1, np.linspace(0, 1, 5), np.linspace(0, 6, 5)) == 1)


def test_defocus_radial_zero():
    assert _radial(2, 0, np.array(1 / np.sqrt(2))) == pytest.approx(0, abs=1e-15)


def test_orthonormal_on_unit_disk():
    g = _disk_gram(28)
    assert np.max(np.abs(g - np.eye(28))) < 1e-6


@given(st.integers(1, JMAX))
def test_index_round_trip(j):
    n, m = nm_from_index(j)
    assert abs(m) <= n and (n - m) % 2 == 0
    assert index_from_nm(n, m) == j


def test_ansi_names():
    assert nm_from_index(2) == (1, -1)
    assert nm_from_index(5) == (2, 0)
    assert zernike_name(5) == "Defocus"
    with pytest.raises(ValueError):
        nm_from_index(JMAX + 1)


def test_single_mode_decomposes_exactly(grid):
    phase = 0.3 * zernike_map(4, grid)
    a = decompose(phase, grid, jmax=10).coeffs
    assert a[3] == pytest.approx(0.3, abs=1e-12)
    assert np.max(np.abs(np.delete(a, 3))) < 1e-6


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=15, max_size=15))
def test_decompose_reconstruct_idempotent(coeffs):
    grid = GridSpec.default(n=64)
    spec = ZernikeSpectrum(np.array(coeffs), grid.aperture / 2)
    back = decompose(reconstruct(spec, grid), grid, jmax=15)
    assert np.max(np.abs(back.coeffs - spec.coeffs)) < 1e-8


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_projection_leaves_nonnegative_residual(seed):
    grid = GridSpec.default(n=64)
    screen = gen_screen_fft(1e-3, grid, seed)
    pupil = grid.pupil()
    ph = screen.phase[pupil]
    fit = reconstruct(decompose(screen, jmax=21), grid)[pupil]
    res = ph - fit
    # least squares on the pixel grid: residual orthogonal to the fit
    e = np.sum(ph ** 2)
    assert abs(np.sum(res * fit)) < 1e-9 * e
    assert np.sum(res ** 2) <= e * (1 + 1e-12)
    assert np.sum(fit ** 2) + np.sum(res ** 2) == pytest.approx(e, rel=1e-9)


def test_jmax_out_of_range(grid):
    with pytest.raises(ValueError):
        decompose(np.zeros((grid.n, grid.n)), grid, jmax=JMAX + 1)


def test_spectrum_csv(tmp_path):
    ZernikeSpectrum(np.array([0.0, 0.1, -0.2]), 1e-3).to_csv(tmp_path / "z.csv")
    lines = (tmp_path / "z.csv").read_text().splitlines()
    assert lines[0] == "index,name,coefficient"
    assert lines[2] == "2,Tip Y,0.1"

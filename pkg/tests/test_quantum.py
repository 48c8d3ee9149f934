import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import unitary_group

from aoqkd.field import GridSpec, make_oam_mode, overlap, superpose
from aoqkd.quantum import (ProcessMatrix, build_mubs, build_mubs_dim4, chi_from_unitary, choi, depolarizing_chi,
                           gell_mann, ideal_chi, is_prime, probabilities_from_chi, probability_table,
                           process_fidelity, reconstruct_chi, trace_preserving, write_table_csv)

DIMS = [2, 3, 4, 5]


def _chi_from_kraus(kraus):
    d = kraus[0].shape[0]
    s = gell_mann(d)
    chi = np.zeros((d * d, d * d), dtype=complex)
    for k in kraus:
        c = np.array([np.trace(m.conj().T @ k) for m in s])
        chi += np.outer(c, c.conj()) / d
    return chi


def _random_kraus(d, r, rng):
    """r Kraus operators from a random isometry C^d -> C^(d r)."""
    v = unitary_group.rvs(d * r, random_state=rng)[:, :d]
    return [v[i * d:(i + 1) * d] for i in range(r)]


def _table_from_kraus(kraus, mubs):
    b = mubs.bases
    p = sum(np.abs(np.einsum("xim,ij,yjn->xmyn", b.conj(), k, b)) ** 2 for k in kraus)
    return p


@given(st.integers(2, 6))
def test_gell_mann_basis(d):
    s = gell_mann(d)
    assert s.shape == (d * d, d, d)
    gram = np.einsum("aij,bij->ab", s.conj(), s)  # Tr(s_a^dag s_b)
    assert np.allclose(gram, np.eye(d * d), atol=1e-12)
    assert np.allclose(s, s.conj().transpose(0, 2, 1))
    assert np.allclose(s[0], np.eye(d) / np.sqrt(d))
    assert np.allclose(np.einsum("aij,ajk->ik", s.conj().transpose(0, 2, 1), s), d * np.eye(d))


def test_is_prime():
    assert [n for n in range(20) if is_prime(n)] == [2, 3, 5, 7, 11, 13, 17, 19]


def test_mub_d2_second_basis():
    b = build_mubs(2).bases[1]
    for t, v in enumerate(([1, 1], [1, -1])):
        v = np.array(v) / np.sqrt(2)
        assert abs(abs(np.vdot(v, b[:, t])) - 1) < 1e-12


@pytest.mark.parametrize("d", DIMS)
def test_mubs_are_unbiased(d):
    m = build_mubs(d)
    assert m.n_bases == d + 1
    assert m.max_deviation() < 1e-12


def test_mub_d5_has_six_bases():
    assert build_mubs(5).n_bases == 6


def test_mub_d4_explicit_list():
    m = build_mubs_dim4()
    assert np.allclose(m.state(2, 0), 0.5 * np.array([1, 1j, 1j, -1]))
    vecs = m.bases.transpose(0, 2, 1).reshape(-1, 4)
    assert len(vecs) == 20
    assert np.allclose(np.linalg.norm(vecs, axis=1), 1)
    assert m.max_deviation() < 1e-12


def test_mubs_need_prime_or_four():
    with pytest.raises(ValueError):
        build_mubs(6)


@pytest.mark.parametrize("d", DIMS)
def test_identity_channel_table(d):
    p = probability_table(np.eye(d), build_mubs(d))
    for a in range(d + 1):
        for b in range(d + 1):
            expect = np.eye(d) if a == b else np.full((d, d), 1 / d)
            assert np.max(np.abs(p[a, :, b, :] - expect)) < 1e-12


def test_tilted_field_table_matches_direct_overlaps():
    grid = GridSpec.default(n=128)
    d = 3
    modes = [make_oam_mode(ell, 1e-3, grid) for ell in (-1, 0, 1)]
    x, _ = grid.xy()
    tilt = np.exp(1j * 0.6 * x / 1e-3)
    t = np.array([[overlap(mj, type(mk)(mk.samples * tilt, grid)) for mk in modes] for mj in modes])
    mubs = build_mubs(d)
    table = probability_table(t, mubs)
    direct = np.zeros_like(table)
    for a in range(d + 1):
        for n in range(d):
            sent = superpose(modes, mubs.state(a, n))
            sent = type(sent)(sent.samples * tilt, grid)
            for b in range(d + 1):
                for m in range(d):
                    direct[b, m, a, n] = abs(overlap(superpose(modes, mubs.state(b, m)), sent)) ** 2
    direct /= direct.sum(axis=1, keepdims=True)
    assert np.max(np.abs(table - direct)) < 1e-3
    assert table[1, :, 1, :].trace() / d < 0.999  # the tilt really does scatter


def test_identity_reconstruction():
    for d in DIMS:
        chi = reconstruct_chi(probability_table(np.eye(d), build_mubs(d)), d)
        assert chi.chi[0, 0].real == pytest.approx(1, abs=1e-6)
        assert process_fidelity(chi, ideal_chi(d)) == pytest.approx(1, abs=1e-6)


def test_depolarizing_table_gives_one_ninth():
    d = 3
    table = np.full((d + 1, d, d + 1, d), 1 / d)
    chi = reconstruct_chi(table, d)
    assert np.allclose(chi.chi, np.eye(d * d) / d ** 2, atol=1e-9)
    assert process_fidelity(chi, ideal_chi(d)) == pytest.approx(1 / 9, abs=1e-3)


@pytest.mark.parametrize("d", DIMS)
def test_table_from_chi_matches_kraus_oracle(d):
    rng = np.random.default_rng(d)
    kraus = _random_kraus(d, 2, rng)
    chi = ProcessMatrix(_chi_from_kraus(kraus))
    assert np.max(np.abs(probabilities_from_chi(chi) - _table_from_kraus(kraus, build_mubs(d)))) < 1e-12


@settings(max_examples=12, deadline=None)
@given(st.sampled_from(DIMS), st.integers(0, 2 ** 32 - 1), st.integers(1, 3))
def test_round_trip_recovers_general_channels(d, seed, rank):
    rng = np.random.default_rng(seed)
    kraus = _random_kraus(d, rank, rng)
    truth = ProcessMatrix(_chi_from_kraus(kraus))
    est = reconstruct_chi(_table_from_kraus(kraus, build_mubs(d)), d)
    assert np.linalg.norm(est.chi - truth.chi) < 1e-6
    assert process_fidelity(est, truth) > 1 - 1e-6


@settings(max_examples=10, deadline=None)
@given(st.sampled_from(DIMS), st.integers(0, 2 ** 32 - 1))
def test_reconstruction_is_physical_under_noise(d, seed):
    rng = np.random.default_rng(seed)
    u = unitary_group.rvs(d, random_state=rng)
    table = probabilities_from_chi(chi_from_unitary(u)) + 0.02 * rng.random((d + 1, d, d + 1, d))
    table /= table.sum(axis=1, keepdims=True)
    est = reconstruct_chi(table, d)
    assert est.is_physical()
    assert np.trace(est.chi).real == pytest.approx(1, abs=1e-9)
    # trace preserving: sum_mn chi_mn s_n^dag s_m = I / d
    s = gell_mann(d)
    tp = np.einsum("mn,nji,mjk->ik", est.chi, s.conj(), s)
    assert np.allclose(tp, np.eye(d) / d, atol=1e-8)


def test_unitary_channel_applies_unitary():
    rng = np.random.default_rng(3)
    u = unitary_group.rvs(3, random_state=rng)
    rho = np.diag([0.5, 0.3, 0.2]).astype(complex)
    assert np.allclose(chi_from_unitary(u).apply(rho), u @ rho @ u.conj().T)


def test_fidelity_properties():
    rng = np.random.default_rng(8)
    a = ProcessMatrix(_chi_from_kraus(_random_kraus(3, 2, rng)))
    b = ProcessMatrix(_chi_from_kraus(_random_kraus(3, 3, rng)))
    assert process_fidelity(a, a) == pytest.approx(1, abs=1e-9)
    assert process_fidelity(a, b) == pytest.approx(process_fidelity(b, a), abs=1e-9)
    assert process_fidelity(ideal_chi(2), depolarizing_chi(2)) == pytest.approx(0.25, abs=1e-6)


def test_fidelity_rejects_unphysical():
    bad = ProcessMatrix(np.diag([1.2, -0.2, 0, 0]).astype(complex))
    assert not bad.is_physical()
    with pytest.raises(ValueError):
        process_fidelity(bad, ideal_chi(2))


def test_process_matrix_validation():
    with pytest.raises(ValueError):
        ProcessMatrix(np.array([[1, 1], [0, 0]], dtype=complex))


def test_incomplete_table_rejected():
    with pytest.raises(ValueError):
        reconstruct_chi(np.ones((3, 3, 3, 3)), 3)


def test_trace_preserving_keeps_valid_channels():
    chi = chi_from_unitary(unitary_group.rvs(4, random_state=np.random.default_rng(0)))
    assert np.allclose(trace_preserving(chi).chi, chi.chi, atol=1e-10)
    j = choi(chi)
    assert np.allclose(j, j.conj().T)


def test_artifacts(tmp_path):
    chi = ideal_chi(2)
    chi.to_csv(tmp_path / "chi.csv")
    chi.to_json(tmp_path / "chi.json", condition="test")
    rows = (tmp_path / "chi.csv").read_text().splitlines()
    assert rows[0] == "row,col,re,im"
    assert len(rows) == 1 + 16
    doc = json.loads((tmp_path / "chi.json").read_text())
    assert doc["condition"] == "test"
    write_table_csv(tmp_path / "t.csv", probability_table(np.eye(2), build_mubs(2)))
    assert len((tmp_path / "t.csv").read_text().splitlines()) == 1 + 36

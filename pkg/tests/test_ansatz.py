import itertools
import logging

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from efsqd import fockspace
from efsqd.amplitudes import AmplitudeData, cluster_terms, mp2_amplitudes, read_amplitudes, write_amplitudes
from efsqd.ansatz import (
    SectorSpace,
    build_hs_operators,
    determinant_from_fields,
    double_factorize_t2,
    hs_quadrature,
    noci_coefficients,
    optimize_noci_fields,
    sample_hs_determinants,
)
from efsqd.bench import fci_ground_state, hartree_fock_energy
from efsqd.simulator import apply_lucj, basis_state


def random_amplitudes(rng, m, na, nb, scale=0.1):
    def same(n):
        t = scale * rng.standard_normal((m - n, n, m - n, n))
        t = t - t.transpose(2, 1, 0, 3)
        return 0.5 * (t - t.transpose(0, 3, 2, 1))

    return AmplitudeData(m, na, nb, same(na), same(nb), scale * rng.standard_normal((m - na, na, m - nb, nb)))


def fock(terms, m):
    return fockspace.operator_matrix(terms, np.arange(1 << (2 * m))).toarray()


def one_body_two_spin(a, b, m):
    return fock(fockspace.one_body_terms(a, 0) + fockspace.one_body_terms(b, m), m)


def reference_vector(amp):
    m = amp.num_orbitals
    e = np.zeros(1 << (2 * m), dtype=complex)
    e[amp.reference[0] | amp.reference[1] << m] = 1
    return e


# amplitudes ---------------------------------------------------------------


def test_amplitude_antisymmetry_enforced():
    t = np.zeros((2, 2, 2, 2))
    t[0, 0, 1, 1] = 0.1
    with pytest.raises(ValueError):
        AmplitudeData(4, 2, 2, t, np.zeros((2, 2, 2, 2)), np.zeros((2, 2, 2, 2)))
    with pytest.raises(ValueError):
        AmplitudeData(4, 2, 2, np.zeros((2, 2, 2, 1)), np.zeros((2, 2, 2, 2)), np.zeros((2, 2, 2, 2)))


def test_amplitude_file_round_trip(rng):
    amp = random_amplitudes(rng, 5, 3, 2)
    again = read_amplitudes(write_amplitudes(amp))
    for name in ("t2_aa", "t2_bb", "t2_ab"):
        assert np.array_equal(getattr(again, name), getattr(amp, name))


@pytest.mark.parametrize(
    "text",
    ["4 2\n", "4 2 2\nab 1 1 3 1 0.1\n", "4 2 2\nxx 3 1 3 1 0.1\n", "4 2 2\nab 3 1 3 1\n", "# only a comment\n"],
)
def test_amplitude_file_errors(text):
    with pytest.raises(ValueError):
        read_amplitudes(text if "\n" in text else text + "\n")


def test_mp2_matches_closed_form(h2):
    amp = mp2_amplitudes(h2)
    ea, _ = h2.fock_diagonal()
    expected = h2.eri[1, 0, 1, 0] / (2 * ea[0] - 2 * ea[1])
    assert amp.t2_ab[0, 0, 0, 0] == pytest.approx(expected)
    assert not np.any(amp.t2_aa) and not np.any(amp.t2_bb)


def test_mp2_energy_from_amplitudes(h4):
    # E2 = sum t (ai|bj) over opposite spin + 1/4 sum t <ab||ij> per same spin; must lie between FCI and HF
    amp = mp2_amplitudes(h4)
    g = h4.eri
    n = 2
    occ, vir = range(n), range(n, 4)
    e2 = np.einsum("aibj,aibj->", amp.t2_ab, g[np.ix_(vir, occ, vir, occ)])
    anti = g[np.ix_(vir, occ, vir, occ)] - g[np.ix_(vir, occ, vir, occ)].transpose(0, 3, 2, 1)
    e2 += 2 * 0.25 * np.einsum("aibj,aibj->", amp.t2_aa, anti)
    assert fci_ground_state(h4).energy < hartree_fock_energy(h4) + e2 < hartree_fock_energy(h4)


# Hubbard-Stratonovich operators ---------------------------------------------


def test_zero_amplitudes_give_no_operators():
    assert len(build_hs_operators(AmplitudeData.zeros(4, 2, 2))) == 0


def test_single_amplitude_gives_four_operators():
    amp = AmplitudeData.zeros(4, 2, 2)
    t = amp.t2_ab.copy()
    t[1, 0, 0, 1] = 0.1
    ops = build_hs_operators(AmplitudeData(4, 2, 2, amp.t2_aa, amp.t2_bb, t))
    assert len(ops.singular_values) == 1 and len(ops) == 4
    assert ops.singular_values[0] == pytest.approx(0.1)


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), shape=st.sampled_from([(3, 1, 1), (3, 2, 1), (4, 2, 2), (4, 1, 2)]))
def test_sum_of_squares_identity(seed, shape):
    rng = np.random.default_rng(seed)
    m, na, nb = shape
    amp = random_amplitudes(rng, m, na, nb, scale=0.5)
    ops = build_hs_operators(amp)
    squares = sum(0.5 * np.linalg.matrix_power(one_body_two_spin(a, b, m), 2) for a, b in ops.operators)
    t = fock(cluster_terms(amp, "ab"), m)
    assert np.abs(squares - (t - t.conj().T)).max() < 1e-10
    # the same-spin parts plus the squares give the whole generator
    full = fock(cluster_terms(amp), m)
    same = fock(cluster_terms(amp, "aa,bb"), m)
    assert np.abs((same - same.conj().T) + squares - (full - full.conj().T)).max() < 1e-10


def test_quadrature_reproduces_gaussian_exponential(rng):
    amp = random_amplitudes(rng, 3, 1, 1, scale=0.8)
    ops = build_hs_operators(amp)
    a, b = ops.operators[0]
    x = one_body_two_spin(a, b, 3)
    target = scipy.linalg.expm(x @ x / 2) @ reference_vector(amp)
    errors = [np.abs(hs_quadrature(a, b, amp.reference, n) - target).max() for n in (5, 10, 20)]
    assert errors[2] < 1e-8
    assert errors[0] > errors[1] > errors[2]


def test_determinants_from_fields(rng, h4):
    amp = mp2_amplitudes(h4)
    ops = build_hs_operators(amp)
    hf = determinant_from_fields(ops, np.zeros(len(ops)), amp.reference)
    ua, vb = hf.spin_vectors()
    assert abs(ua[0b0011]) == pytest.approx(1) and abs(vb[0b0011]) == pytest.approx(1)
    for det in sample_hs_determinants(ops, 5, rng, amp.reference):
        y = det.fields
        xa, xb = ops.combine(y)
        exact = scipy.linalg.expm(one_body_two_spin(xa, xb, 4)) @ reference_vector(amp)
        ua, vb = det.spin_vectors()
        assert abs(det.scale) > 0
        assert np.abs(det.scale * np.kron(vb, ua) - exact).max() < 1e-10
    with pytest.raises(ValueError):
        sample_hs_determinants(ops, 0, rng, amp.reference)


# NOCI ----------------------------------------------------------------------


def test_noci_single_hf(h4):
    amp = mp2_amplitudes(h4)
    ops = build_hs_operators(amp)
    hf = determinant_from_fields(ops, np.zeros(len(ops)), amp.reference)
    res = noci_coefficients(h4, [hf])
    assert res.energy == pytest.approx(hartree_fock_energy(h4), abs=1e-10)
    assert res.coefficients == pytest.approx([1.0])


def test_noci_duplicate_determinants(h4, rng):
    amp = mp2_amplitudes(h4)
    ops = build_hs_operators(amp)
    det = sample_hs_determinants(ops, 1, rng, amp.reference)[0]
    single = noci_coefficients(h4, [det])
    double = noci_coefficients(h4, [det, det])
    assert double.dropped == 1
    assert double.energy == pytest.approx(single.energy, abs=1e-10)


def minor_vector(u, n, m):
    out = np.zeros(1 << m, dtype=complex)
    for rows in itertools.combinations(range(m), n):
        out[sum(1 << r for r in rows)] = np.linalg.det(u[np.ix_(rows, range(n))])
    return out


def test_noci_matches_span_minimum(h2_stretched, rng):
    ham = h2_stretched
    amp = mp2_amplitudes(ham)
    ops = build_hs_operators(amp)
    dets = sample_hs_determinants(ops, 2, rng, amp.reference)
    basis, hmat = fockspace.sector_hamiltonian(ham)
    vecs = []
    for d in dets:
        u = minor_vector(d.rotation_alpha.unitary, 1, 2)
        v = minor_vector(d.rotation_beta.unitary, 1, 2)
        vecs.append(np.kron(v, u)[basis])
    phi = np.stack(vecs, axis=1)
    oracle = scipy.linalg.eigh(phi.conj().T @ hmat.toarray() @ phi, phi.conj().T @ phi, eigvals_only=True)[0]
    res = noci_coefficients(ham, dets)
    assert res.energy == pytest.approx(oracle, abs=1e-10)
    psi = phi @ res.coefficients
    assert np.vdot(psi, psi).real == pytest.approx(1.0, abs=1e-10)


def test_noci_degenerate_basis(h2):
    from efsqd.ansatz import Determinant
    from efsqd.simulator import OrbitalRotationSpec

    det = Determinant(OrbitalRotationSpec.identity(2), OrbitalRotationSpec.identity(2), (1, 1))
    with pytest.raises(np.linalg.LinAlgError):
        noci_coefficients(h2, [det], threshold=2.0)


def test_optimization_keeps_hf_stationary(h4):
    amp = mp2_amplitudes(h4)
    ops = build_hs_operators(amp)
    opt = optimize_noci_fields(h4, ops, np.zeros((1, len(ops))), amp.reference, max_iters=10)
    assert opt.energy == pytest.approx(hartree_fock_energy(h4), abs=1e-8)


def test_optimization_is_monotone_and_improves(h2_stretched, rng):
    ham = h2_stretched
    amp = mp2_amplitudes(ham)
    ops = build_hs_operators(amp)
    fields = rng.standard_normal((2, len(ops)))
    fields[0] = 0
    opt = optimize_noci_fields(ham, ops, fields, amp.reference, max_iters=30)
    assert np.all(np.diff(opt.history) <= 1e-12)
    assert opt.energy <= hartree_fock_energy(ham) - 1e-6
    assert opt.energy >= fci_ground_state(ham).energy - 1e-10
    assert opt.energy == pytest.approx(noci_coefficients(ham, opt.determinants).energy, abs=1e-10)


def test_optimization_budget_flag(h4, rng):
    amp = mp2_amplitudes(h4)
    ops = build_hs_operators(amp)
    opt = optimize_noci_fields(h4, ops, rng.standard_normal((2, len(ops))), amp.reference, max_iters=1)
    assert not opt.converged
    assert opt.energy <= opt.history[0]


# double factorization ------------------------------------------------------


def layer_generator(layer, m):
    w, j = layer.rotation.unitary, layer.coulomb.matrix
    basis = np.arange(1 << m)
    nums = [
        fockspace.operator_matrix(fockspace.one_body_terms(np.outer(w[:, p], w[:, p].conj())), basis).toarray()
        for p in range(m)
    ]
    return 1j * sum(j[p, r] * nums[p] @ nums[r] for p in range(m) for r in range(m))


def same_spin_generator(t2, n, m):
    amp = AmplitudeData(m, n, n, t2, t2, np.zeros((m - n, n, m - n, n)))
    t = fockspace.operator_matrix(cluster_terms(amp, "aa"), np.arange(1 << m)).toarray()
    return t - t.conj().T


def test_zero_t2_gives_no_layers():
    assert double_factorize_t2(np.zeros((2, 2, 2, 2)), 2, 4) == []


@pytest.mark.parametrize("m, n", [(4, 2), (5, 2), (5, 3)])
def test_full_rank_reconstruction(rng, m, n):
    t2 = random_amplitudes(rng, m, n, n, scale=0.3).t2_aa
    layers = double_factorize_t2(t2, n, m)
    total = sum(layer_generator(layer, m) for layer in layers)
    assert np.abs(total - same_spin_generator(t2, n, m)).max() < 1e-10


def test_trotter_defect(rng):
    # pair spaces with one occupied or one virtual pair are exact; 3 in 6 is not
    for m, n in ((4, 2), (5, 2)):
        t2 = random_amplitudes(rng, m, n, n, scale=0.3).t2_aa
        hf = basis_state(m, (1 << n) - 1)
        exact = scipy.linalg.expm(same_spin_generator(t2, n, m)) @ hf.amplitudes
        assert np.linalg.norm(apply_lucj(hf, double_factorize_t2(t2, n, m)).amplitudes - exact) < 1e-10
    m, n = 6, 3
    t2 = random_amplitudes(rng, m, n, n, scale=1.0).t2_aa
    hf = basis_state(m, 0b000111)
    defects = []
    for scale in (0.1, 0.05):
        exact = scipy.linalg.expm(same_spin_generator(scale * t2, n, m)) @ hf.amplitudes
        defects.append(np.linalg.norm(apply_lucj(hf, double_factorize_t2(scale * t2, n, m)).amplitudes - exact))
    assert 1e-8 < defects[0] < 5e-2
    assert defects[0] / defects[1] == pytest.approx(4, rel=0.25)


def test_layer_count_clamped(rng, caplog):
    t2 = random_amplitudes(rng, 4, 2, 2).t2_aa
    with caplog.at_level(logging.WARNING):
        layers = double_factorize_t2(t2, 2, 4, num_layers=10)
    assert len(layers) == 2 * 4
    assert "clamping" in caplog.text
    assert len(double_factorize_t2(t2, 2, 4, num_layers=1)) == 2


def test_sparsity_mask_applied(rng):
    t2 = random_amplitudes(rng, 5, 2, 2).t2_aa
    for layer in double_factorize_t2(t2, 2, 5, mask="nearest"):
        j = layer.coulomb.matrix
        assert np.all(j[np.abs(np.subtract.outer(range(5), range(5))) > 1] == 0)


def test_sector_space_field_vector(h4, rng):
    amp = mp2_amplitudes(h4)
    ops = build_hs_operators(amp)
    space = SectorSpace(h4)
    det = sample_hs_determinants(ops, 1, rng, amp.reference)[0]
    raw = space.field_vector(ops, det.fields, amp.reference)
    assert np.abs(raw - det.scale * space.determinant_vector(det)).max() < 1e-10

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_hamiltonian
from efsqd import fockspace
from efsqd.slater import (
    Configuration,
    ParticleNumberError,
    build_subspace_operator,
    format_bits,
    hartree_fock_configuration,
    parse_bits,
    s2_matrix_element,
    slater_condon_element,
)


def sector_configs(m, na, nb):
    return [Configuration.from_key(int(k), m) for k in fockspace.sector_basis(m, na, nb)]


def test_bit_text_round_trip():
    assert format_bits(0b0011, 4) == "1100"
    assert parse_bits("1100") == 0b0011
    with pytest.raises(ValueError):
        parse_bits("10a1")


def test_configuration_identity():
    a = Configuration.from_strings("110", "100")
    assert a == Configuration(0b011, 0b001, 3)
    assert a.nelec == (2, 1)
    assert a.key == 0b011 | 0b001 << 3
    assert np.array_equal(a.occupations(), [1, 1, 0, 1, 0, 0])
    assert len({a, Configuration(0b011, 0b001, 3)}) == 1
    with pytest.raises(ValueError):
        Configuration(8, 0, 3)


def test_hf_diagonal_rule(h4):
    hf = hartree_fock_configuration(4, 2, 2)
    occ = [0, 1]
    h, g = h4.h1, h4.eri
    expected = h4.core_energy + 2 * sum(h[i, i] for i in occ)
    # opposite spin: all pairs; same spin: Coulomb minus exchange, twice
    expected += sum(g[i, i, j, j] for i in occ for j in occ)
    expected += sum(g[i, i, j, j] - g[i, j, j, i] for i in occ for j in occ if i != j)
    assert slater_condon_element(h4, hf, hf) == pytest.approx(expected, abs=1e-12)


def test_triple_excitation_vanishes(h4):
    m = Configuration.from_strings("1100", "1100")
    n = Configuration.from_strings("0011", "0110")
    assert slater_condon_element(h4, m, n) == 0.0


def test_particle_number_mismatch(h4):
    with pytest.raises(ParticleNumberError):
        slater_condon_element(h4, Configuration.from_strings("1100", "1100"), Configuration.from_strings("1110", "1000"))
    with pytest.raises(ParticleNumberError):
        s2_matrix_element(Configuration.from_strings("1", "0"), Configuration.from_strings("0", "1"))


def test_s2_small_cases():
    assert s2_matrix_element(*[Configuration.from_strings("1100", "1100")] * 2) == 0.0
    assert s2_matrix_element(*[Configuration.from_strings("1", "0")] * 2) == 0.75


@pytest.mark.parametrize("m, na, nb", [(2, 1, 1), (3, 2, 1), (4, 2, 2), (4, 3, 1)])
def test_matches_fock_space_oracle(rng, m, na, nb):
    ham = random_hamiltonian(rng, m, na, nb)
    configs = sector_configs(m, na, nb)
    basis = np.array([c.key for c in configs])
    h_oracle = fockspace.operator_matrix(fockspace.hamiltonian_terms(ham), basis).toarray()
    s_oracle = fockspace.operator_matrix(fockspace.spin_squared_terms(m), basis).toarray()
    op = build_subspace_operator(ham, configs)
    assert np.abs(op.hamiltonian.toarray() - h_oracle).max() < 1e-10
    assert np.abs(op.spin_squared.toarray() - s_oracle).max() < 1e-10


def test_single_excitation_pair_against_oracle(rng):
    ham = random_hamiltonian(rng, 4, 2, 2)
    m = Configuration.from_strings("1100", "1010")
    n = Configuration.from_strings("1001", "1010")
    basis = np.array([m.key, n.key])
    oracle = fockspace.operator_matrix(fockspace.hamiltonian_terms(ham), basis).toarray()
    assert slater_condon_element(ham, m, n) == pytest.approx(oracle[0, 1].real, abs=1e-10)


def test_h_commutes_with_s2(h4):
    op = build_subspace_operator(h4, sector_configs(4, 2, 2))
    h, s = op.hamiltonian.toarray(), op.spin_squared.toarray()
    assert np.abs(h @ s - s @ h).max() < 1e-10


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), size=st.integers(1, 20), penalty=st.sampled_from([0.0, 0.3]))
def test_operator_is_hermitian(seed, size, penalty):
    rng = np.random.default_rng(seed)
    ham = random_hamiltonian(rng, 4, 2, 2)
    configs = sector_configs(4, 2, 2)
    pick = rng.choice(len(configs), size=min(size, len(configs)), replace=False)
    op = build_subspace_operator(ham, [configs[i] for i in pick], penalty=penalty)
    u, v = rng.standard_normal((2, op.dim))
    assert np.dot(u, op.apply(v)) == pytest.approx(np.dot(op.apply(u), v), abs=1e-10)


def test_hf_only_operator(h4):
    hf = hartree_fock_configuration(4, 2, 2)
    op = build_subspace_operator(h4, [hf])
    assert op.dense()[0, 0] == pytest.approx(slater_condon_element(h4, hf, hf))


def test_penalty_vanishes_on_singlets(h4):
    configs = sector_configs(4, 2, 2)
    bare = build_subspace_operator(h4, configs)
    w, v = np.linalg.eigh(bare.dense())
    ground = v[:, 0]
    assert bare.spin_expectation(ground) == pytest.approx(0.0, abs=1e-10)
    for penalty in (0.1, 1.0):
        op = build_subspace_operator(h4, configs, penalty=penalty, target_spin=0)
        assert ground @ op.apply(ground) == pytest.approx(w[0], abs=1e-10)
    assert np.array_equal(build_subspace_operator(h4, configs, penalty=0.0).dense(), bare.dense())


@pytest.mark.parametrize(
    "configs, error",
    [
        ([], ValueError),
        ([Configuration.from_strings("10", "10")] * 2, ValueError),
        ([Configuration.from_strings("10", "10"), Configuration.from_strings("11", "00")], ParticleNumberError),
    ],
)
def test_invalid_subspaces(h2, configs, error):
    with pytest.raises(error):
        build_subspace_operator(h2, configs)


def test_invalid_penalty_settings(h2):
    hf = [hartree_fock_configuration(2, 1, 1)]
    with pytest.raises(ValueError):
        build_subspace_operator(h2, hf, penalty=-1)
    with pytest.raises(ValueError):
        build_subspace_operator(h2, hf, target_spin=0.3)


def test_full_two_orbital_sector(h2):
    configs = sector_configs(2, 1, 1)
    basis, oracle = fockspace.sector_hamiltonian(h2)
    assert [c.key for c in configs] == basis.tolist()
    assert np.abs(build_subspace_operator(h2, configs).dense() - oracle.toarray()).max() < 1e-12


def test_zero_rule_is_exhaustive(rng):
    ham = random_hamiltonian(rng, 4, 2, 1)
    configs = sector_configs(4, 2, 1)
    for m, n in itertools.product(configs, repeat=2):
        flips = (m.alpha ^ n.alpha).bit_count() + (m.beta ^ n.beta).bit_count()
        if flips > 4:
            assert slater_condon_element(ham, m, n) == 0.0

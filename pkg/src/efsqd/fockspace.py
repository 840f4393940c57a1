"""Brute-force fermionic operators in the Jordan-Wigner occupation basis.

A basis state is an integer whose bit ``k`` is the occupation of mode ``k``;
it stands for ``a+_{k1} a+_{k2} ... |vac>`` with ``k1 < k2 < ...``. For the
two-spin problem mode ``p`` is orbital ``p`` spin-up and mode ``M + p`` is
orbital ``p`` spin-down, so a configuration ``(alpha, beta)`` has index
``alpha | beta << M``.

Everything here works by direct action of ladder operators on bitstrings and
is deliberately independent of the Slater-Condon code in :mod:`efsqd.slater`.
"""

from __future__ import annotations

from itertools import combinations
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from efsqd.hamiltonian import ActiveSpaceHamiltonian

Ladder = tuple[int, bool]  # (mode, is_creation)
Term = tuple[complex, tuple[Ladder, ...]]


def apply_ladder(states: np.ndarray, mode: int, creation: bool):
    """Apply one ladder operator to every bitstring in ``states``.

    Returns ``(new_states, signs, valid)``; entries with ``valid == False``
    were annihilated.
    """
    bit = np.int64(1) << np.int64(mode)
    occupied = (states & bit) != 0
    valid = occupied != creation
    parity = np.bitwise_count(states & (bit - 1)) & 1
    return states ^ bit, 1 - 2 * parity.astype(np.int64), valid


def operator_matrix(terms: Iterable[Term], basis: Sequence[int] | np.ndarray, dtype=complex) -> sp.csr_matrix:
    """Matrix of ``sum_t coef_t * prod(ladders_t)`` restricted to ``basis``.

    Ladder operators in a term are written left to right as in the operator
    product; the rightmost acts first. Contributions leaving the basis are dropped.
    """
    basis = np.asarray(basis, dtype=np.int64)
    order = np.argsort(basis)
    sorted_basis = basis[order]
    dim = len(basis)
    rows, cols, vals = [], [], []
    col_index = np.arange(dim)
    for coef, ladders in terms:
        if coef == 0:
            continue
        states = basis.copy()
        amp = np.ones(dim, dtype=np.int64)
        alive = np.ones(dim, dtype=bool)
        for mode, creation in reversed(ladders):
            states, sign, valid = apply_ladder(states, mode, creation)
            amp *= sign
            alive &= valid
        pos = np.searchsorted(sorted_basis, states)
        pos = np.minimum(pos, dim - 1)
        inside = alive & (sorted_basis[pos] == states)
        rows.append(order[pos[inside]])
        cols.append(col_index[inside])
        vals.append(coef * amp[inside])
    if not rows:
        return sp.csr_matrix((dim, dim), dtype=dtype)
    mat = sp.coo_matrix(
        (np.concatenate(vals).astype(dtype), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
    )
    return mat.tocsr()


def sector_basis(num_orbitals: int, num_alpha: int, num_beta: int) -> np.ndarray:
    """Sorted Fock indices of all configurations with the given spin populations."""
    alphas = bitstrings(num_orbitals, num_alpha)
    betas = bitstrings(num_orbitals, num_beta)
    return np.sort((alphas[None, :] | (betas[:, None] << num_orbitals)).ravel())


def bitstrings(num_orbitals: int, num_particles: int) -> np.ndarray:
    """All ``num_orbitals``-bit integers with ``num_particles`` set bits, ascending."""
    out = [sum(1 << k for k in occ) for occ in combinations(range(num_orbitals), num_particles)]
    return np.array(sorted(out), dtype=np.int64)


def hamiltonian_terms(ham: ActiveSpaceHamiltonian, tol: float = 0.0) -> list[Term]:
    """Ladder-operator terms of the full two-spin Hamiltonian."""
    m = ham.num_orbitals
    terms: list[Term] = [(ham.core_energy, ())]
    for spin in (0, m):
        for p in range(m):
            for q in range(m):
                if abs(ham.h1[p, q]) > tol:
                    terms.append((ham.h1[p, q], ((p + spin, True), (q + spin, False))))
    for s1 in (0, m):
        for s2 in (0, m):
            for p, q, r, s in np.ndindex(m, m, m, m):
                v = ham.eri[p, q, r, s]
                if abs(v) > tol:
                    terms.append((0.5 * v, ((p + s1, True), (r + s2, True), (s + s2, False), (q + s1, False))))
    return terms


def register_hamiltonian_terms(h1: np.ndarray, eri: np.ndarray, tol: float = 0.0) -> list[Term]:
    """Terms of ``sum h a+_p a_q + 1/2 sum (pq|rs) a+_p a+_r a_s a_q`` on one spin register."""
    m = h1.shape[0]
    terms: list[Term] = []
    for p in range(m):
        for q in range(m):
            if abs(h1[p, q]) > tol:
                terms.append((h1[p, q], ((p, True), (q, False))))
    for p, q, r, s in np.ndindex(m, m, m, m):
        v = eri[p, q, r, s]
        if abs(v) > tol:
            terms.append((0.5 * v, ((p, True), (r, True), (s, False), (q, False))))
    return terms


def spin_squared_terms(num_orbitals: int) -> list[Term]:
    """Terms of S^2 = S- S+ + Sz + Sz^2 for the two-spin mode layout."""
    m = num_orbitals
    terms: list[Term] = []
    # S- S+ = sum_pq a+_{q,b} a_{q,a} a+_{p,a} a_{p,b}
    for p in range(m):
        for q in range(m):
            terms.append((1.0, ((q + m, True), (q, False), (p, True), (p + m, False))))
    # Sz and Sz^2 with Sz = (sum n_a - sum n_b) / 2
    for p in range(m):
        terms.append((0.5, ((p, True), (p, False))))
        terms.append((-0.5, ((p + m, True), (p + m, False))))
    for p in range(m):
        for q in range(m):
            for sp_, sq, sign in ((0, 0, 1), (m, m, 1), (0, m, -1), (m, 0, -1)):
                terms.append((0.25 * sign, ((p + sp_, True), (p + sp_, False), (q + sq, True), (q + sq, False))))
    return terms


def number_terms(modes: Iterable[int]) -> list[Term]:
    return [(1.0, ((k, True), (k, False))) for k in modes]


def one_body_terms(matrix: np.ndarray, offset: int = 0) -> list[Term]:
    """Terms of ``sum_pq matrix[p, q] a+_p a_q`` on modes shifted by ``offset``."""
    m = matrix.shape[0]
    return [
        (matrix[p, q], ((p + offset, True), (q + offset, False)))
        for p in range(m)
        for q in range(m)
        if matrix[p, q] != 0
    ]


def fock_hamiltonian(ham: ActiveSpaceHamiltonian) -> sp.csr_matrix:
    """Hamiltonian on the full ``2^(2M)`` Fock space (small ``M`` only)."""
    return operator_matrix(hamiltonian_terms(ham), np.arange(1 << (2 * ham.num_orbitals)))


def sector_hamiltonian(ham: ActiveSpaceHamiltonian) -> tuple[np.ndarray, sp.csr_matrix]:
    """Basis and Hamiltonian matrix of the ``(N_alpha, N_beta)`` sector."""
    basis = sector_basis(ham.num_orbitals, ham.num_alpha, ham.num_beta)
    mat = operator_matrix(hamiltonian_terms(ham), basis)
    return basis, mat.real.tocsr()

"""Determinant configurations, Slater-Condon matrix elements and subspace operators.

Sign convention: a configuration ``(alpha, beta)`` is the determinant
``A+(alpha) B+(beta) |vac>`` where each string creates its occupied orbitals in
ascending order and all spin-up operators stand to the left of all spin-down
ones. This is the Jordan-Wigner layout of :mod:`efsqd.fockspace`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from efsqd.hamiltonian import ActiveSpaceHamiltonian

__all__ = [
    "Configuration",
    "ParticleNumberError",
    "SubspaceOperator",
    "build_subspace_operator",
    "format_bits",
    "hartree_fock_configuration",
    "parse_bits",
    "s2_matrix_element",
    "slater_condon_element",
]


class ParticleNumberError(ValueError):
    """Configurations with different particle numbers were combined."""


def format_bits(bits: int, num_orbitals: int) -> str:
    """Render an occupation integer with orbital 0 as the leftmost character."""
    return "".join("1" if bits >> p & 1 else "0" for p in range(num_orbitals))


def parse_bits(text: str) -> int:
    """Inverse of :func:`format_bits`."""
    if not text or set(text) - {"0", "1"}:
        raise ValueError(f"not a bitstring: {text!r}")
    return sum(1 << p for p, ch in enumerate(text) if ch == "1")


@dataclass(frozen=True)
class Configuration:
    """A Slater determinant labelled by spin-up and spin-down occupation bitstrings."""

    alpha: int
    beta: int
    num_orbitals: int
    n_alpha: int = field(init=False, compare=False)
    n_beta: int = field(init=False, compare=False)

    def __post_init__(self):
        limit = 1 << self.num_orbitals
        if not (0 <= self.alpha < limit and 0 <= self.beta < limit):
            raise ValueError("bitstring does not fit in num_orbitals")
        object.__setattr__(self, "n_alpha", int(self.alpha).bit_count())
        object.__setattr__(self, "n_beta", int(self.beta).bit_count())

    @classmethod
    def from_strings(cls, alpha: str, beta: str) -> Configuration:
        if len(alpha) != len(beta):
            raise ValueError("alpha and beta strings differ in length")
        return cls(parse_bits(alpha), parse_bits(beta), len(alpha))

    @classmethod
    def from_key(cls, key: int, num_orbitals: int) -> Configuration:
        mask = (1 << num_orbitals) - 1
        return cls(key & mask, key >> num_orbitals, num_orbitals)

    @property
    def key(self) -> int:
        """Canonical integer; equal to the Fock-space index of the determinant."""
        return self.alpha | (self.beta << self.num_orbitals)

    @property
    def nelec(self) -> tuple[int, int]:
        return self.n_alpha, self.n_beta

    def occupations(self) -> np.ndarray:
        """Length-``2M`` 0/1 vector ordered (alpha orbitals, beta orbitals)."""
        m = self.num_orbitals
        return np.array([self.alpha >> p & 1 for p in range(m)] + [self.beta >> p & 1 for p in range(m)], dtype=float)

    def __lt__(self, other: Configuration) -> bool:
        return self.key < other.key

    def __str__(self) -> str:
        return f"{format_bits(self.alpha, self.num_orbitals)} {format_bits(self.beta, self.num_orbitals)}"


def hartree_fock_configuration(num_orbitals: int, num_alpha: int, num_beta: int) -> Configuration:
    return Configuration((1 << num_alpha) - 1, (1 << num_beta) - 1, num_orbitals)


def _bits(x: int) -> list[int]:
    out = []
    p = 0
    while x:
        if x & 1:
            out.append(p)
        x >>= 1
        p += 1
    return out


def _ladder_sign(bits: int, mode: int) -> int:
    return -1 if (bits & ((1 << mode) - 1)).bit_count() & 1 else 1


def _excite(bits: int, particle: int, hole: int) -> tuple[int, int]:
    """Apply ``a+_particle a_hole``; return (sign, new bits). Caller guarantees validity."""
    sign = _ladder_sign(bits, hole)
    bits ^= 1 << hole
    sign *= _ladder_sign(bits, particle)
    return sign, bits | (1 << particle)


def _check_same_sector(m: Configuration, n: Configuration):
    if m.num_orbitals != n.num_orbitals:
        raise ValueError("configurations have different orbital counts")
    if m.nelec != n.nelec:
        raise ParticleNumberError(f"particle numbers differ: {m.nelec} vs {n.nelec}")


def _diagonal_energy(ham: ActiveSpaceHamiltonian, occ_a: list[int], occ_b: list[int]) -> float:
    h1, eri = ham.h1, ham.eri
    energy = ham.core_energy + sum(h1[i, i] for i in occ_a) + sum(h1[i, i] for i in occ_b)
    occ = occ_a + occ_b
    for i in occ:
        for j in occ:
            energy += 0.5 * eri[i, i, j, j]
    for same in (occ_a, occ_b):
        for i in same:
            for j in same:
                energy -= 0.5 * eri[i, j, j, i]
    return energy


def slater_condon_element(ham: ActiveSpaceHamiltonian, m: Configuration, n: Configuration) -> float:
    """``<m|H|n>`` by the Slater-Condon rules."""
    _check_same_sector(m, n)
    diff_a = m.alpha ^ n.alpha
    diff_b = m.beta ^ n.beta
    order = (diff_a.bit_count() + diff_b.bit_count()) // 2
    if order > 2:
        return 0.0
    h1, eri = ham.h1, ham.eri
    occ_a, occ_b = _bits(n.alpha), _bits(n.beta)
    if order == 0:
        return _diagonal_energy(ham, occ_a, occ_b)
    if order == 1:
        if diff_a:
            (hole,), (part,) = _bits(diff_a & n.alpha), _bits(diff_a & m.alpha)
            sign, _ = _excite(n.alpha, part, hole)
            same, other = occ_a, occ_b
        else:
            (hole,), (part,) = _bits(diff_b & n.beta), _bits(diff_b & m.beta)
            sign, _ = _excite(n.beta, part, hole)
            same, other = occ_b, occ_a
        value = h1[part, hole]
        for j in same:
            value += eri[part, hole, j, j] - eri[part, j, j, hole]
        for j in other:
            value += eri[part, hole, j, j]
        return sign * value
    if diff_a and diff_b:
        (i,), (a,) = _bits(diff_a & n.alpha), _bits(diff_a & m.alpha)
        (j,), (b,) = _bits(diff_b & n.beta), _bits(diff_b & m.beta)
        sign = _excite(n.alpha, a, i)[0] * _excite(n.beta, b, j)[0]
        return sign * eri[a, i, b, j]
    ket, bra = (n.alpha, m.alpha) if diff_a else (n.beta, m.beta)
    diff = ket ^ bra
    i, j = _bits(diff & ket)
    a, b = _bits(diff & bra)
    # <bra| a+_a a_i a+_b a_j |ket>
    s1, mid = _excite(ket, b, j)
    s2, _ = _excite(mid, a, i)
    return s1 * s2 * (eri[a, i, b, j] - eri[a, j, b, i])


def s2_matrix_element(m: Configuration, n: Configuration) -> float:
    """``<m|S^2|n>`` between two determinants."""
    _check_same_sector(m, n)
    diff_a = m.alpha ^ n.alpha
    diff_b = m.beta ^ n.beta
    if not diff_a and not diff_b:
        na, nb = n.nelec
        paired = (n.alpha & n.beta).bit_count()
        return (na - nb) ** 2 / 4 + (na + nb) / 2 - paired
    if diff_a.bit_count() != 2 or diff_b.bit_count() != 2:
        return 0.0
    # spin flip pair: alpha q -> p together with beta p -> q
    (q,), (p,) = _bits(diff_a & n.alpha), _bits(diff_a & m.alpha)
    if diff_b & n.beta != 1 << p or diff_b & m.beta != 1 << q:
        return 0.0
    # a+_{pa} a_{pb} a+_{qb} a_{qa} = -(a+_{pa} a_{qa})(a+_{qb} a_{pb})
    return -float(_excite(n.alpha, p, q)[0] * _excite(n.beta, q, p)[0])


@dataclass(frozen=True)
class SubspaceOperator:
    """Hamiltonian (plus optional spin penalty) projected onto a set of determinants.

    ``apply(v) = H_sub v + penalty * (S2_sub - s(s+1)) v``. The stored sparse
    matrices are read-only, so ``apply`` may be called from several threads.
    """

    configs: tuple[Configuration, ...]
    hamiltonian: sp.csr_matrix = field(repr=False)
    spin_squared: sp.csr_matrix = field(repr=False)
    penalty: float = 0.0
    target_spin: float = 0.0

    @property
    def dim(self) -> int:
        return len(self.configs)

    @property
    def shift(self) -> float:
        return self.target_spin * (self.target_spin + 1)

    def apply(self, v: np.ndarray) -> np.ndarray:
        out = self.hamiltonian @ v
        if self.penalty:
            out = out + self.penalty * (self.spin_squared @ v - self.shift * v)
        return out

    __matmul__ = apply

    def matrix(self) -> sp.csr_matrix:
        mat = self.hamiltonian
        if self.penalty:
            mat = mat + self.penalty * (self.spin_squared - self.shift * sp.identity(self.dim, format="csr"))
        return sp.csr_matrix(mat)

    def dense(self) -> np.ndarray:
        return self.matrix().toarray()

    def diagonal(self) -> np.ndarray:
        return self.matrix().diagonal()

    def spin_expectation(self, v: np.ndarray) -> float:
        v = np.asarray(v)
        return float(np.real(np.vdot(v, self.spin_squared @ v)) / np.real(np.vdot(v, v)))


def _connected_pairs(configs: Sequence[Configuration]) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs ``i <= j`` differing by at most a double excitation."""
    alphas = np.array([c.alpha for c in configs], dtype=np.int64)
    betas = np.array([c.beta for c in configs], dtype=np.int64)
    rows, cols = [], []
    for i in range(len(configs)):
        flips = np.bitwise_count(alphas[i:] ^ alphas[i]) + np.bitwise_count(betas[i:] ^ betas[i])
        js = np.nonzero(flips <= 4)[0] + i
        rows.append(np.full(len(js), i))
        cols.append(js)
    return np.concatenate(rows), np.concatenate(cols)


def build_subspace_operator(
    ham: ActiveSpaceHamiltonian,
    configs: Iterable[Configuration],
    penalty: float = 0.0,
    target_spin: float = 0.0,
) -> SubspaceOperator:
    """Project ``H`` (and ``S^2``) onto the span of ``configs``.

    Raises:
        ValueError: on an empty or duplicated configuration list, a negative
            penalty or a target spin that is not a non-negative half-integer.
        ParticleNumberError: if the configurations mix particle-number sectors.
    """
    configs = tuple(configs)
    if not configs:
        raise ValueError("configuration list is empty")
    if len(set(configs)) != len(configs):
        raise ValueError("configuration list contains duplicates")
    sectors = {(c.num_orbitals, c.nelec) for c in configs}
    if len(sectors) != 1:
        raise ParticleNumberError(f"configurations span several sectors: {sorted(sectors)}")
    if penalty < 0:
        raise ValueError("penalty must be non-negative")
    if target_spin < 0 or (2 * target_spin) % 1:
        raise ValueError("target spin must be a non-negative half-integer")
    dim = len(configs)
    rows, cols = _connected_pairs(configs)
    h_vals = np.empty(len(rows))
    s_vals = np.empty(len(rows))
    for k, (i, j) in enumerate(zip(rows.tolist(), cols.tolist())):
        h_vals[k] = slater_condon_element(ham, configs[i], configs[j])
        s_vals[k] = s2_matrix_element(configs[i], configs[j])
    off = rows != cols

    def assemble(vals):
        r = np.concatenate([rows, cols[off]])
        c = np.concatenate([cols, rows[off]])
        v = np.concatenate([vals, vals[off]])
        mat = sp.coo_matrix((v, (r, c)), shape=(dim, dim)).tocsr()
        mat.eliminate_zeros()
        return mat

    return SubspaceOperator(configs, assemble(h_vals), assemble(s_vals), float(penalty), float(target_spin))

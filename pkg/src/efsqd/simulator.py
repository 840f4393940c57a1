"""Exact statevector simulation of one spin register of ``M`` orbitals.

Amplitude ``k`` belongs to the occupation bitstring whose bit ``p`` is orbital
``p`` (Jordan-Wigner order, lowest orbital first). An orbital rotation ``U``
acts as ``a+_p -> sum_q U[q, p] a+_q``; under this convention the lift
``U -> Gamma(U)`` is a group homomorphism and the determinant ``Gamma(U)|ref>``
has amplitude ``det(U[z, occ(ref)])`` on bitstring ``z``.

Memory is ``16 * 2**M`` bytes per state; ``M`` is capped at 16.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

__all__ = [
    "CircuitTrace",
    "DiagonalCoulombSpec",
    "LucjLayer",
    "MAX_ORBITALS",
    "NonUnitaryError",
    "OrbitalRotationSpec",
    "SpinStatevector",
    "Superposition",
    "ancilla_superposition_circuit",
    "apply_diagonal_coulomb",
    "apply_lucj",
    "apply_orbital_rotation",
    "basis_state",
    "overlap",
    "prepare_slater",
    "prepare_superposition",
    "sample_bitstrings",
    "sample_counts",
    "superposition_state",
]

MAX_ORBITALS = 16
UNITARITY_TOL = 1e-8
NORM_TOL = 1e-8
BRANCH_TOL = 1e-8


class NonUnitaryError(ValueError):
    pass


@dataclass
class SpinStatevector:
    num_orbitals: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if not 1 <= self.num_orbitals <= MAX_ORBITALS:
            raise ValueError(f"num_orbitals must be in [1, {MAX_ORBITALS}]")
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (1 << self.num_orbitals,):
            raise ValueError("amplitude vector has the wrong length")

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def copy(self) -> SpinStatevector:
        return SpinStatevector(self.num_orbitals, self.amplitudes.copy())


def basis_state(num_orbitals: int, bits: int) -> SpinStatevector:
    amps = np.zeros(1 << num_orbitals, dtype=complex)
    amps[bits] = 1.0
    return SpinStatevector(num_orbitals, amps)


class CircuitTrace(list):
    """Ordered gate list; ``dump()`` gives one line per gate."""

    def add(self, name: str, qubits: Sequence[int], **params):
        self.append((name, tuple(qubits), params))

    def dump(self) -> str:
        lines = []
        for name, qubits, params in self:
            args = " ".join(f"{k}={_fmt(v)}" for k, v in params.items())
            lines.append(f"{name} {' '.join(map(str, qubits))} {args}".rstrip())
        return "\n".join(lines) + ("\n" if lines else "")


def _fmt(value) -> str:
    if isinstance(value, complex):
        return f"{value.real!r}{value.imag:+.17g}j"
    if isinstance(value, np.ndarray):
        return "[" + ",".join(_fmt(complex(v)) for v in value.ravel()) + "]"
    return repr(value)


def _check_unitary(u: np.ndarray):
    dev = np.abs(u.conj().T @ u - np.eye(u.shape[0])).max()
    if dev > UNITARITY_TOL:
        raise NonUnitaryError(f"rotation deviates from unitarity by {dev:.2e}")


def _givens_to_zero(a: complex, b: complex) -> np.ndarray:
    """2x2 unitary ``g`` with ``g @ [a, b] = [r, 0]``."""
    r = math.hypot(abs(a), abs(b))
    if r == 0:
        return np.eye(2, dtype=complex)
    return np.array([[np.conj(a), np.conj(b)], [-b, a]], dtype=complex) / r


def _triangular_network(u: np.ndarray) -> tuple[list[tuple[int, np.ndarray]], np.ndarray]:
    """Adjacent Givens rotations with ``g_n ... g_1 @ u = diag(phases)``."""
    m = u.shape[0]
    v = np.array(u, dtype=complex)
    gates = []
    for j in range(m - 1):
        for i in range(m - 1, j, -1):
            if abs(v[i, j]) < 1e-15:
                continue
            g = _givens_to_zero(v[i - 1, j], v[i, j])
            v[[i - 1, i], :] = g @ v[[i - 1, i], :]
            gates.append((i - 1, g))
    return gates, np.diag(v).copy()


@dataclass(frozen=True)
class OrbitalRotationSpec:
    """An ``M x M`` unitary together with its nearest-neighbour Givens network.

    ``network`` lists ``(p, g)`` pairs acting on orbitals ``(p, p+1)`` in the
    order they are applied, after the diagonal ``phases``.
    """

    unitary: np.ndarray
    network: tuple = field(repr=False, compare=False, default=())
    phases: np.ndarray = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        u = np.array(self.unitary, dtype=complex)
        if u.ndim != 2 or u.shape[0] != u.shape[1]:
            raise ValueError("rotation must be a square matrix")
        _check_unitary(u)
        u.flags.writeable = False
        gates, phases = _triangular_network(u)
        # u = g_1^+ ... g_n^+ diag(phases): apply phases, then g_n^+, ..., g_1^+
        network = tuple((p, g.conj().T) for p, g in reversed(gates))
        object.__setattr__(self, "unitary", u)
        object.__setattr__(self, "network", network)
        object.__setattr__(self, "phases", phases)

    @classmethod
    def from_generator(cls, generator: np.ndarray) -> OrbitalRotationSpec:
        """Rotation ``exp(X)`` for an anti-Hermitian ``X``."""
        x = np.asarray(generator, dtype=complex)
        if np.abs(x + x.conj().T).max() > UNITARITY_TOL:
            raise NonUnitaryError("generator is not anti-Hermitian")
        return cls(scipy.linalg.expm(x))

    @classmethod
    def identity(cls, num_orbitals: int) -> OrbitalRotationSpec:
        return cls(np.eye(num_orbitals))

    @property
    def num_orbitals(self) -> int:
        return self.unitary.shape[0]

    def generator(self) -> np.ndarray:
        """Anti-Hermitian ``X`` with ``exp(X) = unitary``."""
        x = scipy.linalg.logm(self.unitary)
        return 0.5 * (x - x.conj().T)

    def inverse(self) -> OrbitalRotationSpec:
        return OrbitalRotationSpec(self.unitary.conj().T)

    def __matmul__(self, other: OrbitalRotationSpec) -> OrbitalRotationSpec:
        return OrbitalRotationSpec(self.unitary @ other.unitary)


@dataclass(frozen=True)
class DiagonalCoulombSpec:
    """Real symmetric ``J`` for the phase ``exp(i sum_{p,r} J[p,r] n_p n_r)``.

    The sum runs over ordered pairs, so an off-diagonal coupling contributes
    ``2 J[p, r]`` when both orbitals are occupied. ``mask`` restricts the
    couplings: ``"dense"``, ``"banded"`` (``|p - r| <= bandwidth``) or
    ``"nearest"`` (bandwidth 1). The diagonal is always kept.
    """

    matrix: np.ndarray
    mask: str = "dense"
    bandwidth: int | None = None

    def __post_init__(self):
        j = np.array(self.matrix, dtype=float)
        if j.ndim != 2 or j.shape[0] != j.shape[1]:
            raise ValueError("J must be square")
        if np.abs(j - j.T).max() > 1e-12:
            raise ValueError("J must be symmetric")
        m = j.shape[0]
        if self.mask == "dense":
            width = m
        elif self.mask == "banded":
            if self.bandwidth is None or self.bandwidth < 0:
                raise ValueError("banded mask needs a non-negative bandwidth")
            width = self.bandwidth
        elif self.mask == "nearest":
            width = 1
        else:
            raise ValueError(f"unknown mask {self.mask!r}")
        idx = np.arange(m)
        j = np.where(np.abs(idx[:, None] - idx[None, :]) <= width, j, 0.0)
        j.flags.writeable = False
        object.__setattr__(self, "matrix", j)

    @property
    def num_orbitals(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class LucjLayer:
    """One factor ``exp(K) exp(iJ) exp(-K)``; ``rotation`` holds ``exp(K)``."""

    rotation: OrbitalRotationSpec
    coulomb: DiagonalCoulombSpec


def _occupation_table(m: int) -> np.ndarray:
    idx = np.arange(1 << m)
    return ((idx[:, None] >> np.arange(m)[None, :]) & 1).astype(float)


def _phase_vector(phases: np.ndarray) -> np.ndarray:
    """Per-bitstring product of ``phases[p]`` over occupied ``p``."""
    m = len(phases)
    out = np.ones(1, dtype=complex)
    for p in range(m):
        out = np.concatenate([out, out * phases[p]])
    return out


def _apply_givens(psi: np.ndarray, p: int, g: np.ndarray, m: int) -> np.ndarray:
    """Lift of the 2x2 unitary ``g`` on orbitals ``(p, p+1)``; acts on the last axis."""
    lead = psi.shape[:-1]
    v = psi.reshape(lead + (1 << (m - p - 2), 2, 2, 1 << p))
    out = v.copy()
    s10 = v[..., 0, 1, :]  # orbital p occupied, p+1 empty
    s01 = v[..., 1, 0, :]
    out[..., 0, 1, :] = g[0, 0] * s10 + g[0, 1] * s01
    out[..., 1, 0, :] = g[1, 0] * s10 + g[1, 1] * s01
    out[..., 1, 1, :] *= g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
    return out.reshape(psi.shape)


def _rotate(psi: np.ndarray, rotation: OrbitalRotationSpec, trace: CircuitTrace | None) -> np.ndarray:
    m = rotation.num_orbitals
    psi = psi * _phase_vector(rotation.phases)
    if trace is not None:
        for p, ph in enumerate(rotation.phases):
            if abs(ph - 1) > 1e-15:
                trace.add("phase", [p], angle=float(np.angle(ph)))
    for p, g in rotation.network:
        psi = _apply_givens(psi, p, g, m)
        if trace is not None:
            trace.add("givens", [p, p + 1], matrix=g)
    return psi


def _require_normalized(state: SpinStatevector):
    dev = abs(state.norm() - 1)
    if dev > NORM_TOL:
        raise ValueError(f"state is not normalized (deviation {dev:.2e})")


def prepare_slater(
    rotation: OrbitalRotationSpec, reference: int, trace: CircuitTrace | None = None
) -> SpinStatevector:
    """``Gamma(U)|reference>`` compiled to ``N (M - N)`` Givens rotations.

    Only the occupied columns ``C = U[:, occ]`` matter. A unitary mixing of the
    occupied orbitals (a global phase on the determinant) brings ``C`` to a
    staircase shape, after which each column is swept onto the diagonal with
    ``M - N`` adjacent rotations.
    """
    m = rotation.num_orbitals
    occ = [p for p in range(m) if reference >> p & 1]
    n = len(occ)
    if reference >= 1 << m:
        raise ValueError("reference does not fit in the register")
    if n == 0:
        return basis_state(m, 0)
    c = rotation.unitary[:, occ].copy()
    t, q = scipy.linalg.rq(c[m - n :, :])
    c = c @ q.conj().T
    mixing_det = np.linalg.det(q.conj().T)
    gates = []
    for j in range(n):
        for i in range(m - n + j, j, -1):
            g = _givens_to_zero(c[i - 1, j], c[i, j])
            c[[i - 1, i], :] = g @ c[[i - 1, i], :]
            gates.append((i - 1, g))
    # C V = G^+ [D; 0]  =>  state = det(D) det(V^+) Gamma(G^+) |1..1 0..0>
    global_phase = np.prod(np.diag(c)[:n]) / mixing_det
    psi = np.zeros(1 << m, dtype=complex)
    psi[(1 << n) - 1] = global_phase
    if trace is not None:
        trace.add("prepare_bits", list(range(n)))
        trace.add("global_phase", [], angle=float(np.angle(global_phase)))
    for p, g in reversed(gates):
        psi = _apply_givens(psi, p, g.conj().T, m)
        if trace is not None:
            trace.add("givens", [p, p + 1], matrix=g.conj().T)
    return SpinStatevector(m, psi)


def apply_orbital_rotation(
    state: SpinStatevector, rotation: OrbitalRotationSpec, trace: CircuitTrace | None = None
) -> SpinStatevector:
    """Apply ``Gamma(U)`` to an arbitrary state through the full triangular network."""
    if rotation.num_orbitals != state.num_orbitals:
        raise ValueError("rotation and state sizes differ")
    _require_normalized(state)
    return SpinStatevector(state.num_orbitals, _rotate(state.amplitudes, rotation, trace))


def _coulomb_phases(j: DiagonalCoulombSpec) -> np.ndarray:
    occ = _occupation_table(j.num_orbitals)
    return np.exp(1j * np.einsum("kp,pr,kr->k", occ, j.matrix, occ))


def apply_diagonal_coulomb(
    state: SpinStatevector, j: DiagonalCoulombSpec, trace: CircuitTrace | None = None
) -> SpinStatevector:
    if j.num_orbitals != state.num_orbitals:
        raise ValueError("J and state sizes differ")
    if trace is not None:
        m = j.num_orbitals
        for p in range(m):
            for r in range(p, m):
                if j.matrix[p, r]:
                    angle = j.matrix[p, r] * (1 if p == r else 2)
                    trace.add("number" if p == r else "number_number", sorted({p, r}), angle=float(angle))
    return SpinStatevector(state.num_orbitals, state.amplitudes * _coulomb_phases(j))


def _apply_lucj_array(psi: np.ndarray, layers: Sequence[LucjLayer], trace=None) -> np.ndarray:
    for layer in layers:
        psi = _rotate(psi, layer.rotation.inverse(), trace)
        psi = psi * _coulomb_phases(layer.coulomb)
        psi = _rotate(psi, layer.rotation, trace)
    return psi


def apply_lucj(
    state: SpinStatevector,
    layers: Sequence[LucjLayer],
    num_layers: int | None = None,
    trace: CircuitTrace | None = None,
) -> SpinStatevector:
    """Apply ``exp(K) exp(iJ) exp(-K)`` for each layer, first layer acting first."""
    if num_layers is not None and num_layers != len(layers):
        raise ValueError(f"expected {num_layers} layers, got {len(layers)}")
    _require_normalized(state)
    for layer in layers:
        state = apply_orbital_rotation(state, layer.rotation.inverse(), trace)
        state = apply_diagonal_coulomb(state, layer.coulomb, trace)
        state = apply_orbital_rotation(state, layer.rotation, trace)
    return state


def overlap(a: SpinStatevector, b: SpinStatevector) -> complex:
    """``<a|b>``."""
    if a.num_orbitals != b.num_orbitals:
        raise ValueError("states have different sizes")
    return complex(np.vdot(a.amplitudes, b.amplitudes))


@dataclass
class Superposition:
    """Outcome of the ancilla superposition circuit.

    ``state_plus`` is ``(|d_mu> + i^p |d_nu>) / U^p`` (ancilla ``+1``) and
    ``state_minus`` the ``p + 2`` counterpart (ancilla ``-1``). A branch whose
    norm falls below ``1e-8`` is left as ``None``.
    """

    p: int
    state_plus: SpinStatevector | None
    state_minus: SpinStatevector | None
    norm_plus: float
    norm_minus: float

    @property
    def prob_plus(self) -> float:
        return self.norm_plus**2 / 4

    @property
    def prob_minus(self) -> float:
        return self.norm_minus**2 / 4

    def __iter__(self):
        yield from (self.state_plus, self.state_minus, self.prob_plus)


def _controlled_phase(psi: np.ndarray, control: int, target: int, angle: float) -> np.ndarray:
    idx = np.arange(len(psi))
    both = ((idx >> control) & 1) & ((idx >> target) & 1)
    return np.where(both == 1, psi * np.exp(1j * angle), psi)


def _swap(psi: np.ndarray, a: int, b: int) -> np.ndarray:
    idx = np.arange(len(psi))
    differ = ((idx >> a) ^ (idx >> b)) & 1
    return psi[idx ^ (differ * ((1 << a) | (1 << b)))]


def ancilla_superposition_circuit(
    d_mu: OrbitalRotationSpec,
    d_nu: OrbitalRotationSpec,
    reference: int,
    p: int,
    trace: CircuitTrace | None = None,
) -> np.ndarray:
    """Simulate the ancilla circuit up to the X-basis measurement.

    Returns a ``(2, 2**M)`` array: row 0 is the register conditioned on ancilla
    outcome ``+1``, row 1 on ``-1`` (unnormalized; squared norms are the
    outcome probabilities).

    The controlled rotation ``c[Gamma(U_nu U_mu^+)]`` is realized as
    ``Gamma(W) c[exp(i sum xi_q n_q)] Gamma(W)^+`` with ``U_nu U_mu^+ = W
    diag(exp(i xi)) W^+``; the controlled phases run along a line, swapping the
    ancilla one position down the register after each one.
    """
    m = d_mu.num_orbitals
    if d_nu.num_orbitals != m:
        raise ValueError("rotations act on different register sizes")
    relative = d_nu.unitary @ d_mu.unitary.conj().T
    schur, w = scipy.linalg.schur(relative, output="complex")
    xi = np.angle(np.diag(schur))
    basis_change = OrbitalRotationSpec(w)

    # qubit layout: ancilla at position 0, orbital q at position q + 1
    register = prepare_slater(d_mu, reference, trace).amplitudes
    ancilla = np.array([1.0, 1j**p]) / np.sqrt(2)
    psi = np.outer(register, ancilla).ravel()
    if trace is not None:
        trace.add("prepare_ancilla", ["a"], p=p)
    # Gamma(W)^+ on the register (positions 1..M)
    psi = _rotate(psi.reshape(1 << m, 2).T, basis_change.inverse(), trace).T.ravel()
    for q in range(m):
        psi = _controlled_phase(psi, q, q + 1, xi[q])
        psi = _swap(psi, q, q + 1)
        if trace is not None:
            trace.add("controlled_phase_swap", [q, q + 1], angle=float(xi[q]))
    # now orbital q sits at position q and the ancilla at position M
    psi = _rotate(psi.reshape(2, 1 << m), basis_change, trace)
    return np.stack([psi[0] + psi[1], psi[0] - psi[1]]) / np.sqrt(2)


def _branch(vec: np.ndarray, m: int) -> tuple[SpinStatevector | None, float]:
    norm = float(np.linalg.norm(vec))
    # the unnormalized branch carries U / 2
    big_u = 2 * norm
    if big_u < BRANCH_TOL:
        return None, big_u
    return SpinStatevector(m, vec / norm), big_u


def prepare_superposition(
    d_mu: OrbitalRotationSpec,
    d_nu: OrbitalRotationSpec,
    reference: int,
    p: int,
    trace: CircuitTrace | None = None,
) -> Superposition:
    """Prepare ``(|d_mu> + i^p |d_nu>) / U^p`` through the ancilla circuit.

    Both measurement outcomes are kept: ``+1`` yields the ``p`` state and
    ``-1`` the ``p + 2`` state, with probabilities ``(U^p)^2 / 4`` and
    ``(U^{p+2})^2 / 4``.
    """
    m = d_mu.num_orbitals
    out = ancilla_superposition_circuit(d_mu, d_nu, reference, p % 4, trace)
    plus, u_plus = _branch(out[0], m)
    minus, u_minus = _branch(out[1], m)
    return Superposition(p % 4, plus, minus, u_plus, u_minus)


def superposition_state(
    u: SpinStatevector, v: SpinStatevector, p: int
) -> tuple[SpinStatevector | None, float]:
    """Direct assembly of ``(|u> + i^p |v>) / U^p``; returns ``(state, U^p)``."""
    vec = u.amplitudes + (1j**p) * v.amplitudes
    norm = float(np.linalg.norm(vec))
    if norm < BRANCH_TOL:
        return None, norm
    return SpinStatevector(u.num_orbitals, vec / norm), norm


def sample_bitstrings(state: SpinStatevector, shots: int, rng: np.random.Generator) -> np.ndarray:
    """``shots`` i.i.d. draws from ``|amplitudes|^2``, in draw order."""
    if shots < 0:
        raise ValueError("shots must be non-negative")
    _require_normalized(state)
    probs = state.probabilities()
    probs = probs / probs.sum()
    return rng.choice(len(probs), size=shots, p=probs)


def sample_counts(state: SpinStatevector, shots: int, rng: np.random.Generator) -> dict[int, int]:
    draws = sample_bitstrings(state, shots, rng)
    values, counts = np.unique(draws, return_counts=True)
    return {int(v): int(c) for v, c in zip(values, counts)}

"""Entanglement-forged states, branch weights and branch-wise expectation values.

A forged state is ``|Psi> = sum_mu c_mu |u_mu> (x) |v_mu>`` with
``|u_mu> = L_alpha Gamma(D_mu,alpha)|ref_alpha>`` (``L`` a shared LUCJ circuit)
and the spin-down analogue ``|v_mu>``. Cross terms are rewritten with the
superpositions ``|u^p_{mu nu}> = (|u_mu> + i^p |u_nu>) / U^p`` through

    <u_mu|A|u_nu> = sum_p gamma^p <u^p|A|u^p>,   gamma^p = (-i)^p (U^p)^2 / 4,

which holds for any operator ``A``. Each branch ``I`` is then a product state
``|u_I> (x) |v_I>`` carrying a complex weight ``r_I``, and

    <Psi|A (x) B|Psi> = sum_I r_I <u_I|A|u_I> <v_I|B|v_I>.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from efsqd import fockspace
from efsqd.amplitudes import AmplitudeData, mp2_amplitudes
from efsqd.ansatz import (
    SectorSpace,
    build_hs_operators,
    determinant_from_fields,
    double_factorize_t2,
    noci_coefficients,
    optimize_noci_fields,
)
from efsqd.hamiltonian import ActiveSpaceHamiltonian
from efsqd.simulator import (
    DiagonalCoulombSpec,
    LucjLayer,
    OrbitalRotationSpec,
    SpinStatevector,
    apply_lucj,
    prepare_slater,
    superposition_state,
)

__all__ = [
    "Branch",
    "build_ef_state",
    "BranchWeights",
    "EFState",
    "branch_weights",
    "compound_distribution",
    "ef_energy",
    "ef_expectation",
    "ef_matrix_element",
    "exact_distribution",
    "load_ef_state",
    "reconstructed_distribution",
    "save_ef_state",
    "sampling_probabilities",
]

NORMALIZATION_TOL = 1e-8


class Branch(NamedTuple):
    """Diagonal branch ``(mu, mu, -1, -1)`` or cross branch ``(mu, nu, p, r)``."""

    mu: int
    nu: int
    p: int = -1
    r: int = -1

    @property
    def diagonal(self) -> bool:
        return self.p < 0

    def label(self) -> str:
        if self.diagonal:
            return f"D({self.mu})"
        return f"X({self.mu},{self.nu},{self.p},{self.r})"


@dataclass(frozen=True)
class EFState:
    """Forged two-register state; see the module docstring."""

    num_orbitals: int
    reference: tuple[int, int]
    coefficients: np.ndarray
    rotations_alpha: tuple[OrbitalRotationSpec, ...]
    rotations_beta: tuple[OrbitalRotationSpec, ...]
    lucj_alpha: tuple[LucjLayer, ...] = ()
    lucj_beta: tuple[LucjLayer, ...] = ()
    normalized: bool = False

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=complex).ravel()
        object.__setattr__(self, "coefficients", c)
        object.__setattr__(self, "rotations_alpha", tuple(self.rotations_alpha))
        object.__setattr__(self, "rotations_beta", tuple(self.rotations_beta))
        object.__setattr__(self, "lucj_alpha", tuple(self.lucj_alpha))
        object.__setattr__(self, "lucj_beta", tuple(self.lucj_beta))
        if not (len(c) == len(self.rotations_alpha) == len(self.rotations_beta)) or len(c) == 0:
            raise ValueError("need one coefficient and one rotation per spin for each determinant")
        for rot in self.rotations_alpha + self.rotations_beta:
            if rot.num_orbitals != self.num_orbitals:
                raise ValueError("rotation size does not match num_orbitals")

    @property
    def num_determinants(self) -> int:
        return len(self.coefficients)

    @property
    def nelec(self) -> tuple[int, int]:
        return self.reference[0].bit_count(), self.reference[1].bit_count()

    def register_states(self, spin: str) -> list[SpinStatevector]:
        """``|u_mu>`` (``spin="alpha"``) or ``|v_mu>`` (``"beta"``) for every mu."""
        return list(self._states[0 if spin == "alpha" else 1])

    @cached_property
    def _states(self) -> tuple[tuple[SpinStatevector, ...], tuple[SpinStatevector, ...]]:
        out = []
        for rotations, layers, ref in (
            (self.rotations_alpha, self.lucj_alpha, self.reference[0]),
            (self.rotations_beta, self.lucj_beta, self.reference[1]),
        ):
            out.append(tuple(apply_lucj(prepare_slater(rot, ref), list(layers)) for rot in rotations))
        return out[0], out[1]

    def statevector(self) -> np.ndarray:
        """Full two-register amplitudes indexed by ``alpha | beta << M``."""
        us, vs = self._states
        return sum(c * np.kron(v.amplitudes, u.amplitudes) for c, u, v in zip(self.coefficients, us, vs))

    def norm_squared(self) -> float:
        return float(np.real(ef_matrix_element(self, None, None)))

    def normalize(self) -> EFState:
        norm2 = self.norm_squared()
        if norm2 <= 0:
            raise ValueError("state has zero norm")
        return replace(self, coefficients=self.coefficients / np.sqrt(norm2), normalized=True)

    def check_normalized(self):
        if abs(self.norm_squared() - 1) > NORMALIZATION_TOL:
            raise ValueError("forged state is not normalized")


def sampling_probabilities(weights: np.ndarray) -> np.ndarray:
    """``P_I = max(0, Re r_I) / sum_J max(0, Re r_J)``."""
    pos = np.maximum(0.0, np.real(np.asarray(weights)))
    total = pos.sum()
    if total <= 0:
        raise ValueError("no branch has a positive weight")
    return pos / total


@dataclass
class BranchWeights:
    """Exact branch weights, sampling probabilities and branch states."""

    branches: list[Branch]
    weights: np.ndarray
    probabilities: np.ndarray
    states_alpha: list[SpinStatevector] = field(repr=False)
    states_beta: list[SpinStatevector] = field(repr=False)

    def __len__(self) -> int:
        return len(self.branches)

    def to_dict(self) -> dict:
        return {
            "branches": [b.label() for b in self.branches],
            "weights": [[float(w.real), float(w.imag)] for w in self.weights],
            "probabilities": [float(p) for p in self.probabilities],
        }


def _cross_branches(n_det: int) -> list[Branch]:
    return [
        Branch(mu, nu, p, r)
        for mu in range(n_det)
        for nu in range(n_det)
        if mu != nu
        for p in range(4)
        for r in range(4)
    ]


def branch_order(n_det: int) -> list[Branch]:
    """Diagonal branches by ``mu``, then cross branches lexicographically."""
    return [Branch(mu, mu) for mu in range(n_det)] + _cross_branches(n_det)


def _superpositions(states: Sequence[SpinStatevector], threads: int):
    """``{(mu, nu, p): (state | None, gamma^p)}`` for all ordered pairs."""
    keys = [(mu, nu, p) for mu in range(len(states)) for nu in range(len(states)) if mu != nu for p in range(4)]

    def build(key):
        mu, nu, p = key
        state, big_u = superposition_state(states[mu], states[nu], p)
        gamma = 0j if state is None else (-1j) ** p * big_u**2 / 4
        return state, gamma

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            values = list(pool.map(build, keys))
    else:
        values = [build(k) for k in keys]
    return dict(zip(keys, values))


def branch_weights(state: EFState, threads: int = 1, drop_zero: bool = False) -> BranchWeights:
    """Enumerate all branches with exact complex weights and sampling probabilities.

    Cross branches whose superposition norm is below the branch tolerance get
    weight exactly 0 and carry ``None`` states. With ``drop_zero`` they are
    omitted.
    """
    us, vs = state._states
    c = state.coefficients
    branches = branch_order(state.num_determinants)
    sup_u = _superpositions(us, threads)
    sup_v = _superpositions(vs, threads)
    weights, sa, sb, kept = [], [], [], []
    for b in branches:
        if b.diagonal:
            w, u, v = abs(c[b.mu]) ** 2, us[b.mu], vs[b.mu]
        else:
            u, gamma = sup_u[(b.mu, b.nu, b.p)]
            v, delta = sup_v[(b.mu, b.nu, b.r)]
            w = np.conj(c[b.mu]) * c[b.nu] * gamma * delta
            if u is None or v is None:
                w, u, v = 0j, None, None
                if drop_zero:
                    continue
        kept.append(b)
        weights.append(complex(w))
        sa.append(u)
        sb.append(v)
    weights = np.array(weights)
    return BranchWeights(kept, weights, sampling_probabilities(weights), sa, sb)


def _expect(state: SpinStatevector | None, op) -> complex:
    if state is None:
        return 0j
    psi = state.amplitudes
    if op is None:
        return 1.0 + 0j
    return complex(np.vdot(psi, op @ psi))


def ef_matrix_element(state: EFState, a_op, b_op, weights: BranchWeights | None = None) -> complex:
    """``<Psi|A (x) B|Psi>`` evaluated branch by branch (``None`` means identity).

    ``A`` and ``B`` are ``2^M x 2^M`` matrices (dense or sparse) and need not be
    Hermitian. No normalization is applied.
    """
    weights = weights or branch_weights(state)
    total = 0j
    for w, u, v in zip(weights.weights, weights.states_alpha, weights.states_beta):
        if w == 0:
            continue
        total += w * _expect(u, a_op) * _expect(v, b_op)
    return total


def ef_expectation(state: EFState, a_op, b_op, weights: BranchWeights | None = None) -> float:
    """Real part of :func:`ef_matrix_element`, for Hermitian observables."""
    return float(np.real(ef_matrix_element(state, a_op, b_op, weights)))


class _RegisterOperators:
    """Sparse one-register operators needed for energy evaluation."""

    def __init__(self, ham: ActiveSpaceHamiltonian):
        m = ham.num_orbitals
        basis = np.arange(1 << m)
        self.register_h = fockspace.operator_matrix(
            fockspace.register_hamiltonian_terms(ham.h1, ham.eri), basis, dtype=float
        )
        self.excitations = [
            [fockspace.operator_matrix([(1.0, ((p, True), (q, False)))], basis, dtype=float) for q in range(m)]
            for p in range(m)
        ]

    def one_rdm(self, state: SpinStatevector) -> np.ndarray:
        psi = state.amplitudes
        m = len(self.excitations)
        return np.array([[np.vdot(psi, self.excitations[p][q] @ psi) for q in range(m)] for p in range(m)])


def ef_energy(
    state: EFState,
    ham: ActiveSpaceHamiltonian,
    weights: BranchWeights | None = None,
    operators: _RegisterOperators | None = None,
) -> float:
    """Energy ``<Psi|H|Psi> / <Psi|Psi>`` from branch states only.

    Per product branch the energy splits into the two register Hamiltonians
    plus the opposite-spin Coulomb term ``sum (pq|rs) D^a_pq D^b_rs`` built
    from branch one-particle density matrices.
    """
    weights = weights or branch_weights(state)
    ops = operators or _RegisterOperators(ham)
    num = 0j
    den = 0j
    for w, u, v in zip(weights.weights, weights.states_alpha, weights.states_beta):
        if w == 0:
            continue
        da, db = ops.one_rdm(u), ops.one_rdm(v)
        e = (
            ham.core_energy
            + _expect(u, ops.register_h)
            + _expect(v, ops.register_h)
            + np.einsum("pqrs,pq,rs->", ham.eri, da, db)
        )
        num += w * e
        den += w
    return float(np.real(num / den))


def _branch_probabilities(states_alpha, states_beta, m: int):
    for u, v in zip(states_alpha, states_beta):
        if u is None:
            yield None
        else:
            yield np.outer(v.probabilities(), u.probabilities()).ravel()


def exact_distribution(state: EFState) -> np.ndarray:
    """``|<x, y|Psi>|^2 / <Psi|Psi>`` on all ``4^M`` configurations."""
    probs = np.abs(state.statevector()) ** 2
    return probs / probs.sum()


def reconstructed_distribution(weights: BranchWeights, num_orbitals: int) -> np.ndarray:
    """``sum_I r_I p_I(x) q_I(y)`` with exact complex weights (unnormalized)."""
    total = np.zeros(1 << (2 * num_orbitals), dtype=complex)
    for w, pq in zip(weights.weights, _branch_probabilities(weights.states_alpha, weights.states_beta, num_orbitals)):
        if pq is not None:
            total += w * pq
    return total


def compound_distribution(weights: BranchWeights, num_orbitals: int) -> np.ndarray:
    """``sum_I P_I p_I(x) q_I(y)``: the distribution the sampler draws from."""
    total = np.zeros(1 << (2 * num_orbitals))
    for w, pq in zip(
        weights.probabilities, _branch_probabilities(weights.states_alpha, weights.states_beta, num_orbitals)
    ):
        if pq is not None and w > 0:
            total += w * pq
    return total


def _complex_list(arr: np.ndarray):
    arr = np.asarray(arr, dtype=complex)
    return [arr.real.tolist(), arr.imag.tolist()]


def _from_complex_list(data) -> np.ndarray:
    return np.array(data[0], dtype=float) + 1j * np.array(data[1], dtype=float)


def _layer_dict(layer: LucjLayer) -> dict:
    j = layer.coulomb
    return {
        "rotation": _complex_list(layer.rotation.unitary),
        "coulomb": np.asarray(j.matrix, dtype=float).tolist(),
        "mask": j.mask,
        "bandwidth": j.bandwidth,
    }


def _layer_from_dict(data: dict) -> LucjLayer:
    return LucjLayer(
        OrbitalRotationSpec(_from_complex_list(data["rotation"])),
        DiagonalCoulombSpec(np.array(data["coulomb"]), mask=data["mask"], bandwidth=data["bandwidth"]),
    )


def save_ef_state(state: EFState) -> str:
    """JSON document that :func:`load_ef_state` turns back into the same state."""
    doc = {
        "num_orbitals": state.num_orbitals,
        "reference": list(state.reference),
        "coefficients": _complex_list(state.coefficients),
        "rotations_alpha": [_complex_list(r.unitary) for r in state.rotations_alpha],
        "rotations_beta": [_complex_list(r.unitary) for r in state.rotations_beta],
        "lucj_alpha": [_layer_dict(layer) for layer in state.lucj_alpha],
        "lucj_beta": [_layer_dict(layer) for layer in state.lucj_beta],
        "normalized": state.normalized,
    }
    return json.dumps(doc, sort_keys=True, indent=1)


def load_ef_state(text: str) -> EFState:
    doc = json.loads(text)
    return EFState(
        num_orbitals=doc["num_orbitals"],
        reference=tuple(doc["reference"]),
        coefficients=_from_complex_list(doc["coefficients"]),
        rotations_alpha=tuple(OrbitalRotationSpec(_from_complex_list(u)) for u in doc["rotations_alpha"]),
        rotations_beta=tuple(OrbitalRotationSpec(_from_complex_list(u)) for u in doc["rotations_beta"]),
        lucj_alpha=tuple(_layer_from_dict(d) for d in doc["lucj_alpha"]),
        lucj_beta=tuple(_layer_from_dict(d) for d in doc["lucj_beta"]),
        normalized=doc["normalized"],
    )


@dataclass
class BuildInfo:
    noci_energy: float
    noci_history: list[float]
    noci_converged: bool
    dropped_directions: int
    num_hs_operators: int
    fields: np.ndarray = field(repr=False)


def build_ef_state(
    ham: ActiveSpaceHamiltonian,
    n_det: int,
    rng: np.random.Generator,
    amplitudes: AmplitudeData | None = None,
    num_layers: int = 1,
    mask: str = "dense",
    bandwidth: int | None = None,
    optimize_iters: int = 0,
    include_hf: bool = True,
    with_lucj: bool = True,
) -> tuple[EFState, BuildInfo]:
    """Assemble a normalized forged state from amplitudes (MP2 when omitted).

    Fields are standard normal; with ``include_hf`` the first determinant is
    the reference itself (all fields zero). ``num_layers`` counts same-spin
    eigenpairs, each giving two LUCJ layers; ``with_lucj=False`` leaves the
    registers without a correlator.
    """
    amp = amplitudes if amplitudes is not None else mp2_amplitudes(ham)
    ops = build_hs_operators(amp)
    ref = amp.reference
    fields = rng.standard_normal((n_det, len(ops)))
    if include_hf:
        fields[0] = 0.0
    space = SectorSpace(ham)
    if optimize_iters > 0:
        opt = optimize_noci_fields(ham, ops, fields, ref, max_iters=optimize_iters, space=space)
        fields, dets, coeffs = opt.fields, opt.determinants, opt.coefficients
        energy, history, converged = opt.energy, opt.history, opt.converged
        dropped = noci_coefficients(ham, dets, space).dropped
    else:
        dets = [determinant_from_fields(ops, row, ref) for row in fields]
        result = noci_coefficients(ham, dets, space)
        coeffs, energy, dropped = result.coefficients, result.energy, result.dropped
        history, converged = [energy], True
    layers = {"alpha": (), "beta": ()}
    if with_lucj:
        for spin in layers:
            t2, n = amp.same_spin(spin)
            layers[spin] = tuple(
                double_factorize_t2(t2, n, ham.num_orbitals, num_layers, mask=mask, bandwidth=bandwidth)
            )
    state = EFState(
        ham.num_orbitals,
        ref,
        coeffs,
        tuple(d.rotation_alpha for d in dets),
        tuple(d.rotation_beta for d in dets),
        layers["alpha"],
        layers["beta"],
    ).normalize()
    return state, BuildInfo(energy, history, converged, dropped, len(ops), fields)

"""Classical construction of the forged ansatz parameters.

* opposite-spin amplitudes -> Hubbard-Stratonovich one-body operators
  ``X_d`` with ``T_ab - T_ab^+ = 1/2 sum_d X_d^2``;
* random auxiliary fields -> non-orthogonal unrestricted determinants
  ``exp(sum_d y_d X_d)|HF>``, refined by a NOCI energy minimization;
* same-spin amplitudes -> LUCJ layers through a low-rank factorization.
"""

from __future__ import annotations

import logging
import math
from itertools import combinations
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from efsqd.amplitudes import AmplitudeData
from efsqd.hamiltonian import ActiveSpaceHamiltonian
from efsqd.simulator import DiagonalCoulombSpec, LucjLayer, OrbitalRotationSpec, prepare_slater
from efsqd.fockspace import sector_hamiltonian

__all__ = [
    "Determinant",
    "HSOperatorSet",
    "NociResult",
    "NociOptimization",
    "SectorSpace",
    "build_hs_operators",
    "determinant_from_fields",
    "double_factorize_t2",
    "hs_quadrature",
    "noci_coefficients",
    "optimize_noci_fields",
    "sample_hs_determinants",
]

log = logging.getLogger(__name__)

SVD_THRESHOLD = 1e-12
OVERLAP_THRESHOLD = 1e-10


@dataclass(frozen=True)
class HSOperatorSet:
    """One-body operators ``X_d`` as spin blocks ``(alpha, beta)`` of ``M x M`` matrices.

    A block ``A`` stands for ``sum_pq A[p, q] a+_p a_q`` on that spin.
    """

    num_orbitals: int
    operators: tuple[tuple[np.ndarray, np.ndarray], ...]
    singular_values: np.ndarray
    left_factors: np.ndarray = field(repr=False)
    right_factors: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.operators)

    def combine(self, fields: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Spin blocks of ``sum_d y_d X_d``."""
        m = self.num_orbitals
        xa = np.zeros((m, m), dtype=complex)
        xb = np.zeros((m, m), dtype=complex)
        for y, (a, b) in zip(fields, self.operators):
            xa += y * a
            xb += y * b
        return xa, xb


def build_hs_operators(amp: AmplitudeData, threshold: float = SVD_THRESHOLD) -> HSOperatorSet:
    """Square decomposition of the opposite-spin cluster generator.

    With ``t_ab[(ai), (BJ)] = sum_s tau_s U_s[ai] V_s[BJ]`` let
    ``u_s = sqrt(tau_s) sum U_s[ai] a+_a a_i`` (spin up) and ``v_s`` the spin-down
    analogue. Each singular value contributes ``(u+v)``, ``i(u-v)``,
    ``i(u^+ + v^+)`` and ``(u^+ - v^+)``, all divided by ``sqrt(2)``.
    """
    m, na, nb = amp.num_orbitals, amp.num_alpha, amp.num_beta
    t = amp.t2_ab.reshape((m - na) * na, (m - nb) * nb)
    if t.size == 0:
        return HSOperatorSet(m, (), np.zeros(0), np.zeros((t.shape[0], 0)), np.zeros((0, t.shape[1])))
    left, sv, right = np.linalg.svd(t, full_matrices=False)
    keep = sv > threshold
    left, sv, right = left[:, keep], sv[keep], right[keep]
    ops = []
    for s in range(len(sv)):
        ua = np.zeros((m, m))
        vb = np.zeros((m, m))
        ua[na:, :na] = math.sqrt(sv[s]) * left[:, s].reshape(m - na, na)
        vb[nb:, :nb] = math.sqrt(sv[s]) * right[s].reshape(m - nb, nb)
        r2 = 1 / math.sqrt(2)
        ops.append((r2 * ua.astype(complex), r2 * vb.astype(complex)))
        ops.append((r2 * 1j * ua, -r2 * 1j * vb))
        ops.append((r2 * 1j * ua.T, r2 * 1j * vb.T))
        ops.append((r2 * ua.T.astype(complex), -r2 * vb.T.astype(complex)))
    return HSOperatorSet(m, tuple(ops), sv, left, right)


@dataclass(frozen=True)
class Determinant:
    """Unrestricted determinant ``Gamma(U_a) x Gamma(U_b) |ref>`` (normalized).

    ``scale`` is the factor relating it to the unnormalized
    ``exp(sum_d y_d X_d)|ref>`` it was built from.
    """

    rotation_alpha: OrbitalRotationSpec
    rotation_beta: OrbitalRotationSpec
    reference: tuple[int, int]
    fields: np.ndarray | None = None
    scale: complex = 1.0

    def spin_vectors(self) -> tuple[np.ndarray, np.ndarray]:
        return (
            prepare_slater(self.rotation_alpha, self.reference[0]).amplitudes,
            prepare_slater(self.rotation_beta, self.reference[1]).amplitudes,
        )


def _orthonormalize(orbitals: np.ndarray) -> tuple[np.ndarray, complex]:
    """Unitary whose leading columns span ``orbitals``, and ``det R`` of the QR."""
    q, r = np.linalg.qr(orbitals, mode="complete")
    n = orbitals.shape[1]
    return q, complex(np.prod(np.diag(r)[:n]))


def determinant_from_fields(ops: HSOperatorSet, fields: np.ndarray, reference: tuple[int, int]) -> Determinant:
    """``exp(sum_d y_d X_d)|ref>`` for an aufbau reference, as rotations plus scale."""
    m = ops.num_orbitals
    fields = np.asarray(fields, dtype=float)
    xa, xb = ops.combine(fields)
    scale = 1.0 + 0j
    rotations = []
    for block, ref in ((xa, reference[0]), (xb, reference[1])):
        n = int(ref).bit_count()
        if ref != (1 << n) - 1:
            raise ValueError("field determinants need an aufbau reference")
        orbitals = scipy.linalg.expm(block)[:, :n]
        unitary, det_r = _orthonormalize(orbitals) if n else (np.eye(m), 1.0)
        rotations.append(OrbitalRotationSpec(unitary))
        scale *= det_r
    return Determinant(rotations[0], rotations[1], reference, fields, scale)


def sample_hs_determinants(
    ops: HSOperatorSet,
    n_det: int,
    rng: np.random.Generator,
    reference: tuple[int, int],
) -> list[Determinant]:
    """Draw ``n_det`` field vectors ``y ~ N(0, 1)`` and build their determinants."""
    if n_det < 1:
        raise ValueError("n_det must be at least 1")
    return [determinant_from_fields(ops, rng.standard_normal(len(ops)), reference) for _ in range(n_det)]


def hs_quadrature(
    x_alpha: np.ndarray, x_beta: np.ndarray, reference: tuple[int, int], nodes: int
) -> np.ndarray:
    """Gauss-Hermite estimate of ``int dy N(y) exp(y X)|ref>`` for one operator ``X``.

    Returns the two-register vector indexed by ``alpha | beta << M``; in exact
    arithmetic it equals ``exp(X^2 / 2)|ref>``.
    """
    m = x_alpha.shape[0]
    ys, ws = np.polynomial.hermite_e.hermegauss(nodes)
    ws = ws / math.sqrt(2 * math.pi)
    ops = HSOperatorSet(m, ((x_alpha, x_beta),), np.ones(1), np.zeros((0, 0)), np.zeros((0, 0)))
    total = np.zeros(1 << (2 * m), dtype=complex)
    for y, w in zip(ys, ws):
        det = determinant_from_fields(ops, np.array([y]), reference)
        ua, vb = det.spin_vectors()
        total += w * det.scale * np.kron(vb, ua)
    return total


def _minor_vector(orbitals: np.ndarray, size: int) -> np.ndarray:
    """Amplitudes ``det(C[occ(z), :])`` of the determinant with orbital columns ``C``."""
    m, n = orbitals.shape
    out = np.zeros(size, dtype=complex)
    if n == 0:
        out[0] = 1.0
        return out
    occs = list(combinations(range(m), n))
    keys = [sum(1 << q for q in occ) for occ in occs]
    out[keys] = np.linalg.det(orbitals[np.array(occs)])
    return out


class SectorSpace:
    """Determinant basis of one particle-number sector with its Hamiltonian matrix."""

    def __init__(self, ham: ActiveSpaceHamiltonian):
        self.ham = ham
        self.num_orbitals = ham.num_orbitals
        self.basis, self.hamiltonian = sector_hamiltonian(ham)
        mask = (1 << ham.num_orbitals) - 1
        self._alpha_index = self.basis & mask
        self._beta_index = self.basis >> ham.num_orbitals

    @property
    def dim(self) -> int:
        return len(self.basis)

    def product_vector(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Sector components of ``|u> (x) |v>``."""
        return u[self._alpha_index] * v[self._beta_index]

    def determinant_vector(self, det: Determinant) -> np.ndarray:
        return self.product_vector(*det.spin_vectors())

    def field_vector(self, ops: HSOperatorSet, fields: np.ndarray, reference: tuple[int, int]) -> np.ndarray:
        """Sector components of the unnormalized ``exp(sum_d y_d X_d)|ref>``."""
        blocks = ops.combine(fields)
        spins = []
        for block, ref, index in zip(blocks, reference, (self._alpha_index, self._beta_index)):
            n = int(ref).bit_count()
            orbitals = scipy.linalg.expm(block)[:, :n]
            spins.append(_minor_vector(orbitals, 1 << self.num_orbitals))
        return self.product_vector(*spins)


@dataclass
class NociResult:
    coefficients: np.ndarray
    energy: float
    dropped: int
    overlap: np.ndarray = field(repr=False)
    hamiltonian: np.ndarray = field(repr=False)


def _fix_phase(c: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(c)))
    return c * (abs(c[k]) / c[k]) if c[k] != 0 else c


def noci_coefficients(
    ham: ActiveSpaceHamiltonian,
    determinants: list[Determinant],
    space: SectorSpace | None = None,
    threshold: float = OVERLAP_THRESHOLD,
) -> NociResult:
    """Lowest root of ``H c = E S c`` in the non-orthogonal determinant basis.

    Overlap eigenvectors with eigenvalue ``<= threshold`` are projected out
    (canonical orthogonalization); their count is returned as ``dropped``.
    Coefficients satisfy ``c^+ S c = 1``; the largest one is real positive.
    """
    space = space or SectorSpace(ham)
    if not determinants:
        raise ValueError("no determinants given")
    phi = np.stack([space.determinant_vector(d) for d in determinants], axis=1)
    return _noci_from_vectors(space, phi, threshold)


def _noci_from_vectors(space: SectorSpace, phi: np.ndarray, threshold: float = OVERLAP_THRESHOLD) -> NociResult:
    s = phi.conj().T @ phi
    h = phi.conj().T @ (space.hamiltonian @ phi)
    s = 0.5 * (s + s.conj().T)
    h = 0.5 * (h + h.conj().T)
    evals, evecs = np.linalg.eigh(s)
    keep = evals > threshold * max(1.0, evals[-1])
    if not keep.any():
        raise np.linalg.LinAlgError("all overlap eigenvalues are below threshold")
    x = evecs[:, keep] / np.sqrt(evals[keep])
    e, c = np.linalg.eigh(x.conj().T @ h @ x)
    coeffs = _fix_phase(x @ c[:, 0])
    return NociResult(coeffs, float(e[0]), int((~keep).sum()), s, h)


@dataclass
class NociOptimization:
    fields: np.ndarray
    coefficients: np.ndarray
    energy: float
    determinants: list[Determinant]
    history: list[float]
    converged: bool


def optimize_noci_fields(
    ham: ActiveSpaceHamiltonian,
    ops: HSOperatorSet,
    initial_fields: np.ndarray,
    reference: tuple[int, int],
    max_iters: int = 50,
    tol: float = 1e-8,
    space: SectorSpace | None = None,
) -> NociOptimization:
    """Minimize the NOCI energy over the auxiliary fields of every determinant.

    Quasi-Newton (L-BFGS-B) on a central finite-difference gradient; its line
    search only accepts steps that lower the energy. ``history`` holds the
    energy after every accepted step. Hitting ``max_iters`` returns the best
    point with ``converged=False``.
    """
    space = space or SectorSpace(ham)
    y0 = np.array(initial_fields, dtype=float)
    if y0.ndim != 2 or y0.shape[1] != len(ops):
        raise ValueError(f"fields must have shape (n_det, {len(ops)})")

    def energy(flat):
        phi = np.stack([space.field_vector(ops, row, reference) for row in flat.reshape(y0.shape)], axis=1)
        return _noci_from_vectors(space, phi).energy

    def evaluate(flat):
        dets = [determinant_from_fields(ops, row, reference) for row in flat.reshape(y0.shape)]
        return noci_coefficients(ham, dets, space), dets

    start, dets = evaluate(y0.ravel())
    history = [start.energy]
    if y0.size == 0:
        return NociOptimization(y0, start.coefficients, start.energy, dets, history, True)

    def record(intermediate_result):
        history.append(float(intermediate_result.fun))

    res = scipy.optimize.minimize(
        energy,
        y0.ravel(),
        method="L-BFGS-B",
        jac="3-point",
        callback=record,
        options={"maxiter": max_iters, "ftol": tol, "gtol": tol},
    )
    y = res.x if res.fun <= start.energy else y0.ravel()
    final, dets = evaluate(y) if y is res.x else (start, dets)
    return NociOptimization(y.reshape(y0.shape), final.coefficients, final.energy, dets, history, bool(res.success))


def double_factorize_t2(
    t2: np.ndarray,
    num_occupied: int,
    num_orbitals: int,
    num_layers: int = 0,
    mask: str = "dense",
    bandwidth: int | None = None,
    threshold: float = 1e-12,
) -> list[LucjLayer]:
    """LUCJ layers for ``exp(T_ss - T_ss^+)`` from same-spin amplitudes.

    The ``(ai) x (bj)`` matricization is symmetric, ``sum_k lam_k w_k w_k^T``,
    so ``T_ss = 1/4 sum_k lam_k O_k^2`` with ``O_k = sum w_k[ai] a+_a a_i``.
    Each eigenpair gives ``O^2 - O^+2 = (i/2)(H_1^2 - H_2^2)`` with Hermitian
    ``H_1 = e^{-i pi/4} O + h.c.`` and ``H_2 = e^{i pi/4} O + h.c.``; each square
    is one layer (the rotation diagonalizing ``H`` and ``J = +-lam/8 eps eps^T``).

    ``num_layers`` counts retained eigenpairs (largest ``|lam|`` first), so the
    result holds ``2 * num_layers`` layers; 0 keeps the full rank.
    """
    m, n = num_orbitals, num_occupied
    t2 = np.asarray(t2)
    if np.iscomplexobj(t2) and np.abs(t2.imag).max() > 0:
        raise ValueError("complex amplitudes are not supported")
    nv = m - n
    if t2.shape != (nv, n, nv, n):
        raise ValueError(f"t2 has shape {t2.shape}, expected {(nv, n, nv, n)}")
    mat = t2.real.reshape(nv * n, nv * n)
    if mat.size == 0:
        return []
    lam, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    order = np.argsort(-np.abs(lam), kind="stable")
    lam, vecs = lam[order], vecs[:, order]
    rank = int((np.abs(lam) > threshold).sum())
    if rank and num_layers > rank:
        log.warning("requested %d layers but amplitudes have rank %d; clamping", num_layers, rank)
    keep = rank if not num_layers else min(num_layers, rank)
    layers = []
    for k in range(keep):
        w = np.zeros((m, m))
        w[n:, :n] = vecs[:, k].reshape(nv, n)
        for phase, sign in ((np.exp(-0.25j * np.pi), 1.0), (np.exp(0.25j * np.pi), -1.0)):
            h = phase * w + np.conj(phase) * w.T
            eps, rot = np.linalg.eigh(h)
            coulomb = DiagonalCoulombSpec(sign * lam[k] / 8 * np.outer(eps, eps), mask=mask, bandwidth=bandwidth)
            layers.append(LucjLayer(OrbitalRotationSpec(rot), coulomb))
    return layers

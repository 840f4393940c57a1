"""Sample-based diagonalization with self-consistent configuration recovery.

Each iteration turns the sampled multiset into ``K`` batches, diagonalizes the
Hamiltonian in every batch subspace, and averages the batch ground-state
occupations into ``n`` (spin-up orbitals first, then spin-down). Iteration 0
keeps only configurations with the right electron counts; later iterations
repair the wrong ones with the current ``n``.

Random streams come from the config seed: recovery in iteration ``k`` uses
spawn key ``(k, 0)`` and batch ``b`` uses ``(k, 1, b)``.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product
from typing import Callable, Iterable, Mapping

import numpy as np

from efsqd.hamiltonian import ActiveSpaceHamiltonian
from efsqd.sampler import SampleCounts
from efsqd.slater import Configuration, SubspaceOperator, build_subspace_operator

__all__ = [
    "DavidsonResult",
    "EmptySubspaceError",
    "IterationRecord",
    "RecoveryConfig",
    "SQDConvergenceError",
    "SQDResult",
    "davidson",
    "diagonalize_subspace",
    "postselect",
    "recover_configurations",
    "run_sqd",
    "sample_batches",
    "update_occupations",
]

log = logging.getLogger(__name__)

DENSE_LIMIT = 64


class EmptySubspaceError(ValueError):
    """No configuration with the target electron counts is available."""


class SQDConvergenceError(RuntimeError):
    """Every batch eigensolve in an iteration failed to converge."""


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass(frozen=True)
class RecoveryConfig:
    """Settings of one SQD run.

    ``target_spin=None`` selects the smallest spin of the sector,
    ``|N_alpha - N_beta| / 2``.
    """

    num_batches: int = 5
    samples_per_batch: int = 1000
    max_iterations: int = 5
    davidson_tol: float = 1e-10
    davidson_max_iter: int = 1000
    penalty: float = 0.0
    target_spin: float | None = None
    seed: int = 0
    energy_tol: float = 1e-8
    occupation_tol: float = 1e-6
    cartesian: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.num_batches < 1:
            raise ValueError("num_batches must be at least 1")
        if self.samples_per_batch < 1:
            raise ValueError("samples_per_batch must be at least 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


def _as_multiset(samples: SampleCounts | Mapping[Configuration, int]) -> dict[Configuration, int]:
    if isinstance(samples, SampleCounts):
        return {cfg: n for cfg, n in samples.items()}
    return dict(samples)


def postselect(samples: SampleCounts | Mapping[Configuration, int], num_alpha: int, num_beta: int) -> dict[Configuration, int]:
    """Keep configurations with exactly ``(num_alpha, num_beta)`` electrons, with multiplicities."""
    kept = {c: n for c, n in _as_multiset(samples).items() if c.nelec == (num_alpha, num_beta) and n > 0}
    if not kept:
        raise EmptySubspaceError(f"no sampled configuration has {num_alpha} up and {num_beta} down electrons")
    return kept


def _repair(bits: int, occ: np.ndarray, target: int, rng: np.random.Generator) -> int:
    """Flip bits of one spin string toward ``target`` electrons.

    Candidates are occupied orbitals (too many electrons) or empty ones (too
    few), chosen without replacement with probability proportional to
    ``|x_p - n_p|``. When fewer candidates than flips have nonzero weight, all
    of those are flipped and the rest are drawn uniformly.
    """
    m = len(occ)
    x = np.array([(bits >> p) & 1 for p in range(m)])
    gap = int(x.sum()) - target
    if gap == 0:
        return bits
    candidates = np.nonzero(x == (1 if gap > 0 else 0))[0]
    k = abs(gap)
    delta = np.abs(x[candidates] - occ[candidates])
    nonzero = candidates[delta > 0]
    if len(nonzero) >= k:
        chosen = rng.choice(candidates, size=k, replace=False, p=delta / delta.sum())
    else:
        rest = candidates[delta == 0]
        chosen = np.concatenate([nonzero, rng.choice(rest, size=k - len(nonzero), replace=False)])
    for p in chosen:
        bits ^= 1 << int(p)
    return bits


def recover_configurations(
    samples: SampleCounts | Mapping[Configuration, int],
    occupations: np.ndarray,
    num_alpha: int,
    num_beta: int,
    rng: np.random.Generator,
) -> dict[Configuration, int]:
    """Repair wrong-count configurations using orbital occupations ``n``.

    Each distinct configuration is repaired once (spin sectors independently)
    and keeps its multiplicity; repaired duplicates are merged.
    """
    occ = np.asarray(occupations, dtype=float)
    out: Counter = Counter()
    for cfg, n in sorted(_as_multiset(samples).items()):
        m = cfg.num_orbitals
        if occ.shape != (2 * m,):
            raise ValueError(f"occupations must have length {2 * m}")
        if (occ < -1e-12).any() or (occ > 1 + 1e-12).any():
            raise ValueError("occupations must lie in [0, 1]")
        alpha = _repair(cfg.alpha, occ[:m], num_alpha, rng)
        beta = _repair(cfg.beta, occ[m:], num_beta, rng)
        out[Configuration(alpha, beta, m)] += n
    return dict(out)


def sample_batches(
    multiset: Mapping[Configuration, int],
    num_batches: int,
    samples_per_batch: int,
    rngs: list[np.random.Generator] | np.random.Generator,
    cartesian: bool = False,
) -> list[list[Configuration]]:
    """Draw ``samples_per_batch`` shots without replacement per batch and deduplicate.

    With ``cartesian=True`` a batch is expanded to every pairing of its
    distinct spin-up and spin-down strings.
    """
    if not multiset:
        raise EmptySubspaceError("cannot batch an empty configuration set")
    configs = sorted(multiset)
    mult = np.array([multiset[c] for c in configs])
    shots = np.repeat(np.arange(len(configs)), mult)
    if not isinstance(rngs, list):
        rngs = [rngs] * num_batches
    batches = []
    for b in range(num_batches):
        if samples_per_batch >= len(shots):
            picked = np.arange(len(configs))
        else:
            picked = np.unique(shots[rngs[b].choice(len(shots), size=samples_per_batch, replace=False)])
        batch = [configs[i] for i in picked]
        if cartesian:
            m = batch[0].num_orbitals
            alphas = sorted({c.alpha for c in batch})
            betas = sorted({c.beta for c in batch})
            batch = sorted(Configuration(a, bb, m) for a, bb in product(alphas, betas))
        batches.append(batch)
    return batches


@dataclass
class DavidsonResult:
    energy: float
    vector: np.ndarray = field(repr=False)
    converged: bool
    iterations: int
    residual: float


def davidson(
    apply: Callable[[np.ndarray], np.ndarray],
    diagonal: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 1000,
    restart: int = 32,
    v0: np.ndarray | None = None,
) -> DavidsonResult:
    """Lowest eigenpair of a real symmetric operator (block size 1).

    Corrections are preconditioned with ``(diag - theta)^-1``; the search space
    collapses to the current Ritz vector when it reaches ``restart`` vectors.
    Convergence means residual norm ``<= tol``.
    """
    dim = len(diagonal)
    if v0 is None:
        v0 = np.zeros(dim)
        v0[int(np.argmin(diagonal))] = 1.0
    basis = [v0 / np.linalg.norm(v0)]
    images = [apply(basis[0])]
    theta, x, rnorm = 0.0, basis[0], np.inf
    for it in range(1, max_iter + 1):
        v = np.column_stack(basis)
        av = np.column_stack(images)
        small = v.T @ av
        w, y = np.linalg.eigh(0.5 * (small + small.T))
        theta = float(w[0])
        x = v @ y[:, 0]
        ax = av @ y[:, 0]
        r = ax - theta * x
        rnorm = float(np.linalg.norm(r))
        if rnorm <= tol:
            return DavidsonResult(theta, x, True, it, rnorm)
        denom = diagonal - theta
        denom = np.where(np.abs(denom) < 1e-12, 1e-12, denom)
        t = r / denom
        if len(basis) >= restart:
            basis, images = [x / np.linalg.norm(x)], [ax / np.linalg.norm(x)]
        for _ in range(2):
            t = t - np.column_stack(basis) @ (np.column_stack(basis).T @ t)
        tn = np.linalg.norm(t)
        if tn < 1e-14:
            # the preconditioned residual lies in the search space; fall back to the raw residual
            t = r - np.column_stack(basis) @ (np.column_stack(basis).T @ r)
            tn = np.linalg.norm(t)
            if tn < 1e-14:
                break
        t /= tn
        basis.append(t)
        images.append(apply(t))
    return DavidsonResult(theta, x, rnorm <= tol, it, rnorm)


def diagonalize_subspace(op: SubspaceOperator, tol: float = 1e-10, max_iter: int = 1000) -> DavidsonResult:
    """Lowest eigenpair of ``op``; dense ``eigh`` for dimensions up to 64."""
    if op.dim == 0:
        raise EmptySubspaceError("subspace is empty")
    if op.dim <= DENSE_LIMIT:
        w, v = np.linalg.eigh(op.dense())
        vec = v[:, 0]
        res = float(np.linalg.norm(op.apply(vec) - w[0] * vec))
        return DavidsonResult(float(w[0]), vec, True, 1, res)
    result = davidson(op.apply, op.diagonal(), tol=tol, max_iter=max_iter)
    if not result.converged:
        log.warning("Davidson stopped at residual %.2e after %d iterations", result.residual, result.iterations)
    return result


def update_occupations(states: Iterable[tuple[np.ndarray, list[Configuration]]]) -> np.ndarray:
    """Batch-averaged orbital occupations ``(1/K) sum_b sum_x |psi_b(x)|^2 x``."""
    states = list(states)
    if not states:
        raise ValueError("no batch states given")
    total = None
    for psi, configs in states:
        weights = np.abs(np.asarray(psi)) ** 2
        occ = np.array([c.occupations() for c in configs])
        contrib = weights @ occ
        total = contrib if total is None else total + contrib
    return total / len(states)


@dataclass
class IterationRecord:
    index: int
    energies: list[float]
    dimensions: list[int]
    converged: list[bool]
    num_configurations: int
    occupations: list[float]


@dataclass
class SQDResult:
    """Full trace of an SQD run; ``energy`` is the minimum over the whole trace."""

    energy: float
    occupations: np.ndarray
    iterations: list[IterationRecord]
    converged: bool
    config: dict
    best_iteration: int
    best_batch: int

    @property
    def final_dimensions(self) -> list[int]:
        return self.iterations[-1].dimensions

    def to_dict(self) -> dict:
        return {
            "energy": self.energy,
            "occupations": [float(x) for x in self.occupations],
            "converged": self.converged,
            "best_iteration": self.best_iteration,
            "best_batch": self.best_batch,
            "config": self.config,
            "iterations": [asdict(it) for it in self.iterations],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def _solve_batch(ham, batch, cfg: RecoveryConfig, target_spin: float):
    op = build_subspace_operator(ham, batch, penalty=cfg.penalty, target_spin=target_spin)
    res = diagonalize_subspace(op, tol=cfg.davidson_tol, max_iter=cfg.davidson_max_iter)
    vec = res.vector / np.linalg.norm(res.vector)
    energy = float(vec @ (op.hamiltonian @ vec))
    return energy, vec, res.converged


def run_sqd(
    ham: ActiveSpaceHamiltonian,
    samples: SampleCounts | Mapping[Configuration, int],
    cfg: RecoveryConfig = RecoveryConfig(),
) -> SQDResult:
    """Self-consistent recovery loop; see the module docstring.

    Batch energies are ``<psi_b|H|psi_b>`` of the (possibly spin-penalized)
    ground state. The loop stops after ``max_iterations`` or once energy and
    occupations change by less than ``energy_tol`` and ``occupation_tol``.

    Raises:
        EmptySubspaceError: if postselection leaves nothing.
        SQDConvergenceError: if every batch of an iteration fails to converge.
    """
    na, nb = ham.num_alpha, ham.num_beta
    target_spin = abs(na - nb) / 2 if cfg.target_spin is None else cfg.target_spin
    raw = _as_multiset(samples)
    if not raw:
        raise EmptySubspaceError("no samples given")
    records: list[IterationRecord] = []
    occupations = None
    prev_energy = None
    converged = False
    best = (np.inf, -1, -1)
    for k in range(cfg.max_iterations):
        if k == 0:
            multiset = postselect(raw, na, nb)
        else:
            multiset = recover_configurations(raw, occupations, na, nb, _stream(cfg.seed, k, 0))
        rngs = [_stream(cfg.seed, k, 1, b) for b in range(cfg.num_batches)]
        batches = sample_batches(multiset, cfg.num_batches, cfg.samples_per_batch, rngs, cfg.cartesian)

        def solve(batch):
            return _solve_batch(ham, batch, cfg, target_spin)

        if cfg.threads > 1:
            with ThreadPoolExecutor(cfg.threads) as pool:
                results = list(pool.map(solve, batches))
        else:
            results = [solve(b) for b in batches]
        if not any(r[2] for r in results):
            raise SQDConvergenceError(f"all batch eigensolves failed in iteration {k}")
        energies = [r[0] for r in results]
        new_occ = update_occupations((r[1], b) for r, b in zip(results, batches))
        records.append(
            IterationRecord(
                k,
                energies,
                [len(b) for b in batches],
                [bool(r[2]) for r in results],
                len(multiset),
                [float(x) for x in new_occ],
            )
        )
        for b, e in enumerate(energies):
            if e < best[0]:
                best = (e, k, b)
        it_energy = min(energies)
        if prev_energy is not None:
            if abs(it_energy - prev_energy) < cfg.energy_tol and np.abs(new_occ - occupations).max() < cfg.occupation_tol:
                converged = True
                occupations = new_occ
                break
        prev_energy, occupations = it_energy, new_occ
    config = asdict(cfg)
    config["target_spin"] = target_spin
    del config["threads"]  # results do not depend on it
    return SQDResult(best[0], occupations, records, converged, config, best[1], best[2])

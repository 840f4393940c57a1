"""Configuration sampling from forged states.

Shots are split over branches with one multinomial draw, then each branch
samples its two registers independently and pairs the draws in order. Random
streams are derived from the run seed: the allocation uses spawn key ``(0,)``,
branch ``I`` uses ``(1, I)`` and the noise injector uses ``(2,)``; results
therefore do not depend on the thread count.

Counts files look like::

    # num_orbitals: 4
    # seed: 7
    1100 1100 9871
    1010 1100 129

with orbital 0 as the leftmost character of each bitstring.
"""

from __future__ import annotations

import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import TextIO

import numpy as np

from efsqd.forging import BranchWeights, EFState
from efsqd.simulator import SpinStatevector, apply_lucj, prepare_superposition, sample_bitstrings
from efsqd.slater import Configuration, format_bits, parse_bits

__all__ = [
    "SampleCounts",
    "allocate_shots",
    "inject_bit_flips",
    "postselection_fraction",
    "read_counts",
    "run_ef_sampling",
    "sample_statevector",
    "write_counts",
]


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass
class SampleCounts:
    """Multiset of sampled configurations with provenance metadata."""

    num_orbitals: int
    counts: dict[tuple[int, int], int]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        limit = 1 << self.num_orbitals
        for (a, b), n in self.counts.items():
            if not (0 <= a < limit and 0 <= b < limit):
                raise ValueError(f"bitstring pair {(a, b)} does not fit in {self.num_orbitals} orbitals")
            if n < 0:
                raise ValueError("counts must be non-negative")
        self.counts = {k: int(v) for k, v in sorted(self.counts.items()) if v > 0}

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def configurations(self) -> list[Configuration]:
        return [Configuration(a, b, self.num_orbitals) for a, b in self.counts]

    def items(self):
        for (a, b), n in self.counts.items():
            yield Configuration(a, b, self.num_orbitals), n

    @classmethod
    def from_shots(cls, num_orbitals: int, alpha: np.ndarray, beta: np.ndarray, metadata=None) -> SampleCounts:
        counter = Counter(zip(np.asarray(alpha).tolist(), np.asarray(beta).tolist()))
        return cls(num_orbitals, dict(counter), dict(metadata or {}))


def allocate_shots(probabilities: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Multinomial split of ``shots`` over branches."""
    p = np.asarray(probabilities, dtype=float)
    if (p < 0).any():
        raise ValueError("probabilities must be non-negative")
    if abs(p.sum() - 1) > 1e-10:
        raise ValueError("probabilities must sum to 1")
    if shots < 0:
        raise ValueError("shots must be non-negative")
    return rng.multinomial(shots, p / p.sum())


def _lucj(state: SpinStatevector | None, layers) -> SpinStatevector | None:
    return None if state is None else apply_lucj(state, list(layers))


def _ancilla_pools(state: EFState, weights: BranchWeights, alloc: np.ndarray, seed: int):
    """Register draws per ``(spin, mu, nu, phase)`` from repeated ancilla circuits.

    A circuit started with phase ``p in {0, 1}`` returns the ``p`` state on
    outcome ``+1`` and the ``p + 2`` state on ``-1``; both are kept. Circuits
    are repeated until every phase has as many draws as its branches need.
    """
    need: dict[tuple[int, int, int, int], int] = Counter()
    for b, n in zip(weights.branches, alloc):
        if not b.diagonal and n:
            need[(0, b.mu, b.nu, b.p)] += int(n)
            need[(1, b.mu, b.nu, b.r)] += int(n)
    pools: dict[tuple[int, int, int, int], list[int]] = {}
    executions = 0
    for key in sorted({(s, mu, nu, p % 2) for s, mu, nu, p in need}):
        spin, mu, nu, p = key
        rotations = state.rotations_alpha if spin == 0 else state.rotations_beta
        layers = state.lucj_alpha if spin == 0 else state.lucj_beta
        sup = prepare_superposition(rotations[mu], rotations[nu], state.reference[spin], p)
        targets = {p: _lucj(sup.state_plus, layers), p + 2: _lucj(sup.state_minus, layers)}
        want = {q: need.get((spin, mu, nu, q), 0) for q in (p, p + 2)}
        rng = _stream(seed, 3, spin, mu, nu, p)
        got = {q: [] for q in want}
        while any(len(got[q]) < want[q] for q in want):
            batch = max(16, 2 * max(want[q] - len(got[q]) for q in want))
            plus = int(rng.binomial(batch, min(1.0, sup.prob_plus)))
            executions += batch
            for q, n in ((p, plus), (p + 2, batch - plus)):
                if n and targets[q] is not None:
                    got[q].extend(sample_bitstrings(targets[q], n, rng).tolist())
        for q in want:
            pools[(spin, mu, nu, q)] = got[q][: want[q]]
    return pools, executions


def run_ef_sampling(
    state: EFState,
    weights: BranchWeights,
    shots: int,
    seed: int,
    mode: str = "direct",
    threads: int = 1,
    noise: float = 0.0,
) -> SampleCounts:
    """Draw ``shots`` configurations from the compound branch distribution.

    ``mode="direct"`` samples precomputed branch states; ``mode="ancilla"``
    obtains cross-branch register samples through the ancilla circuit. Both
    target the same distribution. ``noise > 0`` flips every bit independently
    with that probability after sampling.
    """
    if mode not in ("direct", "ancilla"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    alloc = allocate_shots(weights.probabilities, shots, _stream(seed, 0))
    pools, executions = ({}, 0)
    if mode == "ancilla":
        pools, executions = _ancilla_pools(state, weights, alloc, seed)
    offsets: Counter = Counter()
    jobs = []
    for idx, (b, n) in enumerate(zip(weights.branches, alloc)):
        if n == 0:
            continue
        if mode == "ancilla" and not b.diagonal:
            ka, kb = (0, b.mu, b.nu, b.p), (1, b.mu, b.nu, b.r)
            xa = pools[ka][offsets[ka] : offsets[ka] + n]
            xb = pools[kb][offsets[kb] : offsets[kb] + n]
            offsets[ka] += n
            offsets[kb] += n
            jobs.append((idx, np.array(xa, dtype=np.int64), np.array(xb, dtype=np.int64)))
        else:
            jobs.append((idx, int(n)))

    def draw(job):
        if len(job) == 3:
            return job[1], job[2]
        idx, n = job
        rng = _stream(seed, 1, idx)
        return (
            sample_bitstrings(weights.states_alpha[idx], n, rng),
            sample_bitstrings(weights.states_beta[idx], n, rng),
        )

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            draws = list(pool.map(draw, jobs))
    else:
        draws = [draw(job) for job in jobs]
    m = state.num_orbitals
    alpha = np.concatenate([d[0] for d in draws]) if draws else np.zeros(0, dtype=np.int64)
    beta = np.concatenate([d[1] for d in draws]) if draws else np.zeros(0, dtype=np.int64)
    if noise > 0:
        alpha, beta = inject_bit_flips(alpha, beta, m, noise, _stream(seed, 2))
    metadata = {
        "seed": seed,
        "shots": shots,
        "mode": mode,
        "noise": noise,
        "allocation": {weights.branches[i].label(): int(n) for i, n in enumerate(alloc) if n},
    }
    if mode == "ancilla":
        metadata["ancilla_circuit_executions"] = executions
    return SampleCounts.from_shots(m, alpha, beta, metadata)


def inject_bit_flips(
    alpha: np.ndarray, beta: np.ndarray, num_orbitals: int, rate: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Flip each of the ``2M`` bits of every shot independently with probability ``rate``."""
    if not 0 <= rate <= 1:
        raise ValueError("flip rate must lie in [0, 1]")
    weights = np.int64(1) << np.arange(num_orbitals, dtype=np.int64)
    out = []
    for regs in (alpha, beta):
        flips = rng.random((len(regs), num_orbitals)) < rate
        out.append(np.asarray(regs, dtype=np.int64) ^ (flips @ weights))
    return out[0], out[1]


def sample_statevector(
    vector: np.ndarray, num_orbitals: int, shots: int, rng: np.random.Generator, basis: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``(alpha, beta)`` shots from a two-register state.

    ``vector`` is indexed by ``alpha | beta << M`` or, when ``basis`` is given,
    by position in that list of such indices.
    """
    probs = np.abs(np.asarray(vector)) ** 2
    probs = probs / probs.sum()
    keys = rng.choice(len(probs), size=shots, p=probs)
    if basis is not None:
        keys = np.asarray(basis, dtype=np.int64)[keys]
    mask = (1 << num_orbitals) - 1
    return keys & mask, keys >> num_orbitals


def postselection_fraction(samples: SampleCounts, num_alpha: int, num_beta: int) -> float:
    """Fraction of shots whose spin registers hold exactly the target electron counts."""
    total = samples.total
    if total == 0:
        return 0.0
    good = sum(n for (a, b), n in samples.counts.items() if a.bit_count() == num_alpha and b.bit_count() == num_beta)
    return good / total


def write_counts(samples: SampleCounts, stream: TextIO | None = None) -> str:
    lines = [f"# num_orbitals: {samples.num_orbitals}"]
    for key in sorted(samples.metadata):
        lines.append(f"# {key}: {json.dumps(samples.metadata[key], sort_keys=True)}")
    m = samples.num_orbitals
    for (a, b), n in samples.counts.items():
        lines.append(f"{format_bits(a, m)} {format_bits(b, m)} {n}")
    text = "\n".join(lines) + "\n"
    if stream is not None:
        stream.write(text)
    return text


def read_counts(source: str | Path | TextIO) -> SampleCounts:
    """Parse a counts file. Bitstring width sets ``M`` when the header omits it."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        text = Path(source).read_text()
    elif isinstance(source, str):
        text = source
    else:
        text = source.read()
    metadata: dict = {}
    counts: Counter = Counter()
    width = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].partition(":")
            if sep:
                try:
                    metadata[key.strip()] = json.loads(value)
                except json.JSONDecodeError:
                    metadata[key.strip()] = value.strip()
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 'alpha_bits beta_bits count', got {raw!r}")
        a_txt, b_txt, n_txt = parts
        if len(a_txt) != len(b_txt) or (width is not None and len(a_txt) != width):
            raise ValueError(f"line {lineno}: inconsistent bitstring width")
        width = len(a_txt)
        try:
            n = int(n_txt)
            key = (parse_bits(a_txt), parse_bits(b_txt))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
        if n < 0:
            raise ValueError(f"line {lineno}: negative count")
        counts[key] += n
    m = metadata.pop("num_orbitals", width)
    if m is None:
        raise ValueError("counts file has no records and no num_orbitals header")
    if width is not None and width != m:
        raise ValueError("bitstring width does not match num_orbitals header")
    return SampleCounts(int(m), dict(counts), metadata)

"""Oracles, circuit resource counts and the end-to-end reaction-energy experiment."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as spla

from efsqd import fockspace
from efsqd.amplitudes import read_amplitudes
from efsqd.forging import EFState, branch_weights, build_ef_state, ef_energy
from efsqd.hamiltonian import ActiveSpaceHamiltonian, read_fcidump
from efsqd.sampler import postselection_fraction, run_ef_sampling
from efsqd.slater import hartree_fock_configuration, slater_condon_element
from efsqd.sqd import RecoveryConfig, run_sqd

__all__ = [
    "HARTREE_TO_KCAL",
    "ExperimentConfig",
    "FCIResult",
    "ResourceEstimate",
    "direct_ef_expectation",
    "emit_report",
    "estimate_resources",
    "fci_ground_state",
    "hartree_fock_energy",
    "run_experiment",
]

HARTREE_TO_KCAL = 627.5094740631
FCI_DIMENSION_LIMIT = 10**6
DENSE_FCI_LIMIT = 2000
DIRECT_MAX_ORBITALS = 8
RESOURCE_KINDS = ("LUCJ", "EF-ind", "EF-super")


@dataclass(frozen=True)
class ResourceEstimate:
    """Two-qubit gate counts and depth; ``raw`` keeps the exact rationals."""

    kind: str
    qubits: int
    ancillas: int
    xxyy_gates: int
    nn_gates: int
    depth: int
    raw: dict = field(repr=False)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["raw"] = {k: str(v) for k, v in self.raw.items()}
        return out


def estimate_resources(
    kind: str, num_orbitals: int, num_alpha: int, num_beta: int, num_layers: int, spin: str = "alpha"
) -> ResourceEstimate:
    """Gate counts of an LUCJ circuit or of the forged single-register circuits.

    ``LUCJ`` sums the state-preparation term over both spins; the ``EF`` kinds
    describe one register and use the electron count of ``spin``. Fractional
    terms are kept exact and rounded up in the integer fields.
    """
    m, L = num_orbitals, num_layers
    if m < 1 or L < 0 or not (0 <= num_alpha <= m and 0 <= num_beta <= m):
        raise ValueError("need M >= 1, L >= 0 and 0 <= N_sigma <= M")
    n = num_alpha if spin == "alpha" else num_beta
    if kind == "LUCJ":
        qubits, ancillas = 2 * m, 0
        xxyy = Fraction(num_alpha * (m - num_alpha) + num_beta * (m - num_beta) + L * 2 * m * (m - 1))
        nn = L * (2 * (m - 1) + Fraction(m, 4))
        depth = Fraction((m - 1) + L * (m + 3))
    elif kind == "EF-ind":
        qubits, ancillas = m, 0
        xxyy = Fraction(n * (m - n) + L * m * (m - 1))
        nn = L * (2 * (m - 1) + Fraction(m, 4))
        depth = Fraction((m - 1) + L * (m + 2))
    elif kind == "EF-super":
        qubits, ancillas = m, 1
        xxyy = Fraction(n * (m - n) + (m + 1) * (m - 1) + L * m * (m - 1))
        nn = Fraction(L * (m - 1))
        depth = Fraction(3 * (m - 1) + L * (m + 2))
    else:
        raise ValueError(f"unknown circuit kind {kind!r}; choose from {RESOURCE_KINDS}")
    raw = {"xxyy_gates": xxyy, "nn_gates": Fraction(nn), "depth": depth}
    return ResourceEstimate(kind, qubits, ancillas, math.ceil(xxyy), math.ceil(nn), math.ceil(depth), raw)


@dataclass
class FCIResult:
    energy: float
    vector: np.ndarray = field(repr=False)
    basis: np.ndarray = field(repr=False)


def fci_ground_state(ham: ActiveSpaceHamiltonian) -> FCIResult:
    """Exact lowest eigenpair in the ``(N_alpha, N_beta)`` sector.

    The vector is indexed like ``basis`` (Fock indices ``alpha | beta << M``).
    """
    dim = math.comb(ham.num_orbitals, ham.num_alpha) * math.comb(ham.num_orbitals, ham.num_beta)
    if dim > FCI_DIMENSION_LIMIT:
        raise ValueError(f"sector dimension {dim} exceeds the limit {FCI_DIMENSION_LIMIT}")
    basis, mat = fockspace.sector_hamiltonian(ham)
    if dim <= DENSE_FCI_LIMIT:
        w, v = np.linalg.eigh(mat.toarray())
        return FCIResult(float(w[0]), v[:, 0], basis)
    v0 = np.ones(dim) / math.sqrt(dim)
    w, v = spla.eigsh(mat, k=1, which="SA", v0=v0, tol=1e-12)
    return FCIResult(float(w[0]), v[:, 0], basis)


def hartree_fock_energy(ham: ActiveSpaceHamiltonian) -> float:
    hf = hartree_fock_configuration(ham.num_orbitals, ham.num_alpha, ham.num_beta)
    return float(slater_condon_element(ham, hf, hf))


def direct_ef_expectation(state: EFState, ham: ActiveSpaceHamiltonian) -> float:
    """``<Psi|H|Psi> / <Psi|Psi>`` from the assembled two-register statevector."""
    if ham.num_orbitals > DIRECT_MAX_ORBITALS:
        raise ValueError(f"direct evaluation is limited to {DIRECT_MAX_ORBITALS} orbitals")
    if state.num_orbitals != ham.num_orbitals:
        raise ValueError("state and Hamiltonian have different orbital counts")
    psi = state.statevector()
    basis, mat = fockspace.sector_hamiltonian(ham)
    sector = psi[basis]
    return float(np.real(np.vdot(sector, mat @ sector)) / np.real(np.vdot(psi, psi)))


@dataclass
class ExperimentConfig:
    """Settings of the three-geometry experiment.

    ``geometries`` maps a label to an FCIDUMP path; the labels ``reactant``,
    ``transition_state`` and ``product`` enable the energy differences.
    ``amplitudes`` optionally maps labels to amplitude files (MP2 otherwise).
    Without an explicit ``recovery`` the batch size equals ``shots``.
    """

    geometries: dict[str, str]
    amplitudes: dict[str, str] = field(default_factory=dict)
    n_det: int = 6
    num_layers: int = 1
    mask: str = "dense"
    bandwidth: int | None = None
    optimize_iters: int = 20
    shots: int = 100_000
    sampling_mode: str = "direct"
    noise: float = 0.0
    recovery: RecoveryConfig | None = None
    seed: int = 0
    threads: int = 1
    output_dir: str | None = None

    def __post_init__(self):
        if not self.geometries:
            raise ValueError("at least one geometry is required")
        if self.recovery is None:
            # batches cover every shot unless the caller says otherwise
            self.recovery = RecoveryConfig(samples_per_batch=max(1, self.shots))
        elif isinstance(self.recovery, dict):
            self.recovery = RecoveryConfig(**self.recovery)
        for label, path in list(self.geometries.items()) + list(self.amplitudes.items()):
            if not Path(path).is_file():
                raise FileNotFoundError(f"{label}: no such file {path}")

    @classmethod
    def from_json(cls, text: str, base: Path | None = None) -> ExperimentConfig:
        """Build from a JSON document; relative paths resolve against ``base``."""
        doc = json.loads(text)
        if base is not None:
            for key in ("geometries", "amplitudes"):
                doc[key] = {k: str(base / v) for k, v in doc.get(key, {}).items()}
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


def _geometry_seeds(seed: int) -> list[int]:
    # every geometry shares the same streams (common random numbers), so
    # identical inputs give identical energies and differences carry less noise
    return [int(x) for x in np.random.SeedSequence(seed).generate_state(3)]


def _run_geometry(cfg: ExperimentConfig, label: str) -> dict:
    ansatz_seed, sample_seed, sqd_seed = _geometry_seeds(cfg.seed)
    out: dict = {"fcidump": Path(cfg.geometries[label]).name, "seeds": [ansatz_seed, sample_seed, sqd_seed]}
    stage = "parse"
    try:
        ham = read_fcidump(cfg.geometries[label])
        out.update(num_orbitals=ham.num_orbitals, nelec=list(ham.nelec), hf_energy=hartree_fock_energy(ham))
        stage = "ansatz"
        amp = read_amplitudes(cfg.amplitudes[label]) if label in cfg.amplitudes else None
        state, info = build_ef_state(
            ham,
            cfg.n_det,
            np.random.default_rng(ansatz_seed),
            amplitudes=amp,
            num_layers=cfg.num_layers,
            mask=cfg.mask,
            bandwidth=cfg.bandwidth,
            optimize_iters=cfg.optimize_iters,
        )
        weights = branch_weights(state, threads=cfg.threads)
        out["noci_energy"] = info.noci_energy
        out["ef_energy"] = ef_energy(state, ham, weights)
        if ham.num_orbitals <= DIRECT_MAX_ORBITALS:
            out["ef_energy_direct"] = direct_ef_expectation(state, ham)
        out["num_branches"] = len(weights)
        stage = "sample"
        samples = run_ef_sampling(
            state, weights, cfg.shots, sample_seed, mode=cfg.sampling_mode, threads=cfg.threads, noise=cfg.noise
        )
        out["postselection_fraction"] = postselection_fraction(samples, ham.num_alpha, ham.num_beta)
        out["distinct_samples"] = len(samples.counts)
        stage = "sqd"
        rec = RecoveryConfig(**{**asdict(cfg.recovery), "seed": sqd_seed, "threads": cfg.threads})
        result = run_sqd(ham, samples, rec)
        out["sqd_energy"] = result.energy
        out["sqd_converged"] = result.converged
        out["subspace_expansion"] = "cartesian" if rec.cartesian else "sampled"
        out["trace"] = [
            {"iteration": it.index, "energies": it.energies, "dimensions": it.dimensions}
            for it in result.iterations
        ]
        stage = "fci"
        try:
            out["fci_energy"] = fci_ground_state(ham).energy
        except ValueError as exc:
            out["fci_skipped"] = str(exc)
    except Exception as exc:  # a failing geometry leaves a partial entry
        out["error"] = f"{stage}: {exc}"
    return out


def _differences(geoms: dict, key: str) -> dict | None:
    try:
        r, ts, p = (geoms[k][key] for k in ("reactant", "transition_state", "product"))
    except KeyError:
        return None
    act, rxn = ts - r, p - r
    return {
        "activation_hartree": act,
        "reaction_hartree": rxn,
        "activation_kcal_mol": act * HARTREE_TO_KCAL,
        "reaction_kcal_mol": rxn * HARTREE_TO_KCAL,
    }


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Ansatz, sampling, SQD and FCI for every geometry, plus reaction energetics."""
    labels = list(cfg.geometries)
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            entries = list(pool.map(lambda label: _run_geometry(cfg, label), labels))
    else:
        entries = [_run_geometry(cfg, label) for label in labels]
    geoms = dict(zip(labels, entries))
    config = cfg.to_dict()
    config["geometries"] = {k: Path(v).name for k, v in cfg.geometries.items()}
    config["amplitudes"] = {k: Path(v).name for k, v in cfg.amplitudes.items()}
    config.pop("threads")
    config["recovery"].pop("threads")
    report = {"config": config, "geometries": geoms, "hartree_to_kcal_mol": HARTREE_TO_KCAL}
    for key, name in (("sqd_energy", "sqd"), ("fci_energy", "fci"), ("ef_energy", "ef")):
        diff = _differences(geoms, key)
        if diff is not None:
            report.setdefault("differences", {})[name] = diff
    return report


CSV_FIELDS = ["geometry", "iteration", "batch", "energy", "dimension", "fci_energy", "deviation"]


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=1) + "\n"


def report_csv(report: dict) -> str:
    """One row per (geometry, iteration, batch) with the deviation from FCI when known."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for label, entry in report.get("geometries", {}).items():
        fci = entry.get("fci_energy")
        for it in entry.get("trace", []):
            for b, (e, d) in enumerate(zip(it["energies"], it["dimensions"])):
                dev = "" if fci is None else repr(e - fci)
                writer.writerow([label, it["iteration"], b, repr(e), d, "" if fci is None else repr(fci), dev])
    return buf.getvalue()


def emit_report(report: dict, fmt: str, path: str | Path | None = None) -> str:
    """Serialize ``report`` as ``json`` or ``csv``; write it to ``path`` when given."""
    if fmt == "json":
        text = report_json(report)
    elif fmt == "csv":
        text = report_csv(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text

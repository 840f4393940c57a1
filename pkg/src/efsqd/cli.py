"""Command-line entry point: ``efsqd [--seed N] [--threads N] [--output PATH] <command> ...``.

Exit status is 0 on success, 2 for bad input and 3 when an eigensolver fails
to converge.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from efsqd.amplitudes import read_amplitudes
from efsqd.bench import (
    RESOURCE_KINDS,
    ExperimentConfig,
    emit_report,
    estimate_resources,
    fci_ground_state,
    hartree_fock_energy,
    run_experiment,
)
from efsqd.forging import branch_weights, build_ef_state, ef_energy, load_ef_state, save_ef_state
from efsqd.hamiltonian import FcidumpError, read_fcidump
from efsqd.sampler import read_counts, run_ef_sampling, write_counts
from efsqd.sqd import EmptySubspaceError, RecoveryConfig, SQDConvergenceError, run_sqd

EXIT_INPUT = 2
EXIT_CONVERGENCE = 3


def _emit(args, text: str):
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def cmd_parse(args):
    ham = read_fcidump(args.fcidump)
    _emit(
        args,
        _dump(
            {
                "num_orbitals": ham.num_orbitals,
                "num_alpha": ham.num_alpha,
                "num_beta": ham.num_beta,
                "core_energy": ham.core_energy,
                "hf_energy": hartree_fock_energy(ham),
            }
        ),
    )


def cmd_ansatz(args):
    ham = read_fcidump(args.fcidump)
    amp = read_amplitudes(args.amplitudes) if args.amplitudes else None
    state, info = build_ef_state(
        ham,
        args.n_det,
        np.random.default_rng(args.seed),
        amplitudes=amp,
        num_layers=args.layers,
        mask=args.mask,
        bandwidth=args.bandwidth,
        optimize_iters=args.optimize_iters,
    )
    logging.info("NOCI energy %.10f, forged energy %.10f", info.noci_energy, ef_energy(state, ham))
    _emit(args, save_ef_state(state) + "\n")


def cmd_sample(args):
    state = load_ef_state(Path(args.state).read_text())
    weights = branch_weights(state, threads=args.threads)
    counts = run_ef_sampling(
        state, weights, args.shots, args.seed, mode=args.mode, threads=args.threads, noise=args.noise
    )
    _emit(args, write_counts(counts))


def cmd_sqd(args):
    ham = read_fcidump(args.fcidump)
    counts = read_counts(Path(args.counts))
    cfg = RecoveryConfig(
        num_batches=args.batches,
        samples_per_batch=args.samples_per_batch,
        max_iterations=args.iterations,
        penalty=args.penalty,
        target_spin=args.target_spin,
        seed=args.seed,
        cartesian=args.cartesian,
        threads=args.threads,
    )
    _emit(args, run_sqd(ham, counts, cfg).to_json() + "\n")


def cmd_resources(args):
    kinds = [args.kind] if args.kind else list(RESOURCE_KINDS)
    nb = args.nb if args.nb is not None else args.na
    out = [estimate_resources(k, args.M, args.na, nb, args.layers, args.spin).to_dict() for k in kinds]
    _emit(args, _dump(out))


def cmd_experiment(args):
    path = Path(args.config)
    doc = json.loads(path.read_text())
    doc.setdefault("seed", args.seed)
    doc["threads"] = args.threads
    cfg = ExperimentConfig.from_json(json.dumps(doc), base=path.parent)
    report = run_experiment(cfg)
    outdir = Path(args.output or cfg.output_dir or ".")
    outdir.mkdir(parents=True, exist_ok=True)
    emit_report(report, "json", outdir / "report.json")
    emit_report(report, "csv", outdir / "report.csv")
    sys.stdout.write(_dump(report.get("differences", {})))
    if any("error" in g for g in report["geometries"].values()):
        return EXIT_INPUT
    return 0


def cmd_oracle(args):
    ham = read_fcidump(args.fcidump)
    fci = fci_ground_state(ham)
    _emit(args, _dump({"fci_energy": fci.energy, "dimension": len(fci.basis), "hf_energy": hartree_fock_energy(ham)}))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="efsqd", description="Forged-state sampling with SQD post-processing.")
    parser.add_argument("--seed", type=int, default=0, help="root random seed")
    parser.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    parser.add_argument("--output", help="output file (output directory for 'experiment')")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="summarize an FCIDUMP file")
    p.add_argument("fcidump")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("ansatz", help="build a forged state and write it as JSON")
    p.add_argument("fcidump")
    p.add_argument("--amplitudes", help="amplitude file (MP2 when omitted)")
    p.add_argument("--n-det", type=int, default=6)
    p.add_argument("--layers", type=int, default=1, help="same-spin eigenpairs kept (0 = all)")
    p.add_argument("--mask", choices=["dense", "banded", "nearest"], default="dense")
    p.add_argument("--bandwidth", type=int)
    p.add_argument("--optimize-iters", type=int, default=20)
    p.set_defaults(func=cmd_ansatz)

    p = sub.add_parser("sample", help="sample configurations from a forged state")
    p.add_argument("state", help="JSON written by 'ansatz'")
    p.add_argument("--shots", type=int, default=100_000)
    p.add_argument("--mode", choices=["direct", "ancilla"], default="direct")
    p.add_argument("--noise", type=float, default=0.0, help="bit-flip probability")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("sqd", help="run configuration recovery and subspace diagonalization")
    p.add_argument("fcidump")
    p.add_argument("counts")
    p.add_argument("--batches", type=int, default=5)
    p.add_argument("--samples-per-batch", type=int, default=1000)
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--penalty", type=float, default=0.0)
    p.add_argument("--target-spin", type=float)
    p.add_argument("--cartesian", action="store_true", help="pair every sampled up string with every down string")
    p.set_defaults(func=cmd_sqd)

    p = sub.add_parser("resources", help="two-qubit gate counts and depth")
    p.add_argument("--kind", choices=RESOURCE_KINDS)
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--na", type=int, required=True)
    p.add_argument("--nb", type=int)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--spin", choices=["alpha", "beta"], default="alpha")
    p.set_defaults(func=cmd_resources)

    p = sub.add_parser("experiment", help="run the multi-geometry experiment from a JSON config")
    p.add_argument("config")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("oracle", help="exact ground-state energy of an FCIDUMP")
    p.add_argument("fcidump")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args) or 0
    except SQDConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (FcidumpError, EmptySubspaceError, ValueError, OSError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

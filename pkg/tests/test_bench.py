import csv
import io
import json
import math
import shutil

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DATA, REFERENCE, random_ef_state, random_hamiltonian
from efsqd.bench import (
    HARTREE_TO_KCAL,
    ExperimentConfig,
    direct_ef_expectation,
    emit_report,
    estimate_resources,
    fci_ground_state,
    hartree_fock_energy,
    run_experiment,
)
from efsqd.forging import EFState, ef_energy
from efsqd.simulator import OrbitalRotationSpec
from efsqd.sqd import RecoveryConfig


def hand_table(kind, m, na, nb, L, n):
    # independent transcription of the resource formulas, float arithmetic with ceiling
    if kind == "LUCJ":
        return 2 * m, na * (m - na) + nb * (m - nb) + L * 2 * m * (m - 1), math.ceil(L * (2 * (m - 1) + m / 4)), (m - 1) + L * (m + 3)
    if kind == "EF-ind":
        return m, n * (m - n) + L * m * (m - 1), math.ceil(L * (2 * (m - 1) + m / 4)), (m - 1) + L * (m + 2)
    return m, n * (m - n) + (m + 1) * (m - 1) + L * m * (m - 1), L * (m - 1), 3 * (m - 1) + L * (m + 2)


def test_resource_spot_values():
    lucj = estimate_resources("LUCJ", 13, 7, 6, 1)
    assert (lucj.qubits, lucj.xxyy_gates, lucj.depth) == (26, 396, 28)
    assert lucj.nn_gates == 28 and str(lucj.raw["nn_gates"]) == "109/4"
    sup = estimate_resources("EF-super", 13, 7, 7, 1)
    assert (sup.qubits, sup.ancillas, sup.xxyy_gates, sup.depth) == (13, 1, 366, 51)
    assert estimate_resources("EF-ind", 13, 7, 7, 1).qubits == 13


@pytest.mark.parametrize("kind", ["LUCJ", "EF-ind", "EF-super"])
def test_layer_free_limit(kind):
    est = estimate_resources(kind, 8, 3, 5, 0)
    single = 3 * 5
    expected = {"LUCJ": 2 * single, "EF-ind": single, "EF-super": single + 9 * 7}[kind]
    assert est.xxyy_gates == expected
    assert est.nn_gates == 0


def test_resource_table_matches_hand_formulas():
    mismatches = 0
    for m in range(4, 31):
        for na in range(1, m + 1):
            nb = max(1, na - 1)
            for L in range(4):
                for kind in ("LUCJ", "EF-ind", "EF-super"):
                    est = estimate_resources(kind, m, na, nb, L)
                    got = (est.qubits, est.xxyy_gates, est.nn_gates, est.depth)
                    mismatches += got != hand_table(kind, m, na, nb, L, na)
    assert mismatches == 0


@settings(max_examples=60, deadline=None)
@given(m=st.integers(2, 40), L=st.integers(0, 5), frac=st.floats(0, 1), kind=st.sampled_from(["LUCJ", "EF-ind", "EF-super"]))
def test_resources_monotone(m, L, frac, kind):
    n = round(frac * m)
    base = estimate_resources(kind, m, n, n, L)
    more_layers = estimate_resources(kind, m, n, n, L + 1)
    bigger = estimate_resources(kind, m + 1, n, n, L)
    for field in ("xxyy_gates", "nn_gates", "depth"):
        assert getattr(more_layers, field) >= getattr(base, field) >= 0
        assert getattr(bigger, field) >= getattr(base, field)


def test_resource_errors():
    with pytest.raises(ValueError):
        estimate_resources("LUCJ", 0, 0, 0, 1)
    with pytest.raises(ValueError):
        estimate_resources("LUCJ", 4, 5, 1, 1)
    with pytest.raises(ValueError):
        estimate_resources("other", 4, 2, 2, 1)


def test_fci_reference_and_bound(h2, h4, rng):
    assert fci_ground_state(h2).energy == pytest.approx(REFERENCE["h2_0.735"]["fci"], abs=1e-8)
    assert fci_ground_state(h4).energy <= hartree_fock_energy(h4)
    for _ in range(3):
        ham = random_hamiltonian(rng, 4, 2, 1)
        assert fci_ground_state(ham).energy <= hartree_fock_energy(ham) + 1e-12


def test_direct_expectation(h4, rng):
    ident = OrbitalRotationSpec.identity(4)
    hf = EFState(4, (0b0011, 0b0011), [1.0], (ident,), (ident,))
    assert direct_ef_expectation(hf, h4) == pytest.approx(hartree_fock_energy(h4), abs=1e-12)
    fci = fci_ground_state(h4).energy
    for _ in range(5):
        state = random_ef_state(rng, 4, 2, 2, 3)
        e = direct_ef_expectation(state, h4)
        assert e == pytest.approx(ef_energy(state, h4), abs=1e-8)
        assert e >= fci - 1e-10
    with pytest.raises(ValueError):
        direct_ef_expectation(random_ef_state(rng, 3, 1, 1, 1), h4)


def small_config(paths, **kw):
    base = dict(
        geometries=paths,
        n_det=2,
        optimize_iters=0,
        shots=2000,
        recovery=RecoveryConfig(num_batches=2, samples_per_batch=500, max_iterations=2),
    )
    base.update(kw)
    return ExperimentConfig(**base)


LABELS = ("reactant", "transition_state", "product")


def test_identical_geometries_give_zero_differences():
    path = str(DATA / "h2_0.735.fcidump")
    report = run_experiment(small_config({k: path for k in LABELS}))
    for name in ("sqd", "fci", "ef"):
        diff = report["differences"][name]
        assert diff["activation_hartree"] == 0.0 and diff["reaction_hartree"] == 0.0
        assert diff["activation_kcal_mol"] == 0.0


def test_report_determinism_and_serialization(tmp_path):
    paths = {k: str(DATA / f) for k, f in zip(LABELS, ("h2_0.735.fcidump", "h2_2.50.fcidump", "h2_0.735.fcidump"))}
    a = run_experiment(small_config(paths, seed=3))
    b = run_experiment(small_config(paths, seed=3, threads=3))
    assert emit_report(a, "json") == emit_report(b, "json")
    text = emit_report(a, "json", tmp_path / "r.json")
    assert (tmp_path / "r.json").read_text() == text
    assert emit_report(json.loads(text), "json") == text
    diff = a["differences"]["fci"]
    assert diff["reaction_kcal_mol"] == diff["reaction_hartree"] * HARTREE_TO_KCAL
    rows = list(csv.DictReader(io.StringIO(emit_report(a, "csv"))))
    expected = sum(len(it["energies"]) for g in a["geometries"].values() for it in g["trace"])
    assert len(rows) == expected == sum(len(g["trace"]) * 2 for g in a["geometries"].values())
    first = rows[0]
    assert float(first["deviation"]) == pytest.approx(float(first["energy"]) - float(first["fci_energy"]))
    with pytest.raises(ValueError):
        emit_report(a, "xml")


def test_empty_trace_csv():
    assert emit_report({}, "csv") == "geometry,iteration,batch,energy,dimension,fci_energy,deviation\n"
    assert emit_report({"geometries": {"r": {"trace": []}}}, "csv").count("\n") == 1


def test_failing_geometry_leaves_partial_entry(tmp_path):
    bad = tmp_path / "bad.fcidump"
    bad.write_text("&FCI NORB=2, NELEC=2, MS2=0 &END\n 0.1 9 9 9 9\n")
    good = tmp_path / "good.fcidump"
    shutil.copy(DATA / "h2_0.735.fcidump", good)
    report = run_experiment(small_config({"reactant": str(good), "product": str(bad)}))
    assert report["geometries"]["product"]["error"].startswith("parse:")
    assert "sqd_energy" in report["geometries"]["reactant"]
    assert "differences" not in report


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        ExperimentConfig(geometries={})
    with pytest.raises(FileNotFoundError):
        ExperimentConfig(geometries={"reactant": str(tmp_path / "missing.fcidump")})
    shutil.copy(DATA / "h2_0.735.fcidump", tmp_path / "a.fcidump")
    doc = json.dumps({"geometries": {"reactant": "a.fcidump"}, "recovery": {"num_batches": 2}, "shots": 50})
    cfg = ExperimentConfig.from_json(doc, base=tmp_path)
    assert cfg.recovery.num_batches == 2
    assert ExperimentConfig(geometries=cfg.geometries, shots=50).recovery.samples_per_batch == 50


def test_oracle_chain(h4):
    # FCI <= SQD <= forged-state energy when the subspace is sampled from that state
    from efsqd.forging import branch_weights, build_ef_state
    from efsqd.sampler import run_ef_sampling
    from efsqd.sqd import run_sqd

    state, _ = build_ef_state(h4, 2, np.random.default_rng(0))
    samples = run_ef_sampling(state, branch_weights(state), 3000, seed=0)
    sqd = run_sqd(h4, samples, RecoveryConfig(num_batches=2, samples_per_batch=3000, max_iterations=2)).energy
    assert fci_ground_state(h4).energy - 1e-10 <= sqd <= direct_ef_expectation(state, h4) + 1e-10

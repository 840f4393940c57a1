"""Regenerate the bundled FCIDUMP files and their reference FCI energies.

Needs pyscf, which is not a runtime dependency of efsqd. Run once:

    python scripts/make_fcidumps.py
"""

from __future__ import annotations

import json
from pathlib import Path

from pyscf import fci, gto, scf
from pyscf.tools import fcidump

OUT = Path(__file__).resolve().parents[1] / "src" / "efsqd" / "data"


def chain(bonds):
    x = 0.0
    atoms = [("H", (0.0, 0.0, 0.0))]
    for b in bonds:
        x += b
        atoms.append(("H", (0.0, 0.0, x)))
    return atoms


SYSTEMS = {
    "h2_0.735": dict(atom=chain([0.735]), spin=0),
    "h2_2.50": dict(atom=chain([2.50]), spin=0),
    "h3_chain": dict(atom=chain([0.9, 1.1]), spin=1),
    "h4_reactant": dict(atom=chain([0.74, 2.20, 0.74]), spin=0),
    "h4_ts": dict(atom=chain([0.95, 1.25, 1.05]), spin=0),
    "h4_product": dict(atom=chain([0.90, 1.60, 0.80]), spin=0),
}


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    refs = {}
    for name, kw in SYSTEMS.items():
        mol = gto.M(atom=kw["atom"], basis="sto-3g", spin=kw["spin"], unit="Angstrom", verbose=0)
        mf = scf.ROHF(mol).run() if kw["spin"] else scf.RHF(mol).run()
        path = OUT / f"{name}.fcidump"
        fcidump.from_scf(mf, str(path), tol=0.0)
        data = fcidump.read(str(path))
        nelec = ((data["NELEC"] + data["MS2"]) // 2, (data["NELEC"] - data["MS2"]) // 2)
        e_fci, _ = fci.direct_spin1.kernel(data["H1"], data["H2"], data["NORB"], nelec, ecore=data["ECORE"], conv_tol=1e-14)
        refs[name] = {"scf": float(mf.e_tot), "fci": float(e_fci), "norb": data["NORB"], "nelec": list(nelec)}
    (OUT / "reference_energies.json").write_text(json.dumps(refs, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()

"""Active-space Hamiltonians and FCIDUMP input/output.

Integrals are real, in chemists' notation ``eri[p, q, r, s] = (pq|rs)``, with
0-based orbital indices. FCIDUMP files use 1-based indices.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import TextIO

import numpy as np

__all__ = [
    "ActiveSpaceHamiltonian",
    "FcidumpError",
    "parse_fcidump",
    "read_fcidump",
    "write_fcidump",
    "symmetrize_eri",
]

SYMMETRY_TOL = 1e-12


class FcidumpError(ValueError):
    """Raised for malformed FCIDUMP input. Carries the offending line number."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        where = f"line {lineno}: " if lineno is not None else ""
        super().__init__(where + message)


@dataclass(frozen=True)
class ActiveSpaceHamiltonian:
    """Second-quantized electronic Hamiltonian restricted to ``M`` spatial orbitals.

    H = core + sum_pq h1[p,q] sum_s a+_ps a_qs
        + 1/2 sum_pqrs (pq|rs) sum_st a+_ps a+_rt a_st a_qs
    """

    num_orbitals: int
    num_alpha: int
    num_beta: int
    core_energy: float
    h1: np.ndarray
    eri: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = self.num_orbitals
        if m < 1:
            raise ValueError("num_orbitals must be positive")
        if not (0 <= self.num_alpha <= m and 0 <= self.num_beta <= m):
            raise ValueError(f"electron counts ({self.num_alpha}, {self.num_beta}) incompatible with {m} orbitals")
        h1 = np.array(self.h1, dtype=float)
        eri = np.array(self.eri, dtype=float)
        if h1.shape != (m, m) or eri.shape != (m, m, m, m):
            raise ValueError("integral shapes do not match num_orbitals")
        if not np.allclose(h1, h1.T, atol=SYMMETRY_TOL, rtol=0):
            raise ValueError("h1 is not symmetric")
        for perm in _ERI_PERMUTATIONS[1:]:
            if not np.allclose(eri, eri.transpose(perm), atol=SYMMETRY_TOL, rtol=0):
                raise ValueError("eri lacks 8-fold permutation symmetry")
        h1.flags.writeable = False
        eri.flags.writeable = False
        object.__setattr__(self, "h1", h1)
        object.__setattr__(self, "eri", eri)
        object.__setattr__(self, "core_energy", float(self.core_energy))

    @property
    def nelec(self) -> tuple[int, int]:
        return self.num_alpha, self.num_beta

    def fock_diagonal(self) -> tuple[np.ndarray, np.ndarray]:
        """Diagonal of the spin-resolved Fock matrices built on the aufbau reference."""
        occ_a = np.arange(self.num_alpha)
        occ_b = np.arange(self.num_beta)
        coulomb = np.einsum("ppkk->p", self.eri[:, :, occ_a][:, :, :, occ_a]) + np.einsum(
            "ppkk->p", self.eri[:, :, occ_b][:, :, :, occ_b]
        )
        exch_a = np.einsum("pkkp->p", self.eri[:, occ_a][:, :, occ_a])
        exch_b = np.einsum("pkkp->p", self.eri[:, occ_b][:, :, occ_b])
        diag = np.diag(self.h1)
        return diag + coulomb - exch_a, diag + coulomb - exch_b


# (pq|rs) images: identity first.
_ERI_PERMUTATIONS = [
    (0, 1, 2, 3),
    (1, 0, 2, 3),
    (0, 1, 3, 2),
    (1, 0, 3, 2),
    (2, 3, 0, 1),
    (3, 2, 0, 1),
    (2, 3, 1, 0),
    (3, 2, 1, 0),
]


def _images(p: int, q: int, r: int, s: int):
    idx = (p, q, r, s)
    return {tuple(idx[k] for k in perm) for perm in _ERI_PERMUTATIONS}


def symmetrize_eri(eri: np.ndarray) -> np.ndarray:
    """Average a rank-4 tensor over the 8 real-orbital index permutations."""
    eri = np.asarray(eri, dtype=float)
    avg = sum(eri.transpose(perm) for perm in _ERI_PERMUTATIONS) / 8.0
    # summation order differs between images; copy one representative so they agree bitwise
    idx = np.indices(eri.shape).reshape(4, -1)
    rep = np.min([np.ravel_multi_index(tuple(idx[list(perm)]), eri.shape) for perm in _ERI_PERMUTATIONS], axis=0)
    return avg.ravel()[rep].reshape(eri.shape)


_HEADER_RE = re.compile(r"&FCI(.*?)(&END|/)", re.IGNORECASE | re.DOTALL)
_KEY_RE = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)\s*=\s*([^=]*?)(?=(?:,?\s*[A-Za-z_][A-Za-z0-9_]*\s*=)|$)", re.DOTALL)


def _parse_header(text: str) -> tuple[dict[str, str], int]:
    match = _HEADER_RE.search(text)
    if match is None:
        raise FcidumpError("missing &FCI ... &END namelist header", 1)
    body = match.group(1)
    values: dict[str, str] = {}
    for key, value in _KEY_RE.findall(body):
        values[key.upper()] = value.strip().rstrip(",").strip()
    end_line = text.count("\n", 0, match.end()) + 1
    return values, end_line


def _header_int(values: dict[str, str], key: str, default: int | None = None) -> int:
    if key not in values:
        if default is None:
            raise FcidumpError(f"header is missing {key}", 1)
        return default
    try:
        return int(values[key])
    except ValueError:
        raise FcidumpError(f"header field {key}={values[key]!r} is not an integer", 1) from None


def parse_fcidump(stream: str | TextIO) -> ActiveSpaceHamiltonian:
    """Parse FCIDUMP text into an :class:`ActiveSpaceHamiltonian`.

    Each two-electron record fills all eight symmetry images. Records with
    ``k = l = 0`` are one-electron terms (both ``h[i,j]`` and ``h[j,i]`` are set)
    and the record with all indices zero is the core energy.
    """
    text = stream if isinstance(stream, str) else stream.read()
    values, header_end = _parse_header(text)
    norb = _header_int(values, "NORB")
    nelec = _header_int(values, "NELEC")
    ms2 = _header_int(values, "MS2", 0)
    if norb < 1:
        raise FcidumpError(f"NORB must be positive, got {norb}", 1)
    if (nelec + ms2) % 2 or nelec < abs(ms2):
        raise FcidumpError(f"NELEC={nelec} and MS2={ms2} have inconsistent parity", 1)
    n_alpha, n_beta = (nelec + ms2) // 2, (nelec - ms2) // 2
    if n_alpha > norb or n_beta > norb:
        raise FcidumpError(f"NELEC={nelec}, MS2={ms2} do not fit in NORB={norb}", 1)

    h1 = np.zeros((norb, norb))
    eri = np.zeros((norb, norb, norb, norb))
    core = 0.0
    lines = text.splitlines()
    for lineno in range(header_end + 1, len(lines) + 1):
        line = lines[lineno - 1].strip()
        if not line or line.startswith(("!", "#")):
            continue
        parts = line.split()
        if len(parts) != 5:
            raise FcidumpError(f"expected 'value i j k l', got {line!r}", lineno)
        try:
            value = float(parts[0].replace("D", "E").replace("d", "e"))
        except ValueError:
            raise FcidumpError(f"bad integral value {parts[0]!r}", lineno) from None
        try:
            i, j, k, l = (int(x) for x in parts[1:])
        except ValueError:
            raise FcidumpError(f"non-integer orbital index in {line!r}", lineno) from None
        if any(x < 0 or x > norb for x in (i, j, k, l)):
            raise FcidumpError(f"orbital index out of range [0, {norb}] in {line!r}", lineno)
        if i == j == k == l == 0:
            core = value
        elif k == 0 and l == 0:
            if j == 0:
                continue  # orbital energy record "e i 0 0 0"
            if i == 0:
                raise FcidumpError(f"one-electron record needs nonzero i: {line!r}", lineno)
            h1[i - 1, j - 1] = h1[j - 1, i - 1] = value
        elif 0 in (i, j, k, l):
            # orbital energies and other zero-index records carry no Hamiltonian terms
            continue
        else:
            for idx in _images(i - 1, j - 1, k - 1, l - 1):
                eri[idx] = value
    return ActiveSpaceHamiltonian(norb, n_alpha, n_beta, core, h1, eri)


def read_fcidump(path: str | Path) -> ActiveSpaceHamiltonian:
    with open(path) as f:
        return parse_fcidump(f)


def write_fcidump(ham: ActiveSpaceHamiltonian, stream: TextIO | None = None, tol: float = 0.0) -> str:
    """Serialize ``ham`` as FCIDUMP text; one record per symmetry-unique quartet.

    Values are written with ``repr`` so that a round trip is bit-exact.
    """
    m = ham.num_orbitals
    out = io.StringIO()
    nelec = ham.num_alpha + ham.num_beta
    ms2 = ham.num_alpha - ham.num_beta
    out.write(f" &FCI NORB={m},NELEC={nelec},MS2={ms2},\n")
    out.write("  ORBSYM=" + ",".join("1" * m) + ",\n  ISYM=1,\n &END\n")
    for p in range(m):
        for q in range(p + 1):
            pq = p * (p + 1) // 2 + q
            for r in range(m):
                for s in range(r + 1):
                    if r * (r + 1) // 2 + s > pq:
                        continue
                    value = ham.eri[p, q, r, s]
                    if abs(value) > tol or tol == 0.0:
                        out.write(f"{float(value)!r} {p + 1} {q + 1} {r + 1} {s + 1}\n")
    for p in range(m):
        for q in range(p + 1):
            value = ham.h1[p, q]
            if abs(value) > tol or tol == 0.0:
                out.write(f"{float(value)!r} {p + 1} {q + 1} 0 0\n")
    out.write(f"{ham.core_energy!r} 0 0 0 0\n")
    text = out.getvalue()
    if stream is not None:
        stream.write(text)
    return text

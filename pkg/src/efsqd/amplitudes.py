"""Double-excitation amplitudes that parameterize the forged ansatz.

Tensors are stored in ``[a, i, b, j]`` order with virtual indices counted from
the first empty orbital of the aufbau reference (``a = 0`` is orbital
``N_sigma``). The cluster operators are

    T_ss = 1/4 sum t_ss[a,i,b,j] a+_a a+_b a_j a_i        (same spin)
    T_ab =     sum t_ab[a,i,B,J] a+_{a,up} a+_{B,dn} a_{J,dn} a_{i,up}

Amplitude files are plain text::

    # comment
    M N_alpha N_beta
    aa a i b j value
    bb a i b j value
    ab a i b j value

with 1-based absolute orbital indices (as in FCIDUMP). Missing records are zero.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import TextIO

import numpy as np

from efsqd.fockspace import Term
from efsqd.hamiltonian import ActiveSpaceHamiltonian

__all__ = ["AmplitudeData", "cluster_terms", "mp2_amplitudes", "read_amplitudes", "write_amplitudes"]

ANTISYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class AmplitudeData:
    num_orbitals: int
    num_alpha: int
    num_beta: int
    t2_aa: np.ndarray
    t2_bb: np.ndarray
    t2_ab: np.ndarray

    def __post_init__(self):
        m, na, nb = self.num_orbitals, self.num_alpha, self.num_beta
        shapes = {
            "t2_aa": (m - na, na, m - na, na),
            "t2_bb": (m - nb, nb, m - nb, nb),
            "t2_ab": (m - na, na, m - nb, nb),
        }
        for name, shape in shapes.items():
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        for name in ("t2_aa", "t2_bb"):
            t = getattr(self, name)
            if t.size and (
                np.abs(t + t.transpose(2, 1, 0, 3)).max() > ANTISYMMETRY_TOL
                or np.abs(t + t.transpose(0, 3, 2, 1)).max() > ANTISYMMETRY_TOL
            ):
                raise ValueError(f"{name} is not antisymmetric under a<->b and i<->j")

    @classmethod
    def zeros(cls, num_orbitals: int, num_alpha: int, num_beta: int) -> AmplitudeData:
        m, na, nb = num_orbitals, num_alpha, num_beta
        return cls(
            m,
            na,
            nb,
            np.zeros((m - na, na, m - na, na)),
            np.zeros((m - nb, nb, m - nb, nb)),
            np.zeros((m - na, na, m - nb, nb)),
        )

    @property
    def reference(self) -> tuple[int, int]:
        """Aufbau reference bitstrings ``(alpha, beta)``."""
        return (1 << self.num_alpha) - 1, (1 << self.num_beta) - 1

    def same_spin(self, spin: str) -> tuple[np.ndarray, int]:
        """Amplitudes and occupied count for ``spin`` in ``{"alpha", "beta"}``."""
        if spin == "alpha":
            return self.t2_aa, self.num_alpha
        if spin == "beta":
            return self.t2_bb, self.num_beta
        raise ValueError(f"unknown spin {spin!r}")


def mp2_amplitudes(ham: ActiveSpaceHamiltonian) -> AmplitudeData:
    """First-order amplitudes from the diagonal of the aufbau Fock matrices."""
    m, na, nb = ham.num_orbitals, ham.num_alpha, ham.num_beta
    eps_a, eps_b = ham.fock_diagonal()
    eri = ham.eri

    def same(eps, n):
        occ, vir = np.arange(n), np.arange(n, m)
        g = eri[np.ix_(vir, occ, vir, occ)]
        num = g - g.transpose(0, 3, 2, 1)
        den = eps[occ][None, :, None, None] + eps[occ][None, None, None, :] - eps[vir][:, None, None, None] - eps[vir][None, None, :, None]
        return num / den

    occ_a, vir_a = np.arange(na), np.arange(na, m)
    occ_b, vir_b = np.arange(nb), np.arange(nb, m)
    g_ab = eri[np.ix_(vir_a, occ_a, vir_b, occ_b)]
    den = (
        eps_a[occ_a][None, :, None, None]
        + eps_b[occ_b][None, None, None, :]
        - eps_a[vir_a][:, None, None, None]
        - eps_b[vir_b][None, None, :, None]
    )
    return AmplitudeData(m, na, nb, same(eps_a, na), same(eps_b, nb), g_ab / den)


def cluster_terms(amp: AmplitudeData, blocks: str = "aa,bb,ab") -> list[Term]:
    """Ladder terms of ``T`` (two-spin mode layout) for the requested blocks."""
    m, na, nb = amp.num_orbitals, amp.num_alpha, amp.num_beta
    wanted = set(blocks.split(","))
    terms: list[Term] = []
    for name, t, n, off in (("aa", amp.t2_aa, na, 0), ("bb", amp.t2_bb, nb, m)):
        if name not in wanted:
            continue
        for a, i, b, j in zip(*np.nonzero(t)):
            terms.append(
                (0.25 * t[a, i, b, j], ((a + n + off, True), (b + n + off, True), (j + off, False), (i + off, False)))
            )
    if "ab" in wanted:
        t = amp.t2_ab
        for a, i, b, j in zip(*np.nonzero(t)):
            terms.append((t[a, i, b, j], ((a + na, True), (b + nb + m, True), (j + m, False), (i, False))))
    return terms


def write_amplitudes(amp: AmplitudeData, stream: TextIO | None = None) -> str:
    out = io.StringIO()
    out.write("# efsqd amplitudes: block a i b j value (1-based orbitals)\n")
    out.write(f"{amp.num_orbitals} {amp.num_alpha} {amp.num_beta}\n")
    blocks = (
        ("aa", amp.t2_aa, amp.num_alpha, amp.num_alpha),
        ("bb", amp.t2_bb, amp.num_beta, amp.num_beta),
        ("ab", amp.t2_ab, amp.num_alpha, amp.num_beta),
    )
    for name, t, n1, n2 in blocks:
        for a, i, b, j in zip(*np.nonzero(t)):
            out.write(f"{name} {a + n1 + 1} {i + 1} {b + n2 + 1} {j + 1} {float(t[a, i, b, j])!r}\n")
    text = out.getvalue()
    if stream is not None:
        stream.write(text)
    return text


def read_amplitudes(source: str | Path | TextIO) -> AmplitudeData:
    """Parse an amplitude file (path, open stream or text)."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        text = Path(source).read_text()
    elif isinstance(source, str):
        text = source
    else:
        text = source.read()
    header = None
    tensors: dict[str, np.ndarray] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if header is None:
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: header must be 'M N_alpha N_beta'")
            header = tuple(int(x) for x in parts)
            m, na, nb = header
            empty = AmplitudeData.zeros(m, na, nb)
            tensors = {"aa": empty.t2_aa.copy(), "bb": empty.t2_bb.copy(), "ab": empty.t2_ab.copy()}
            continue
        if len(parts) != 6 or parts[0] not in tensors:
            raise ValueError(f"line {lineno}: expected 'block a i b j value', got {raw!r}")
        m, na, nb = header
        n1, n2 = {"aa": (na, na), "bb": (nb, nb), "ab": (na, nb)}[parts[0]]
        try:
            a, i, b, j = (int(x) - 1 for x in parts[1:5])
            value = float(parts[5])
        except ValueError:
            raise ValueError(f"line {lineno}: malformed record {raw!r}") from None
        if not (n1 <= a < m and 0 <= i < n1 and n2 <= b < m and 0 <= j < n2):
            raise ValueError(f"line {lineno}: indices outside the occupied/virtual ranges")
        tensors[parts[0]][a - n1, i, b - n2, j] = value
    if header is None:
        raise ValueError("amplitude file has no header")
    return AmplitudeData(*header, tensors["aa"], tensors["bb"], tensors["ab"])

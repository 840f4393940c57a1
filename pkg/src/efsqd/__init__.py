"""Entanglement-forged state preparation with sample-based quantum diagonalization.

Desk-scale implementation: every quantum circuit is replaced by exact
statevector simulation of one ``M``-orbital spin register.
"""

from efsqd.hamiltonian import ActiveSpaceHamiltonian, parse_fcidump, read_fcidump, write_fcidump
from efsqd.slater import Configuration, build_subspace_operator

__all__ = [
    "ActiveSpaceHamiltonian",
    "Configuration",
    "build_subspace_operator",
    "parse_fcidump",
    "read_fcidump",
    "write_fcidump",
]

__version__ = "0.1.0"

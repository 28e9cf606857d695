"""Emitters coupled to three-dimensional structured bosonic lattice baths."""
from qebath.lattice import LatticeKind, lattice_info, dispersion, dos_histogram

__version__ = "0.1.0"

__all__ = ["LatticeKind", "lattice_info", "dispersion", "dos_histogram", "__version__"]

"""Bath geometries, tight-binding dispersions and histogram density of states.

Momenta are reduced coordinates ``k_i = k . c_i`` (radians per primitive
step); Cartesian momenta never enter.  Energies are in units of the hopping
``J``.  A grid of linear size ``N`` samples ``k_i = 2 pi m / N - pi`` for
``m = 0 .. N-1`` (periodic, no duplicated endpoint).
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "LatticeKind",
    "LatticeSpec",
    "DosHistogram",
    "BCC_FACTORIZING_MAP",
    "BAND_EXTENTS",
    "parse_kind",
    "lattice_info",
    "momentum_grid",
    "dispersion",
    "dispersion_grid",
    "diamond_form_factor",
    "dos_histogram",
]


class LatticeKind(enum.Enum):
    CS = "cs"
    BCC = "bcc"
    FCC = "fcc"
    DIAMOND = "diamond"


def parse_kind(kind) -> LatticeKind:
    """Accept a ``LatticeKind`` or a case-insensitive name such as ``"fcc"``."""
    if isinstance(kind, LatticeKind):
        return kind
    try:
        return LatticeKind(str(kind).lower())
    except ValueError:
        names = ", ".join(k.value for k in LatticeKind)
        raise ValueError(f"unknown lattice {kind!r}; expected one of {names}") from None


#: Band extents (min, max) in units of J.
BAND_EXTENTS = {
    LatticeKind.CS: (-6.0, 6.0),
    LatticeKind.BCC: (-8.0, 8.0),
    LatticeKind.FCC: (-12.0, 4.0),
    LatticeKind.DIAMOND: (-4.0, 4.0),
}

#: k = U q turns the BCC dispersion into -8 cos q1 cos q2 cos q3.
BCC_FACTORIZING_MAP = np.array([[1, 1, -1], [1, -1, 1], [-1, 1, 1]], dtype=float)


@dataclass(frozen=True)
class LatticeSpec:
    """Geometry of one bath lattice.

    Attributes
    ----------
    kind : LatticeKind
    real_primitives : ndarray, shape (3, 3)
        Rows are the primitive vectors ``c_i`` (cube edge = 1).
    reciprocal_primitives : ndarray, shape (3, 3)
        Rows are ``d_j`` with ``c_i . d_j = delta_ij``.
    neighbour_offsets : ndarray, shape (n, 3)
        Integer offsets in primitive coordinates.  For the diamond lattice
        these connect an A site at ``m`` to the B sites at ``m + offset``.
    bands : int
    sublattice_shift : ndarray or None
        Cartesian displacement of the B sublattice (diamond only).
    """

    kind: LatticeKind
    real_primitives: np.ndarray
    reciprocal_primitives: np.ndarray
    neighbour_offsets: np.ndarray
    bands: int
    sublattice_shift: np.ndarray | None = None

    @property
    def coordination(self) -> int:
        return len(self.neighbour_offsets)


def _spec(kind, prims, offsets, bands=1, shift=None) -> LatticeSpec:
    prims = np.asarray(prims, dtype=float)
    recip = np.linalg.inv(prims).T
    return LatticeSpec(
        kind=kind,
        real_primitives=prims,
        reciprocal_primitives=recip,
        neighbour_offsets=np.asarray(offsets, dtype=int),
        bands=bands,
        sublattice_shift=None if shift is None else np.asarray(shift, dtype=float),
    )


_E = np.eye(3, dtype=int)


def lattice_info(kind) -> LatticeSpec:
    """Primitive vectors, reciprocal vectors and neighbour offsets of a lattice."""
    kind = parse_kind(kind)
    if kind is LatticeKind.CS:
        return _spec(kind, np.eye(3), np.concatenate([_E, -_E]))
    if kind is LatticeKind.BCC:
        prims = 0.5 * np.array([[-1, 1, 1], [1, -1, 1], [1, 1, -1]])
        ones = np.ones((1, 3), dtype=int)
        return _spec(kind, prims, np.concatenate([_E, -_E, ones, -ones]))
    fcc_prims = 0.5 * np.array([[0, 1, 1], [1, 0, 1], [1, 1, 0]])
    if kind is LatticeKind.FCC:
        diffs = np.array([[1, -1, 0], [0, 1, -1], [1, 0, -1]])
        return _spec(kind, fcc_prims, np.concatenate([_E, -_E, diffs, -diffs]))
    offsets = np.concatenate([np.zeros((1, 3), dtype=int), _E])
    return _spec(kind, fcc_prims, offsets, bands=2, shift=0.25 * np.ones(3))


def momentum_grid(N: int) -> np.ndarray:
    """Reduced momenta ``2 pi m / N - pi`` for ``m = 0 .. N-1``."""
    if N < 1:
        raise ValueError("grid size must be positive")
    return 2.0 * np.pi * np.arange(N) / N - np.pi


def diamond_form_factor(k1, k2, k3):
    """Inter-sublattice structure factor ``F(k) = sum_delta exp(i k . delta)``.

    With the offsets of :func:`lattice_info` this is
    ``1 + exp(i k1) + exp(i k2) + exp(i k3)``.
    """
    return 1.0 + np.exp(1j * k1) + np.exp(1j * k2) + np.exp(1j * k3)


def dispersion(kind, k1, k2, k3):
    """Bath dispersion at reduced momenta (broadcasting).

    Returns
    -------
    ndarray or tuple
        ``omega(k)`` for the single-band lattices.  For the diamond lattice
        returns ``(-|F|, +|F|, phi)`` where ``F = |F| exp(i phi)`` is the
        structure factor of :func:`diamond_form_factor`.
    """
    kind = parse_kind(kind)
    k1, k2, k3 = (np.asarray(x, dtype=float) for x in (k1, k2, k3))
    if kind is LatticeKind.DIAMOND:
        f = diamond_form_factor(k1, k2, k3)
        a = np.abs(f)
        return -a, a, np.angle(f)
    w = -2.0 * (np.cos(k1) + np.cos(k2) + np.cos(k3))
    if kind is LatticeKind.BCC:
        w = w - 2.0 * np.cos(k1 + k2 + k3)
    elif kind is LatticeKind.FCC:
        w = w - 2.0 * (np.cos(k1 - k2) + np.cos(k2 - k3) + np.cos(k1 - k3))
    return w


def dispersion_grid(kind, N: int, fft_order: bool = False):
    """Dispersion sampled on the full ``N**3`` grid (``ij`` indexing).

    With ``fft_order`` the grid uses ``k = 2 pi m / N`` so that it lines up
    with ``numpy.fft`` frequency ordering; the set of momenta is the same.
    """
    k = 2.0 * np.pi * np.arange(N) / N if fft_order else momentum_grid(N)
    k1, k2, k3 = np.meshgrid(k, k, k, indexing="ij", sparse=True)
    return dispersion(kind, k1, k2, k3)


@dataclass(frozen=True)
class DosHistogram:
    """Normalized histogram of bath mode energies.

    ``weights[n]`` is the fraction of modes with energy in
    ``[bin_edges[n], bin_edges[n+1])``; the last bin is closed.
    """

    bin_edges: np.ndarray
    weights: np.ndarray
    n_modes_total: int

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    @property
    def density(self) -> np.ndarray:
        """Density of states per unit energy (integrates to 1)."""
        return self.weights / self.widths


def histogram_from_energies(energies, n_bins: int, extent=None) -> DosHistogram:
    """Normalized histogram of an arbitrary collection of mode energies."""
    if n_bins < 2:
        raise ValueError("need at least 2 bins")
    e = np.ravel(np.asarray(energies, dtype=float))
    lo, hi = (e.min(), e.max()) if extent is None else extent
    edges = np.linspace(lo, hi, n_bins + 1)
    # np.histogram bins are half-open except the last, which is closed
    counts, _ = np.histogram(np.clip(e, lo, hi), bins=edges)
    weights = counts / float(e.size)
    return DosHistogram(edges, weights, int(e.size))


def dos_histogram(kind, N: int, n_bins: int) -> DosHistogram:
    """Histogram density of states over the full band on an ``N**3`` grid.

    The diamond histogram merges both bands over ``[-4J, 4J]``.
    """
    kind = parse_kind(kind)
    if N < 4:
        raise ValueError("grid size N must be at least 4")
    if n_bins < 2:
        raise ValueError("need at least 2 bins")
    if N**3 < 10 * n_bins:
        warnings.warn(
            f"{N**3} modes over {n_bins} bins leaves under 10 modes per bin",
            RuntimeWarning,
            stacklevel=2,
        )
    w = dispersion_grid(kind, N)
    if kind is LatticeKind.DIAMOND:
        w = np.concatenate([np.ravel(w[0]), np.ravel(w[1])])
    return histogram_from_energies(w, n_bins, BAND_EXTENTS[kind])

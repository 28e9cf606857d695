"""Optical-lattice layer: interference potentials, Bloch bands and hoppings.

Lengths are in units of ``lambda / (2 pi)`` and energies in recoil units
``E_R``, so the single-particle Hamiltonian is ``-nabla^2 + V(R)``.  Each
bath lattice is realized with the primitive vectors of
:func:`qebath.lattice.lattice_info` scaled by :data:`LATTICE_SCALE` (cube
edge ``pi`` for the simple cubic lattice, ``2 pi`` otherwise).  Bloch
momenta are the same reduced coordinates ``k_i = k . c_i`` used by the
tight-binding modules, sampled on the Gamma-inclusive grid
``2 pi m / N - pi``.

Bands are obtained by plane-wave expansion with integer reciprocal indices
``|m_j| <= q_max``; in primitive coordinates the kinetic energy of
``exp(i (k + q) . R)`` is the quadratic form ``kappa^T G kappa`` with
``kappa = k / 2 pi + m`` and ``G_ij = b_i . b_j``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from qebath.lattice import (
    BAND_EXTENTS,
    DosHistogram,
    LatticeKind,
    dos_histogram,
    histogram_from_energies,
    lattice_info,
    momentum_grid,
    parse_kind,
)

__all__ = [
    "LATTICE_SCALE",
    "Beam",
    "BeamSet",
    "OpticalPotential",
    "BlochBands",
    "HoppingTable",
    "interfere",
    "standard_potential",
    "plane_wave_hamiltonian",
    "band_energies",
    "solve_bands",
    "extract_hoppings",
    "numerical_dos",
    "rescaled_dos_distance",
    "band_asymmetry",
]

#: Cube edge of each lattice in units of lambda / (2 pi).
LATTICE_SCALE = {
    LatticeKind.CS: np.pi,
    LatticeKind.BCC: 2.0 * np.pi,
    LatticeKind.FCC: 2.0 * np.pi,
    LatticeKind.DIAMOND: 2.0 * np.pi,
}

_KEY_DIGITS = 12
# plane-wave bases larger than this use a sparse shift-invert eigensolver
_SPARSE_MIN_DIM = 1000
_SPARSE_MAX_BANDS = 4


def _key(q) -> tuple[float, float, float]:
    return tuple(float(np.round(x, _KEY_DIGITS)) + 0.0 for x in q)


# ---------------------------------------------------------------------------
# beams and interference


@dataclass(frozen=True)
class Beam:
    amplitude: float
    polarization: tuple
    propagation: tuple
    frequency_group: int = 0


@dataclass
class BeamSet:
    """Laser beams; beams in the same frequency group interfere.

    Polarizations are normalized on construction.  Within a group all
    propagation vectors must share one length (one wavelength).
    """

    beams: list[Beam]

    def __post_init__(self):
        fixed = []
        for b in self.beams:
            pol = np.asarray(b.polarization, dtype=float)
            n = np.linalg.norm(pol)
            if n == 0:
                raise ValueError("beam polarization must be nonzero")
            fixed.append(Beam(float(b.amplitude), tuple(pol / n), tuple(map(float, b.propagation)), int(b.frequency_group)))
        self.beams = fixed
        for grp in self.groups().values():
            lengths = [np.linalg.norm(b.propagation) for b in grp]
            if np.ptp(lengths) > 1e-9 * max(lengths):
                raise ValueError("beams in one frequency group must share |propagation|")

    def groups(self) -> dict[int, list[Beam]]:
        out: dict[int, list[Beam]] = {}
        for b in self.beams:
            out.setdefault(b.frequency_group, []).append(b)
        return out


@dataclass
class OpticalPotential:
    """Periodic potential ``V(R) = V0 sum_q c_q exp(i q . R)``.

    ``coefficients`` maps Cartesian wave vectors (tuples) to dimensionless
    complex ``c_q`` with ``c_{-q} = conj(c_q)``, so ``V`` is real.  For the
    inversion-symmetric potentials the coefficients are real.
    """

    coefficients: dict
    V0: float = 1.0
    kind: LatticeKind | None = None

    def __post_init__(self):
        if self.kind is not None:
            self.kind = parse_kind(self.kind)
        self.coefficients = {_key(q): complex(c) for q, c in self.coefficients.items() if abs(c) > 1e-15}
        for q, c in self.coefficients.items():
            partner = self.coefficients.get(_key(-np.asarray(q)), 0.0)
            if abs(partner - np.conj(c)) > 1e-12:
                raise ValueError("coefficients must satisfy c(-q) = conj(c(q))")

    def scaled(self, V0: float) -> "OpticalPotential":
        return OpticalPotential(dict(self.coefficients), V0, self.kind)

    def __call__(self, R) -> np.ndarray:
        R = np.asarray(R, dtype=float)
        val = np.zeros(R.shape[:-1], dtype=complex)
        for q, c in self.coefficients.items():
            val += c * np.exp(1j * (R @ np.asarray(q)))
        return self.V0 * val.real

    def on_lattice(self, kind=None) -> dict[tuple[int, int, int], complex]:
        """Coefficients ``V0 c_q`` indexed by integer reciprocal coordinates.

        Raises
        ------
        ValueError
            If a wave vector is not a reciprocal-lattice vector of ``kind``.
        """
        kind = parse_kind(kind if kind is not None else self.kind)
        prims = LATTICE_SCALE[kind] * lattice_info(kind).real_primitives
        out = {}
        for q, c in self.coefficients.items():
            m = prims @ np.asarray(q) / (2.0 * np.pi)
            mi = np.rint(m)
            if np.max(np.abs(m - mi)) > 1e-9:
                raise ValueError(f"wave vector {q} is not periodic on the {kind.value} lattice")
            out[tuple(int(x) for x in mi)] = self.V0 * c
        return out


def interfere(beams: BeamSet, kind=None) -> OpticalPotential:
    """Time-averaged intensity ``sum_groups |E_group(R)|^2`` as a Fourier series.

    Each group contributes ``sum_ij E_i E_j (e_i . e_j) exp(i (p_i - p_j) . R)``,
    including the constant self-interference terms.
    """
    coef: dict = {}
    for grp in beams.groups().values():
        for bi, bj in itertools.product(grp, grp):
            w = bi.amplitude * bj.amplitude * float(np.dot(bi.polarization, bj.polarization))
            if w == 0.0:
                continue
            q = _key(np.subtract(bi.propagation, bj.propagation))
            coef[q] = coef.get(q, 0.0) + w
    return OpticalPotential(coef, 1.0, kind)


def _cos_products(axes_sets, weight):
    """Fourier coefficients of ``sum prod_{a in set} cos(x_a)``."""
    coef: dict = {}
    for axes in axes_sets:
        for signs in itertools.product((1, -1), repeat=len(axes)):
            q = np.zeros(3)
            q[list(axes)] = signs
            k = _key(q)
            coef[k] = coef.get(k, 0.0) + weight / 2 ** len(axes)
    return coef


def standard_potential(kind, V0: float) -> OpticalPotential:
    """Closed-form potential realizing each bath lattice.

    * simple cubic: ``V0 (cos^2 x + cos^2 y + cos^2 z)``
    * BCC: ``V0 (cos x cos y + cos y cos z + cos x cos z)``
    * FCC: ``V0 cos x cos y cos z``
    * diamond: the FCC potential plus a copy displaced by a quarter of the
      cube diagonal, ``V_FCC(R) + V_FCC(R + f)`` with ``f = (pi/2)(1,1,1)``
    """
    kind = parse_kind(kind)
    if kind is LatticeKind.CS:
        coef = {(0.0, 0.0, 0.0): 1.5}
        for a in range(3):
            for s in (2.0, -2.0):
                q = [0.0, 0.0, 0.0]
                q[a] = s
                coef[tuple(q)] = 0.25
    elif kind is LatticeKind.BCC:
        coef = _cos_products([(0, 1), (1, 2), (0, 2)], 1.0)
    else:
        fcc = _cos_products([(0, 1, 2)], 1.0)
        if kind is LatticeKind.FCC:
            coef = fcc
        else:
            f = 0.25 * LATTICE_SCALE[kind] * np.ones(3)
            coef = {q: c * (1.0 + np.exp(1j * np.dot(q, f))) for q, c in fcc.items()}
    return OpticalPotential(coef, V0, kind)


# ---------------------------------------------------------------------------
# bands


@dataclass
class BlochBands:
    """Lowest Bloch bands on an ``N**3`` grid of reduced momenta.

    ``energies`` has shape ``(N, N, N, n_bands)`` in recoil units, sorted
    along the last axis; index ``m`` on each axis is ``k = 2 pi m / N - pi``.
    """

    energies: np.ndarray
    q_max: int
    kind: LatticeKind
    V0: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.energies.shape[0]

    @property
    def n_bands(self) -> int:
        return self.energies.shape[-1]


def _metric(kind):
    prims = LATTICE_SCALE[kind] * lattice_info(kind).real_primitives
    recip = 2.0 * np.pi * np.linalg.inv(prims).T  # rows b_j with c_i . b_j = 2 pi delta
    return recip @ recip.T


def _basis(q_max):
    r = np.arange(-q_max, q_max + 1)
    return np.array(list(itertools.product(r, r, r)))


def _potential_matrix(coeffs, basis, q_max, dense=True):
    idx = {tuple(m): i for i, m in enumerate(basis)}
    rows, cols, vals = [], [], []
    for q, c in coeffs.items():
        shifted = basis + np.asarray(q)  # row state m + q couples to column m
        ok = np.all(np.abs(shifted) <= q_max, axis=1)
        rows.extend(idx[tuple(s)] for s in shifted[ok])
        cols.extend(np.nonzero(ok)[0])
        vals.extend([c] * int(ok.sum()))
    M = len(basis)
    vmat = sparse.csc_matrix((np.asarray(vals, dtype=complex), (rows, cols)), shape=(M, M))
    return vmat.toarray() if dense else vmat


def _spectrum_floor(coeffs) -> float:
    """Lower bound of ``min V`` and hence of every plane-wave eigenvalue."""
    c0 = complex(coeffs.get((0, 0, 0), 0.0)).real
    return c0 - sum(abs(c) for q, c in coeffs.items() if any(q))


def plane_wave_hamiltonian(potential: OpticalPotential, k, q_max: int, kind=None) -> np.ndarray:
    """Hermitian plane-wave matrix ``H_k`` of size ``(2 q_max + 1)**3``."""
    kind = parse_kind(kind if kind is not None else potential.kind)
    basis = _basis(q_max)
    h = _potential_matrix(potential.on_lattice(kind), basis, q_max)
    kappa = np.asarray(k, dtype=float) / (2.0 * np.pi) + basis
    h[np.diag_indices_from(h)] += np.einsum("ni,ij,nj->n", kappa, _metric(kind), kappa)
    return h


def _is_separable(potential, kind):
    if kind is not LatticeKind.CS:
        return False
    return all(np.count_nonzero(q) <= 1 for q in potential.coefficients)


def _separable_1d(potential, kvals, q_max):
    """Lowest 1D band per axis for an axis-separable simple cubic potential."""
    coeffs = potential.on_lattice(LatticeKind.CS)
    m = np.arange(-q_max, q_max + 1)
    axes = []
    for a in range(3):
        # the constant term is split evenly across the three axes
        h = np.zeros((m.size, m.size), dtype=complex)
        for q, c in coeffs.items():
            qa = q[a]
            if any(q[b] for b in range(3) if b != a):
                continue
            if qa == 0 and any(q):
                continue
            weight = c / 3.0 if not any(q) else c
            h += weight * np.eye(m.size, k=-qa)
        b2 = (2.0 * np.pi / LATTICE_SCALE[LatticeKind.CS]) ** 2
        e = np.empty(len(kvals[a]))
        for i, k in enumerate(kvals[a]):
            kin = b2 * (k / (2.0 * np.pi) + m) ** 2
            e[i] = linalg.eigh(h + np.diag(kin), eigvals_only=True, subset_by_index=[0, 0])[0]
        axes.append(e)
    return axes


def band_energies(potential: OpticalPotential, k_points, q_max: int, n_bands: int = 1, kind=None, separable=None) -> np.ndarray:
    """Lowest ``n_bands`` energies at arbitrary reduced momenta.

    Parameters
    ----------
    k_points : array_like, shape (n, 3)
    separable : bool or None
        Use the 1D factorization for axis-separable simple cubic potentials
        (single band only).  ``None`` picks it automatically when possible.

    Returns
    -------
    ndarray, shape (n, n_bands)
    """
    kind = parse_kind(kind if kind is not None else potential.kind)
    if q_max < 1:
        raise ValueError("q_max must be positive")
    kp = np.atleast_2d(np.asarray(k_points, dtype=float))
    use_sep = _is_separable(potential, kind) and n_bands == 1 if separable is None else separable
    if use_sep:
        if not (_is_separable(potential, kind) and n_bands == 1):
            raise ValueError("separable path needs a single band of an axis-separable simple cubic potential")
        e = _separable_1d(potential, kp.T, q_max)
        return (e[0] + e[1] + e[2])[:, None]
    basis = _basis(q_max)
    coeffs = potential.on_lattice(kind)
    metric = _metric(kind)
    use_sparse = len(basis) > _SPARSE_MIN_DIM and n_bands <= _SPARSE_MAX_BANDS
    vmat = _potential_matrix(coeffs, basis, q_max, dense=not use_sparse)
    shift = _spectrum_floor(coeffs) - 1.0
    out = np.empty((len(kp), n_bands))
    for i, k in enumerate(kp):
        kappa = k / (2.0 * np.pi) + basis
        kin = np.einsum("ni,ij,nj->n", kappa, metric, kappa)
        try:
            if use_sparse:
                # shift-invert below the spectrum returns the lowest eigenvalues
                h = (vmat + sparse.diags(kin)).tocsc()
                w = eigsh(h, k=n_bands, sigma=shift, which="LM", tol=1e-14,
                          return_eigenvectors=False)
                out[i] = np.sort(w.real)
            else:
                h = vmat.copy()
                h[np.diag_indices_from(h)] += kin
                out[i] = linalg.eigh(h, eigvals_only=True, subset_by_index=[0, n_bands - 1])
        except (linalg.LinAlgError, ArpackNoConvergence) as exc:
            raise ArithmeticError(f"eigensolver failed at k = {k}: {exc}") from exc
    return out


def solve_bands(potential: OpticalPotential, q_max: int, N: int, n_bands: int = 1, kind=None, separable=None) -> BlochBands:
    """Bloch bands on the full ``N**3`` reduced-momentum grid.

    Separable simple cubic potentials are solved axis by axis, which makes
    large grids cheap; other lattices diagonalize the full plane-wave
    matrix at every grid point.
    """
    kind = parse_kind(kind if kind is not None else potential.kind)
    k = momentum_grid(N)
    if (separable is None or separable) and n_bands == 1 and _is_separable(potential, kind):
        e = _separable_1d(potential, [k, k, k], q_max)
        energies = (e[0][:, None, None] + e[1][None, :, None] + e[2][None, None, :])[..., None]
    else:
        grid = np.stack(np.meshgrid(k, k, k, indexing="ij"), axis=-1).reshape(-1, 3)
        energies = band_energies(potential, grid, q_max, n_bands, kind, separable=False).reshape(N, N, N, n_bands)
    return BlochBands(energies, q_max, kind, potential.V0)


# ---------------------------------------------------------------------------
# hoppings and density of states


@dataclass
class HoppingTable:
    """Fourier coefficients of a band over lattice offsets.

    ``elements[i] = (1/N^3) sum_k E_k exp(-i k . offsets[i])`` is the
    Hamiltonian matrix element between Wannier functions; ``hoppings`` is
    its negative, matching the ``-J`` convention of the bath models.
    """

    offsets: np.ndarray
    elements: np.ndarray

    @property
    def hoppings(self) -> np.ndarray:
        return -self.elements

    def element(self, offset) -> complex:
        hit = np.nonzero(np.all(self.offsets == np.asarray(offset), axis=1))[0]
        if hit.size == 0:
            raise KeyError(offset)
        return complex(self.elements[hit[0]])


def _fourier(energy, offsets):
    N = energy.shape[0]
    k = momentum_grid(N)
    out = np.empty(len(offsets), dtype=complex)
    for i, n in enumerate(offsets):
        ph = [np.exp(-1j * k * x) for x in n]
        out[i] = np.einsum("ijk,i,j,k->", energy, ph[0], ph[1], ph[2]) / N**3
    return out


def extract_hoppings(bands: BlochBands, offsets) -> HoppingTable | dict[str, HoppingTable]:
    """Hopping table of the lowest band, or AA/AB tables for the diamond lattice.

    The diamond tables use ``(E_1 +/- E_2) / 2`` of the two lowest bands.

    Raises
    ------
    ValueError
        If an offset does not fit on the grid (``|n_i| > N/2``), or the
        diamond lattice has fewer than two bands.
    """
    offsets = np.atleast_2d(np.asarray(offsets, dtype=int))
    if np.any(np.abs(offsets) > bands.N // 2):
        raise ValueError(f"offsets must satisfy |n_i| <= N/2 = {bands.N // 2}")
    if bands.kind is LatticeKind.DIAMOND:
        if bands.n_bands < 2:
            raise ValueError("diamond hoppings need the two lowest bands")
        e1, e2 = bands.energies[..., 0], bands.energies[..., 1]
        return {
            "AA": HoppingTable(offsets, _fourier(0.5 * (e1 + e2), offsets)),
            "AB": HoppingTable(offsets, _fourier(0.5 * (e1 - e2), offsets)),
        }
    return HoppingTable(offsets, _fourier(bands.energies[..., 0], offsets))


def _refine(energy, factor):
    """Trilinear interpolation of a periodic band onto a ``factor``-finer grid."""
    frac = np.arange(factor) / factor
    out = np.asarray(energy, dtype=float)
    for axis in range(3):
        nxt = np.roll(out, -1, axis=axis)
        a = np.moveaxis(out, axis, -1)[..., None]
        b = np.moveaxis(nxt, axis, -1)[..., None]
        fine = (a * (1.0 - frac) + b * frac).reshape(a.shape[:-2] + (-1,))
        out = np.moveaxis(fine, -1, axis)
    return out.ravel()


def numerical_dos(bands: BlochBands, n_omega: int, refine: int = 4) -> DosHistogram:
    """Histogram DOS of the lowest band (both bands for the diamond lattice).

    Bands are interpolated trilinearly onto a ``refine``-times finer grid
    before binning; bins span ``[min E, max E]``.
    """
    n_use = 2 if bands.kind is LatticeKind.DIAMOND else 1
    if bands.n_bands < n_use:
        raise ValueError("diamond DOS needs two bands")
    parts = []
    for b in range(n_use):
        e = bands.energies[..., b]
        parts.append(_refine(e, refine) if refine > 1 else e.ravel())
    return histogram_from_energies(np.concatenate(parts), n_omega)


def rescaled_dos_distance(bands: BlochBands, n_bins: int = 60, reference_N: int = 128, skip: int = 3) -> float:
    """Sup-norm distance between the rescaled numerical DOS and the ideal model.

    Energies are shifted by the onsite term and divided by the fitted
    nearest-neighbour hopping, then binned on the ideal band.  The ``skip``
    bins nearest every band edge or interior singularity are left out.
    """
    kind = bands.kind
    nn = lattice_info(kind).neighbour_offsets[0]
    table = extract_hoppings(bands, [(0, 0, 0), tuple(nn)])
    onsite = table.elements[0].real
    j1 = table.hoppings[1].real
    lo, hi = BAND_EXTENTS[kind]
    scaled = (_refine(bands.energies[..., 0], 4) - onsite) / j1
    num = histogram_from_energies(scaled, n_bins, (lo, hi))
    ref = dos_histogram(kind, reference_N, n_bins)
    mask = np.ones(n_bins, dtype=bool)
    centers = ref.centers
    width = ref.widths[0]
    for s in _singular_energies(kind):
        mask &= np.abs(centers - s) > (skip - 0.5) * width + 1e-12
    return float(np.max(np.abs(num.density - ref.density)[mask]))


def _singular_energies(kind):
    lo, hi = BAND_EXTENTS[kind]
    inner = {
        LatticeKind.CS: (-2.0, 2.0),
        LatticeKind.BCC: (0.0,),
        LatticeKind.FCC: (0.0,),
        LatticeKind.DIAMOND: (-2.0, 0.0, 2.0),
    }[kind]
    return (lo,) + inner + (hi,)


def band_asymmetry(bands: BlochBands) -> float:
    """Deviation of the two lowest bands from mirror symmetry about their mean.

    The nearest-neighbour diamond model has ``E_2 = -E_1`` about the band
    centre, which gives 0.  Returned relative to the combined band width.
    """
    if bands.n_bands < 2:
        raise ValueError("need two bands")
    e1, e2 = bands.energies[..., 0], bands.energies[..., 1]
    center = 0.5 * (e1.max() + e2.min())
    width = e2.max() - e1.min()
    lower = np.sort((center - e1).ravel())
    upper = np.sort((e2 - center).ravel())
    return float(np.max(np.abs(lower - upper)) / width)

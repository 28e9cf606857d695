"""Single-emitter and collective self-energies of the lattice baths.

Energies are in units of ``J``; every self-energy scales as ``g**2``.

The closed forms are written in terms of the complete elliptic integral of
the first kind.  Below the real axis each lattice needs a different
analytic continuation in each interval between non-analytic energies
("sheet regions").  Regions are numbered 1, 2, ... from the left:

========  =================================  ===========================
lattice   region boundaries (J)              continuation inside band
========  =================================  ===========================
CS        -6, -2, 0, 2, 6                    2,5: flip sqrt(1-36/z^2);
                                             3,4: flip both roots and
                                             shift K across its cut
BCC       -8, 0, 8                           2,3: flip sqrt(1-64/z^2)
FCC       -12, 0, 4                          2: flip sqrt(1+12/z);
                                             3: flip sqrt(1-4/z)
Diamond   -4, -2, 0, 2, 4                    2,5: flip sqrt(1-16/z^2);
                                             3,4: flip both roots
========  =================================  ===========================

The outermost regions use the principal formula, which is also the
physical sheet in both half-planes.  On the real axis inside the band the
physical value means ``Sigma(E + i0+)``; the infinitesimal is realized as
``ETA``, with one Richardson step in ``ETA`` to cancel the leading offset.
"""
from __future__ import annotations

import enum
import functools
import itertools
from dataclasses import dataclass
from typing import Callable, NamedTuple

import mpmath
import numpy as np

from qebath.lattice import (
    BAND_EXTENTS,
    LatticeKind,
    dispersion_grid,
    dos_histogram,
    momentum_grid,
    parse_kind,
)
from qebath.specfun import EllipticSheet, elliptic_k

__all__ = [
    "ETA",
    "NonAnalyticPointError",
    "SheetRegion",
    "REGION_BOUNDARIES",
    "DETOUR_ENERGIES",
    "SHEET_GROUPS",
    "regions",
    "sheet_interval",
    "region_at",
    "sigma_analytic",
    "sigma_derivative",
    "sigma_brute",
    "ExpansionKind",
    "sigma_expansion",
    "CollectiveMode",
    "CollectiveQuery",
    "sigma_collective",
    "pair_coupling",
    "subradiant_geometry",
    "MarkovParams",
    "markov_params",
]

#: Distance from the real axis used for ``E + i0+``.
ETA = 1e-8

_ROMAN = ("I", "II", "III", "IV", "V", "VI")


class NonAnalyticPointError(ValueError):
    """Self-energy requested exactly at a band edge, kink or singular gap."""


REGION_BOUNDARIES = {
    LatticeKind.CS: (-6.0, -2.0, 0.0, 2.0, 6.0),
    LatticeKind.BCC: (-8.0, 0.0, 8.0),
    LatticeKind.FCC: (-12.0, 0.0, 4.0),
    LatticeKind.DIAMOND: (-4.0, -2.0, 0.0, 2.0, 4.0),
}

#: Groups of adjacent regions that share one analytic continuation.
SHEET_GROUPS = {
    LatticeKind.CS: ((1,), (2,), (3, 4), (5,), (6,)),
    LatticeKind.BCC: ((1,), (2,), (3,), (4,)),
    LatticeKind.FCC: ((1,), (2,), (3,), (4,)),
    LatticeKind.DIAMOND: ((1,), (2,), (3,), (4,), (5,), (6,)),
}

#: Energies where adjacent continuations differ.  CS regions 3 and 4 are one
#: analytic sheet, so E = 0 is not a detour there.
DETOUR_ENERGIES = {
    LatticeKind.CS: (-6.0, -2.0, 2.0, 6.0),
    LatticeKind.BCC: (-8.0, 0.0, 8.0),
    LatticeKind.FCC: (-12.0, 0.0, 4.0),
    LatticeKind.DIAMOND: (-4.0, -2.0, 0.0, 2.0, 4.0),
}


@dataclass(frozen=True)
class SheetRegion:
    """One vertical strip of the lower half-plane with its continuation."""

    kind: LatticeKind
    index: int  # 1-based, counted from the left

    def __post_init__(self):
        n = len(REGION_BOUNDARIES[self.kind]) + 1
        if not 1 <= self.index <= n:
            raise ValueError(f"{self.kind.value} has regions 1..{n}, got {self.index}")

    @property
    def label(self) -> str:
        return _ROMAN[self.index - 1]

    @property
    def interval(self) -> tuple[float, float]:
        b = (-np.inf,) + REGION_BOUNDARIES[self.kind] + (np.inf,)
        return b[self.index - 1], b[self.index]

    @property
    def is_outer(self) -> bool:
        return self.index in (1, len(REGION_BOUNDARIES[self.kind]) + 1)

    def contains(self, x: float) -> bool:
        lo, hi = self.interval
        return lo < x < hi

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.label}"


def sheet_interval(region: SheetRegion) -> tuple[float, float]:
    """Real interval covered by the analytic sheet that contains ``region``."""
    for group in SHEET_GROUPS[region.kind]:
        if region.index in group:
            return (SheetRegion(region.kind, group[0]).interval[0],
                    SheetRegion(region.kind, group[-1]).interval[1])
    raise AssertionError("region missing from SHEET_GROUPS")


def regions(kind) -> list[SheetRegion]:
    kind = parse_kind(kind)
    return [SheetRegion(kind, i) for i in range(1, len(REGION_BOUNDARIES[kind]) + 2)]


def region_at(kind, x: float) -> SheetRegion:
    """Region whose open interval contains ``x``."""
    kind = parse_kind(kind)
    if x in REGION_BOUNDARIES[kind]:
        raise NonAnalyticPointError(f"{x} is a region boundary of {kind.value}")
    return SheetRegion(kind, 1 + int(np.searchsorted(REGION_BOUNDARIES[kind], x)))


# ---------------------------------------------------------------------------
# closed forms; all take complex arrays and return Sigma / g^2


def _csqrt(x):
    return np.sqrt(x + 0j)


def _cs_closed(z, flip36, flip4, region_index):
    a = _csqrt(1.0 - 4.0 / z**2)
    b = _csqrt(1.0 - 36.0 / z**2)
    a = np.where(flip4, -a, a)
    b = np.where(flip36, -b, b)
    xi = _csqrt(1.0 - a) / _csqrt(1.0 + b)
    den = (1.0 - xi) ** 3 * (1.0 + 3.0 * xi)
    m = 16.0 * xi**3 / den
    pref = 4.0 / (np.pi**2 * z) * (1.0 - 9.0 * xi**4) / den
    k = elliptic_k(m)
    if region_index == 3:
        k = np.where(m.imag > 0, elliptic_k(m, EllipticSheet.SHIFTED_PLUS), k)
    elif region_index == 4:
        k = np.where(m.imag < 0, elliptic_k(m, EllipticSheet.SHIFTED_MINUS), k)
    return pref * k**2


def _bcc_closed(z, flip):
    r = _csqrt(1.0 - 64.0 / z**2)
    r = np.where(flip, -r, r)
    m = 0.5 * (1.0 - r)
    return 4.0 / (np.pi**2 * z) * elliptic_k(m) ** 2


def _fcc_closed(z, flip4, flip12):
    a = _csqrt(1.0 - 4.0 / z)
    b = _csqrt(1.0 + 12.0 / z)
    a = np.where(flip4, -a, a)
    b = np.where(flip12, -b, b)
    xi = (-1.0 + a) / (1.0 + b)
    den = (1.0 - xi) ** 3 * (1.0 + 3.0 * xi)
    m = 16.0 * xi**3 / den
    return 4.0 / (np.pi**2 * z) * (1.0 + 3.0 * xi**2) ** 2 / den * elliptic_k(m) ** 2


def _diamond_closed(z, flip_a, flip_b):
    a = _csqrt(4.0 - 16.0 / z**2)
    b = _csqrt(1.0 - 16.0 / z**2)
    a = np.where(flip_a, -a, a)
    b = np.where(flip_b, -b, b)
    m = 0.5 - 4.0 / z**2 * a - 0.25 * (2.0 - 16.0 / z**2) * b
    return 4.0 / (z * np.pi**2) * (a - b) * elliptic_k(m) ** 2


# Far from the band several continued sheets drive m towards 1 through a
# cancellation that double precision cannot resolve (m rounds to exactly 1
# near |z| ~ 1e4, and lose digits well before).  Beyond this radius the
# same formulas run in mpmath.
_FAR_RADIUS = 10.0
_MP_DPS = 30


def _mp_k(m, shift: int):
    k = mpmath.ellipk(m)
    if shift:
        k = k - 2j * shift * mpmath.ellipk(1 - m)
    return k


def _mp_closed_scalar(kind: LatticeKind, z: complex, index: int) -> complex:
    mp = mpmath
    with mp.workdps(_MP_DPS):
        z = mp.mpc(z)
        pi = mp.pi
        if kind is LatticeKind.CS:
            flip4 = index in (3, 4)
            flip36 = index in (2, 3, 4, 5)
            a = mp.sqrt(1 - 4 / z**2) * (-1 if flip4 else 1)
            b = mp.sqrt(1 - 36 / z**2) * (-1 if flip36 else 1)
            xi = mp.sqrt(1 - a) / mp.sqrt(1 + b)
            den = (1 - xi) ** 3 * (1 + 3 * xi)
            m = 16 * xi**3 / den
            shift = 0
            if flip4:
                # merged III/IV sheet: same side switch as the float path
                if z.real < 0 and m.imag > 0:
                    shift = 1
                elif z.real >= 0 and m.imag < 0:
                    shift = -1
            val = 4 / (pi**2 * z) * (1 - 9 * xi**4) / den * _mp_k(m, shift) ** 2
        elif kind is LatticeKind.BCC:
            r = mp.sqrt(1 - 64 / z**2) * (-1 if index in (2, 3) else 1)
            val = 4 / (pi**2 * z) * mp.ellipk((1 - r) / 2) ** 2
        elif kind is LatticeKind.FCC:
            a = mp.sqrt(1 - 4 / z) * (-1 if index == 3 else 1)
            b = mp.sqrt(1 + 12 / z) * (-1 if index == 2 else 1)
            xi = (a - 1) / (1 + b)
            den = (1 - xi) ** 3 * (1 + 3 * xi)
            m = 16 * xi**3 / den
            val = 4 / (pi**2 * z) * (1 + 3 * xi**2) ** 2 / den * mp.ellipk(m) ** 2
        else:
            a = mp.sqrt(4 - 16 / z**2) * (-1 if index in (3, 4) else 1)
            b = mp.sqrt(1 - 16 / z**2) * (-1 if 2 <= index <= 5 else 1)
            m = mp.mpf(1) / 2 - 4 / z**2 * a - (2 - 16 / z**2) * b / 4
            val = 4 / (z * pi**2) * (a - b) * mp.ellipk(m) ** 2
        return complex(val)


@functools.lru_cache(maxsize=65536)
def _far_closed(kind: LatticeKind, z: complex, index: int) -> complex:
    return _mp_closed_scalar(kind, z, index)


def _closed_form(kind: LatticeKind, z, index: int):
    """Closed form continued into region ``index`` (Sigma / g^2)."""
    z = np.asarray(z, dtype=complex)
    far = np.abs(z) > _FAR_RADIUS
    if not np.any(far):
        return _closed_form_double(kind, z, index)
    out = np.empty(z.shape, dtype=complex)
    near = ~far
    if np.any(near):
        out[near] = _closed_form_double(kind, z[near], index)
    out[far] = [_far_closed(kind, complex(v), index) for v in z[far]]
    return out


def _closed_form_double(kind: LatticeKind, z, index: int):
    if kind is LatticeKind.CS:
        if index in (3, 4):
            # one analytic sheet: pick the formula matching each point's side
            return np.where(z.real < 0, _cs_closed(z, True, True, 3), _cs_closed(z, True, True, 4))
        return _cs_closed(z, index in (2, 5), False, index)
    if kind is LatticeKind.BCC:
        return _bcc_closed(z, index in (2, 3))
    if kind is LatticeKind.FCC:
        return _fcc_closed(z, index == 3, index == 2)
    return _diamond_closed(z, index in (3, 4), index in (2, 3, 4, 5))


def sigma_analytic(kind, z, region: SheetRegion | int | None = None, g: float = 1.0):
    """Closed-form self-energy on the physical sheet or a continued region.

    Parameters
    ----------
    kind : LatticeKind or str
    z : complex or array_like
        Energy in units of J.
    region : SheetRegion, int or None
        ``None`` selects the physical sheet: the principal formula off the
        real axis and ``Sigma(E + i ETA)`` on the real axis.  A region selects
        the continuation across that region's real interval; real ``z`` is
        then read as ``E - i ETA``.
    g : float
        Emitter-bath coupling in units of J.

    Returns
    -------
    complex or ndarray

    Raises
    ------
    NonAnalyticPointError
        If a real ``z`` coincides with a detour energy (band edge, kink or
        singular gap).  The diamond
        lattice at ``z = 0`` is the one exception and returns exactly 0.
    """
    kind = parse_kind(kind)
    scalar = np.ndim(z) == 0
    z = np.atleast_1d(np.asarray(z, dtype=complex)).copy()
    on_axis = z.imag == 0
    bounds = np.asarray(DETOUR_ENERGIES[kind])
    hit = on_axis & np.isin(z.real, bounds)
    zero_gap = np.zeros_like(hit)
    if kind is LatticeKind.DIAMOND:
        zero_gap = hit & (z.real == 0.0)
        hit &= ~zero_gap
    if np.any(hit):
        raise NonAnalyticPointError(
            f"{kind.value} self-energy is not analytic at E = {z.real[hit][0]:g} J"
        )
    if zero_gap.any():
        z[zero_gap] = 1.0  # placeholder, overwritten below

    if region is None:
        lo, hi = BAND_EXTENTS[kind]
        shifted = on_axis & (z.real > lo) & (z.real < hi)
        index, side = 1, 1j
    else:
        index = region.index if isinstance(region, SheetRegion) else int(region)
        SheetRegion(kind, index)  # validates the index
        shifted = on_axis & ~zero_gap
        side = -1j
    val = _closed_form(kind, z + side * ETA * shifted, index)
    if shifted.any():
        # Richardson step in ETA removes the O(ETA * Sigma') offset
        far = _closed_form(kind, z[shifted] + 2 * side * ETA, index)
        val[shifted] = 2 * val[shifted] - far
    val = g**2 * val
    val[zero_gap] = 0.0
    return complex(val[0]) if scalar else val


def sigma_derivative(kind, z, region: SheetRegion | int | None = None, g: float = 1.0,
                     h: float = 1e-4):
    """d Sigma / dz by a Richardson-extrapolated central difference.

    The stencil runs parallel to the real axis so that every node stays in
    the same region when ``z`` is at least ``2 h`` from a boundary.
    """
    def d(step):
        return (sigma_analytic(kind, z + step, region, g)
                - sigma_analytic(kind, z - step, region, g)) / (2 * step)

    return (4.0 * d(h / 2) - d(h)) / 3.0


# ---------------------------------------------------------------------------
# brute-force lattice sums


def _check_off_band(kind, z):
    lo, hi = BAND_EXTENTS[kind]
    z = np.atleast_1d(z)
    bad = (z.imag == 0) & (z.real >= lo) & (z.real <= hi)
    if np.any(bad):
        raise ValueError(
            f"real z = {z.real[bad][0]:g} J lies in the {kind.value} band; "
            "a finite lattice sum has poles there (give Im z != 0)"
        )


def _lattice_sum(kind, z, N, weight=None):
    """(1/N^3) sum_k weight(k) * resolvent kernel(z, k) for each z."""
    kind = parse_kind(kind)
    w = dispersion_grid(kind, N)
    if kind is LatticeKind.DIAMOND:
        wsq = w[1] ** 2  # |F|^2
        shape = wsq.shape
    else:
        shape = w.shape
    shape = np.broadcast_shapes(shape, (N, N, N))
    wt = None if weight is None else np.broadcast_to(weight, shape)
    out = np.empty(len(z), dtype=complex)
    for i, zi in enumerate(z):
        if kind is LatticeKind.DIAMOND:
            kern = zi / (zi**2 - np.broadcast_to(wsq, shape))
        else:
            kern = 1.0 / (zi - np.broadcast_to(w, shape))
        if wt is not None:
            kern = kern * wt
        out[i] = np.sum(kern) / N**3  # numpy sums contiguous arrays pairwise
    return out


def sigma_brute(kind, z, N: int, g: float = 1.0):
    """Finite-lattice self-energy ``(g^2/N^3) sum_k 1/(z - omega_k)``.

    For the diamond lattice (emitter on an A site) the kernel is
    ``z / (z^2 - |F_k|^2)``.

    Raises
    ------
    ValueError
        For real ``z`` inside the band (no principal-value semantics) or
        ``N < 16``.
    """
    kind = parse_kind(kind)
    if N < 16:
        raise ValueError("sigma_brute needs N >= 16")
    scalar = np.ndim(z) == 0
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    _check_off_band(kind, z)
    val = g**2 * _lattice_sum(kind, z, N)
    return complex(val[0]) if scalar else val


# ---------------------------------------------------------------------------
# asymptotic expansions


class ExpansionKind(enum.Enum):
    BCC_CENTER = "bcc-center"
    FCC_UPPER_EDGE = "fcc-upper-edge"
    DIAMOND_GAP = "diamond-gap"


def _bcc_center(z, g=1.0):
    """Sigma(x - i y) near the BCC band center, for |x|, y << J.

    Valid on the continued sheets of regions 2 and 3.
    """
    y = -np.imag(np.asarray(z, dtype=complex))
    re = g**2 / (2 * np.pi) * np.log(64.0 / y)
    im = g**2 / (4 * np.pi**2) * (np.pi**2 - np.log(y / 64.0) ** 2)
    return re + 1j * im


def _fcc_upper_edge(x, g=1.0):
    """Sigma(4J + x - i0+) on the physical sheet for small real x."""
    x = np.asarray(x, dtype=float)
    lg = np.log(np.abs(x) / 64.0)
    below = (x < 0).astype(float)
    re = 3 * g**2 / (16 * np.pi**2) * (-below * np.pi**2 + lg**2)
    im = -3 * g**2 / (8 * np.pi) * lg * below
    return re + 1j * im


def _diamond_gap(e, g=1.0):
    """Sigma(E + i0+) near the diamond singular gap for small real E."""
    e = np.asarray(e, dtype=float)
    l1 = np.log(64.0 * np.exp(np.pi) / e**2)
    l2 = np.log(e**2 * np.exp(np.pi) / 64.0)
    return 3 * g**2 * e / (16 * np.pi**2) * (
        l1 * l2 - 2j * np.pi * np.sign(e) * np.log(64.0 / e**2)
    )


def sigma_expansion(kind, which) -> Callable:
    """Evaluator of a leading-order expansion near a singular energy.

    ``bcc-center`` takes complex ``z = x - i y``; ``fcc-upper-edge`` takes the
    real offset ``x`` from 4J; ``diamond-gap`` takes the real energy ``E``.
    Each evaluator accepts a keyword ``g``.
    """
    kind = parse_kind(kind)
    which = ExpansionKind(which)
    table = {
        ExpansionKind.BCC_CENTER: (LatticeKind.BCC, _bcc_center),
        ExpansionKind.FCC_UPPER_EDGE: (LatticeKind.FCC, _fcc_upper_edge),
        ExpansionKind.DIAMOND_GAP: (LatticeKind.DIAMOND, _diamond_gap),
    }
    owner, fn = table[which]
    if owner is not kind:
        raise ValueError(f"{which.value} expansion belongs to {owner.value}, not {kind.value}")
    return fn


# ---------------------------------------------------------------------------
# collective self-energies


class CollectiveMode(enum.Enum):
    SINGLE = "single"
    SYM_PAIR = "sym-pair"
    ANTI_PAIR = "anti-pair"
    SUBRADIANT8 = "subradiant8"


@dataclass(frozen=True)
class CollectiveQuery:
    """Which collective emitter state to evaluate.

    ``offset`` is the pair separation (primitive coordinates) for the pair
    modes; ``n`` is the size parameter of the 8-emitter subradiant layout.
    """

    mode: CollectiveMode
    offset: tuple[int, int, int] = (0, 0, 0)
    n: int = 1


def _phase_grid(N, offset):
    k = momentum_grid(N)
    p = [np.exp(1j * o * k) for o in offset]
    return p[0][:, None, None] * p[1][None, :, None] * p[2][None, None, :]


@functools.lru_cache(maxsize=None)
def subradiant_geometry(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Positions and signs of the 8-emitter BCC subradiant state.

    Starts from ``+`` on (2n,0,0), (0,2n,0), (0,0,2n), (2n,2n,2n) and ``-``
    on their negatives.  If that state does not null the collective
    self-energy at ``z = 0`` all 2^7 sign patterns (first sign fixed) are
    tried and the first nulling one is returned.

    Returns
    -------
    positions : ndarray, shape (8, 3), int
    signs : ndarray, shape (8,), float
    """
    if n < 1:
        raise ValueError("n must be a positive integer")
    base = np.array([[2, 0, 0], [0, 2, 0], [0, 0, 2], [2, 2, 2]]) * n
    positions = np.concatenate([base, -base])
    # a grid of 8n points resolves every phase pattern of these offsets
    N = 8 * n
    w = dispersion_grid(LatticeKind.BCC, N)
    zero = np.abs(w) < 1e-9
    phases = [_phase_grid(N, p) for p in positions]

    def nulls(signs):
        amp = sum(s * ph for s, ph in zip(signs, phases))
        a2 = np.abs(amp) ** 2 / 8.0
        if a2[zero].max(initial=0.0) > 1e-20:
            return False
        s0 = np.sum(np.where(zero, 0.0, a2 / np.where(zero, 1.0, w)))
        return abs(s0) / N**3 < 1e-12

    first = np.array([1, 1, 1, 1, -1, -1, -1, -1], dtype=float)
    if nulls(first):
        return positions, first
    for tail in itertools.product((1.0, -1.0), repeat=7):
        signs = np.array((1.0,) + tail)
        if nulls(signs):
            return positions, signs
    raise RuntimeError("no sign pattern nulls the subradiant self-energy")


def pair_coupling(kind, z, N: int, offset, g: float = 1.0):
    """Cross term ``Sigma_12(z; n) = (g^2/N^3) sum_k exp(i k.n)/(z - omega_k)``."""
    kind = parse_kind(kind)
    scalar = np.ndim(z) == 0
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    _check_off_band(kind, z)
    val = g**2 * _lattice_sum(kind, z, N, _phase_grid(N, offset))
    return complex(val[0]) if scalar else val


def sigma_collective(kind, query: CollectiveQuery, z, N: int, g: float = 1.0):
    """Finite-lattice self-energy of a collective emitter state.

    Pair modes return ``Sigma_e +/- Sigma_12``; the subradiant mode sums
    ``|A(k)|^2 / (z - omega_k)`` with ``A`` the normalized structure factor
    of :func:`subradiant_geometry`.  Real ``z`` inside the band is allowed
    when no lattice mode sits exactly at ``z`` with nonzero weight.
    """
    kind = parse_kind(kind)
    mode = CollectiveMode(query.mode)
    scalar = np.ndim(z) == 0
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    if mode is CollectiveMode.SINGLE:
        val = sigma_brute(kind, z, N, g)
    elif mode in (CollectiveMode.SYM_PAIR, CollectiveMode.ANTI_PAIR):
        sgn = 1.0 if mode is CollectiveMode.SYM_PAIR else -1.0
        val = g**2 * _lattice_sum(kind, z, N, 1.0 + sgn * _phase_grid(N, query.offset))
    else:
        if kind is not LatticeKind.BCC:
            raise ValueError("the subradiant 8-emitter mode is defined on BCC only")
        positions, signs = subradiant_geometry(query.n)
        amp = sum(s * _phase_grid(N, p) for s, p in zip(signs, positions))
        a2 = np.abs(amp) ** 2 / 8.0
        w = dispersion_grid(kind, N)
        val = np.empty(len(z), dtype=complex)
        for i, zi in enumerate(z):
            den = zi - w
            live = a2 > 1e-24
            if np.any(live & (den == 0)):
                raise NonAnalyticPointError(f"a coupled lattice mode sits at z = {zi}")
            val[i] = g**2 * np.sum(np.where(live, a2 / np.where(live, den, 1.0), 0.0)) / N**3
    return complex(val[0]) if scalar else val


# ---------------------------------------------------------------------------
# Markovian quantities


class MarkovParams(NamedTuple):
    shift: float  # delta omega_M = Re Sigma(Delta + i0+)
    rate: float  # Gamma_M = -2 Im Sigma(Delta + i0+)
    rate_fgr: float  # 2 pi g^2 D(Delta) from the histogram DOS


def markov_params(kind, delta: float, g: float = 1.0, N: int = 128,
                  n_bins: int = 400) -> MarkovParams:
    """Markovian Lamb shift and decay rate at detuning ``delta``.

    ``rate_fgr`` reads the histogram density of states (``N**3`` grid,
    ``n_bins`` bins over the band) at the bin containing ``delta``; it is 0
    outside the band.
    """
    kind = parse_kind(kind)
    s = sigma_analytic(kind, float(delta), None, g)
    lo, hi = BAND_EXTENTS[kind]
    if lo <= delta <= hi:
        hist = _cached_hist(kind, N, n_bins)
        i = min(int(np.searchsorted(hist.bin_edges, delta, side="right")) - 1, n_bins - 1)
        fgr = 2 * np.pi * g**2 * hist.density[i]
    else:
        fgr = 0.0
    return MarkovParams(float(s.real), float(-2.0 * s.imag), float(fgr))


@functools.lru_cache(maxsize=8)
def _cached_hist(kind, N, n_bins):
    return dos_histogram(kind, N, n_bins)

"""Poles, residues and branch-cut detours of the emitter Green function.

The emitter amplitude is

    C(t) = sum_poles R exp(-i z t) + sum_detours C_BCD(t),

where the poles solve ``z - Delta - Sigma(z) = 0`` (real bound states on the
physical sheet, complex unstable poles on the continued sheets), residues
are ``R = 1/(1 - Sigma'(z))``, and each detour at ``E_BC`` contributes

    C_BCD(t) = (1/2 pi) int_0^inf dy exp(-(y + i E_BC) t)
               [G_right(E_BC - i y) - G_left(E_BC - i y)]

with ``G = 1/(z - Delta - Sigma)`` continued into the region on either side.
All energies are in units of J.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import optimize

from qebath.lattice import BAND_EXTENTS, LatticeKind, dispersion_grid, parse_kind
from qebath.selfenergy import (
    DETOUR_ENERGIES,
    SHEET_GROUPS,
    NonAnalyticPointError,
    SheetRegion,
    pair_coupling,
    region_at,
    regions,
    sheet_interval,
    sigma_analytic,
    sigma_brute,
)
from qebath.specfun import lambert_w
from qebath.trace import Breakdown, TimeTrace

__all__ = [
    "PoleKind",
    "Pole",
    "PoleList",
    "Detour",
    "QuadratureError",
    "find_poles",
    "residue",
    "critical_detuning",
    "ubs_energy_fcc",
    "detours",
    "bcd_contribution",
    "bcd_integrand",
    "amplitude_series",
    "ExchangeFrequencies",
    "exchange_frequencies",
    "markov_two_qe",
    "subradiant_residue",
]

#: Horizontal offset of the detour lines from the non-analytic energy.
DETOUR_OFFSET = 1e-6
_NEWTON_STEP = 1e-6


class PoleKind(enum.Enum):
    BS = "bs"
    UP = "up"


@dataclass(frozen=True)
class Pole:
    """Pole of the emitter Green function.

    ``region`` is the sheet region the pole lives on; bound states sit on
    the physical sheet in an outer region.
    """

    z: complex
    residue: complex
    kind: PoleKind
    region: SheetRegion

    @property
    def label(self) -> str:
        return f"{self.kind.name} {self.region.label} {self.z.real:+.6f}{self.z.imag:+.6f}j"


class PoleList(list):
    """List of poles with a per-region record of seeds that did not converge."""

    def __init__(self, poles=(), diagnostics=None):
        super().__init__(poles)
        self.diagnostics: dict[str, list[complex]] = diagnostics or {}


class QuadratureError(ArithmeticError):
    """Detour quadrature did not reach its tolerance."""


# ---------------------------------------------------------------------------
# residues


def _contour_derivative(fn, z, radius, n_nodes=64):
    th = 2 * np.pi * np.arange(n_nodes) / n_nodes
    w = z + radius * np.exp(1j * th)
    return np.mean(fn(w) * np.exp(-1j * th)) / radius


def residue(kind, z: complex, delta: float, region: SheetRegion | None = None,
            g: float = 1.0) -> complex:
    """Residue ``1/(1 - Sigma'(z))`` of the Green function at a pole.

    ``region=None`` means the physical sheet (bound states).  Sigma' comes
    from a Richardson central difference along the real direction; when
    ``|1 - Sigma'|`` falls below 1e-3 the residue is taken from a circular
    contour integral of G instead (radius 1e-4, 64 nodes).
    """
    kind = parse_kind(kind)
    edges = np.asarray(BAND_EXTENTS[kind] if region is None else sheet_interval(region))
    dist = np.min(np.abs(edges[np.isfinite(edges)] - z.real)) if np.any(np.isfinite(edges)) else 1.0
    h = min(1e-4, 0.25 * dist)

    def sig(w):
        return sigma_analytic(kind, w, region, g)

    if region is None and z.imag == 0:
        # real point outside the band: Sigma is analytic on a disk around it
        d = _contour_derivative(sig, complex(z), 0.5 * dist)
    else:
        d1 = (sig(z + h) - sig(z - h)) / (2 * h)
        d2 = (sig(z + h / 2) - sig(z - h / 2)) / h
        d = (4 * d2 - d1) / 3
    denom = 1.0 - d
    if abs(denom) >= 1e-3:
        return complex(1.0 / denom)
    r = min(1e-4, 0.5 * dist)
    th = 2 * np.pi * np.arange(64) / 64
    w = z + r * np.exp(1j * th)
    gw = 1.0 / (w - delta - sig(w))
    return complex(np.mean(gw * r * np.exp(1j * th)))


# ---------------------------------------------------------------------------
# pole search


def _bound_states(kind, delta, g):
    lo, hi = BAND_EXTENTS[kind]
    found = []

    def f(e):
        return e - delta - sigma_analytic(kind, e, None, g).real

    reach = 2.0 * abs(g) + 1.0
    # below the band f is increasing with f(-inf) = -inf
    e_in = lo - 1e-12
    if f(e_in) > 0:
        e_out = min(delta, lo) - reach
        found.append((optimize.brentq(f, e_out, e_in, xtol=1e-14, rtol=1e-15), 1))
    # above the band f increases from f(hi+) to +inf
    for off in (1e-12, 1e-40, 1e-120, 1e-300):
        e_in = hi + off
        if e_in == hi:
            break
        if f(e_in) < 0:
            e_out = max(delta, hi) + reach
            found.append((optimize.brentq(f, e_in, e_out, xtol=1e-14, rtol=1e-15), -1))
            break
    out = []
    n_reg = len(regions(kind))
    for e, side in found:
        reg = SheetRegion(kind, 1 if side == 1 else n_reg)
        out.append(Pole(complex(e), residue(kind, complex(e), delta, None, g), PoleKind.BS, reg))
    return out


def _newton_region(kind, region, delta, g, seeds, max_iter=80, tol=1e-12):
    z = np.asarray(seeds, dtype=complex).copy()
    h = _NEWTON_STEP

    def F(w):
        return w - delta - sigma_analytic(kind, w, region, g)

    fz = F(z)
    active = np.ones(z.shape, dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        za = z[active]
        dF = 1.0 - (sigma_analytic(kind, za + h, region, g)
                    - sigma_analytic(kind, za - h, region, g)) / (2 * h)
        step = fz[active] / dF
        cap = 0.5 * np.maximum(1.0, np.abs(za))
        big = np.abs(step) > cap
        step[big] *= cap[big] / np.abs(step[big])
        lam = np.ones(za.shape)
        znew = za - step
        fnew = F(znew)
        for _ in range(12):  # backtracking on |F|
            worse = np.abs(fnew) > np.abs(fz[active]) * (1 - 1e-4 * lam)
            worse &= ~(np.abs(fnew) < tol)
            if not worse.any():
                break
            lam[worse] *= 0.5
            znew[worse] = za[worse] - lam[worse] * step[worse]
            fnew[worse] = F(znew[worse])
        idx = np.flatnonzero(active)
        z[idx] = znew
        fz[idx] = fnew
        done = (np.abs(fnew) < tol * max(1.0, abs(delta))) | (np.abs(lam * step) < 1e-15 * np.abs(znew))
        active[idx[done]] = False
    converged = np.abs(fz) < 1e-9 * max(1.0, abs(delta))
    return z, converged


def _unstable_poles(kind, delta, g, extra_seeds=()):
    poles, diagnostics = [], {}
    d0 = delta + 1e-9 if delta in DETOUR_ENERGIES[kind] else delta
    markov = delta + sigma_analytic(kind, d0, None, g)
    markov = np.conj(markov) if markov.imag > 0 else markov
    depth = 5.0 * max(1.0, g * g)
    n_outer = len(regions(kind))
    for group in SHEET_GROUPS[kind]:
        if group[0] in (1, n_outer):
            continue
        reg = SheetRegion(kind, group[0])
        lo = reg.interval[0]
        hi = SheetRegion(kind, group[-1]).interval[1]
        xs = np.linspace(lo, hi, 7)[1:-1]
        ys = np.geomspace(1e-3, depth, 5)
        seeds = (xs[None, :] - 1j * ys[:, None]).ravel()
        seeds = np.concatenate([[markov], seeds, np.asarray(extra_seeds, dtype=complex)])
        z, ok = _newton_region(kind, reg, delta, g, seeds)
        diagnostics[str(reg)] = list(seeds[~ok])
        valid = ok & (z.imag < -1e-12) & (z.real > lo) & (z.real < hi)
        kept: list[complex] = []
        for zi in z[valid]:
            if all(abs(zi - k) > 1e-7 * max(1.0, abs(k)) for k in kept):
                kept.append(zi)
        for zi in sorted(kept, key=lambda c: c.real):
            owner = reg if len(group) == 1 else region_at(kind, zi.real)
            poles.append(Pole(complex(zi), residue(kind, complex(zi), delta, owner, g),
                              PoleKind.UP, owner))
    return poles, diagnostics


def find_poles(kind, delta: float, g: float, extra_seeds=()) -> PoleList:
    """All bound states and valid unstable poles for one emitter.

    Bound states are bracketed on the real axis outside the band, where
    ``E - Delta - Sigma(E)`` is monotone.  Unstable poles come from damped
    Newton iterations in each inner region, seeded with the Markovian pole
    and a 5x5 grid over the region; roots whose real part leaves the region
    or whose imaginary part is not negative are discarded.

    Returns
    -------
    PoleList
        Poles sorted by real part; ``.diagnostics`` maps each searched sheet
        to the seeds that did not converge.  A sheet where no seed converges
        simply has no pole; the seeds are kept for inspection.
    """
    kind = parse_kind(kind)
    if g <= 0:
        raise ValueError("g must be positive")
    bs = _bound_states(kind, float(delta), float(g))
    ups, diag = _unstable_poles(kind, float(delta), float(g), extra_seeds)
    poles = sorted(bs + ups, key=lambda p: p.z.real)
    return PoleList(poles, diag)


# ---------------------------------------------------------------------------
# special energies


def _edge_sigma(kind, edge_energy, outward, g):
    """Limit of Sigma at a band edge approached from outside the band.

    Removes the leading square-root term with one Richardson step.
    """
    d = 1e-10
    s1 = sigma_analytic(kind, edge_energy + outward * d, None, g).real
    s4 = sigma_analytic(kind, edge_energy + outward * 4 * d, None, g).real
    return 2 * s1 - s4


def critical_detuning(kind, g: float, edge: str = "lower") -> float:
    """Detuning at which the bound state beyond ``edge`` merges with the band.

    Equals ``E_edge - Sigma(E_edge)`` with Sigma taken from outside.

    Raises
    ------
    ValueError
        For the FCC upper edge, where Sigma diverges and the bound state
        survives at every detuning.
    """
    kind = parse_kind(kind)
    lo, hi = BAND_EXTENTS[kind]
    if edge == "lower":
        e, out = lo, -1.0
    elif edge == "upper":
        if kind is LatticeKind.FCC:
            raise ValueError("no critical detuning exists at the FCC upper edge")
        e, out = hi, 1.0
    else:
        raise ValueError("edge must be 'lower' or 'upper'")
    return float(e - _edge_sigma(kind, e, out, g))


def ubs_energy_fcc(g: float) -> float:
    """Approximate FCC upper bound-state energy at ``Delta = 4J``.

    Uses the leading logarithmic behaviour of Sigma just above the edge,
    which gives ``4 + (3 g^2 / 4 pi^2) W(16 pi / (sqrt(3) g))^2``.
    """
    if g <= 0:
        raise ValueError("g must be positive")
    w = lambert_w(16 * np.pi / (g * np.sqrt(3.0)))
    return 4.0 + 3 * g**2 / (4 * np.pi**2) * w**2


# ---------------------------------------------------------------------------
# branch-cut detours


@dataclass
class Detour:
    """Vertical detour contour at ``energy`` between two sheet regions."""

    energy: float
    left: SheetRegion
    right: SheetRegion
    y_max: float = 1e6
    panels: np.ndarray | None = field(default=None, repr=False)

    @property
    def label(self) -> str:
        return f"BCD {self.energy:+g}"


def detours(kind) -> list[Detour]:
    kind = parse_kind(kind)
    out = []
    for e in DETOUR_ENERGIES[kind]:
        out.append(Detour(e, region_at(kind, e - DETOUR_OFFSET), region_at(kind, e + DETOUR_OFFSET)))
    return out


def bcd_integrand(kind, detour: Detour, delta: float, g: float, y):
    """Green functions on both sides of a detour at depth ``y``.

    Returns ``(G_right(E+eps-iy), G_left(E-eps-iy))``.
    """
    y = np.asarray(y, dtype=float)
    zr = detour.energy + DETOUR_OFFSET - 1j * y
    zl = detour.energy - DETOUR_OFFSET - 1j * y
    gr = 1.0 / (zr - delta - sigma_analytic(kind, zr, detour.right, g))
    gl = 1.0 / (zl - delta - sigma_analytic(kind, zl, detour.left, g))
    return gr, gl


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _gl(a, b):
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return (mid[:, None] + half[:, None] * _GL_NODES[None, :],
            half[:, None] * _GL_WEIGHTS[None, :])


def _detour_quadrature(kind, detour, delta, g, tol=1e-10, max_rounds=14):
    """Adaptive composite Gauss-Legendre rule over geometric panels in y."""
    edges = np.concatenate([[0.0], np.geomspace(1e-13, detour.y_max, 96)])
    a, b = edges[:-1], edges[1:]

    def panel_integral(a, b):
        y, w = _gl(a, b)
        gr, gl = bcd_integrand(kind, detour, delta, g, y.ravel())
        d = (gr - gl).reshape(y.shape)
        return np.sum(w * d, axis=1)

    whole = panel_integral(a, b)
    final_a, final_b = [], []
    for _ in range(max_rounds):
        m = 0.5 * (a + b)
        left, right = panel_integral(a, m), panel_integral(m, b)
        err = np.abs(left + right - whole)
        bad = err > tol * np.maximum(1.0, (b - a))
        final_a.append(np.concatenate([a[~bad], m[~bad]]))
        final_b.append(np.concatenate([m[~bad], b[~bad]]))
        if not bad.any():
            break
        a = np.concatenate([a[bad], m[bad]])
        b = np.concatenate([m[bad], b[bad]])
        whole = np.concatenate([left[bad], right[bad]])
    else:
        worst = float(np.max(err[bad]))
        raise QuadratureError(
            f"{detour.label}: {int(bad.sum())} panels above tolerance after "
            f"{max_rounds} refinements (worst {worst:.2e} near y={a[np.argmax(err[bad])]:.3e})"
        )
    a = np.concatenate(final_a)
    b = np.concatenate(final_b)
    order = np.argsort(a)
    return np.stack([a[order], b[order]])


def bcd_contribution(kind, detour: Detour, delta: float, g: float, t_grid):
    """Branch-cut detour term ``C_BCD(t)`` on a time grid.

    The integral over ``y in [0, y_max]`` uses adaptively refined
    Gauss-Legendre panels (refined until each panel agrees with its two
    halves to 1e-10 at t = 0); the tail beyond ``y_max`` is estimated from
    the ``y**-3`` decay of the integrand.

    Raises
    ------
    QuadratureError
        With panel diagnostics when refinement fails.
    """
    kind = parse_kind(kind)
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if detour.left == detour.right:
        return np.zeros(t.shape, dtype=complex)
    if detour.panels is None:
        detour.panels = _detour_quadrature(kind, detour, delta, g)
    a, b = detour.panels
    y, w = _gl(a, b)
    y, w = y.ravel(), w.ravel()
    gr, gl = bcd_integrand(kind, detour, delta, g, y)
    ph_r = np.exp(-1j * (detour.energy + DETOUR_OFFSET) * t)
    ph_l = np.exp(-1j * (detour.energy - DETOUR_OFFSET) * t)
    decay = np.exp(-np.outer(t, y))
    out = ph_r * (decay @ (w * gr)) - ph_l * (decay @ (w * gl))
    # tail beyond y_max, integrand ~ y^-3
    gr_end, gl_end = bcd_integrand(kind, detour, delta, g, np.array([detour.y_max]))
    tail = (gr_end[0] - gl_end[0]) * detour.y_max / 2.0
    out = out + tail * np.exp(-detour.y_max * t) * ph_r
    return out / (2 * np.pi)


def amplitude_series(kind, delta: float, g: float, t_grid):
    """Emitter amplitude from the pole and detour decomposition.

    Returns
    -------
    trace : TimeTrace
        Column ``"C_e"`` plus one contribution series per pole and detour.
    breakdown : Breakdown
        Weights of each contribution at t = 0 (they add up to 1).
    """
    kind = parse_kind(kind)
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    poles = find_poles(kind, delta, g)
    contributions: dict[str, np.ndarray] = {}
    entries: list[tuple[str, complex]] = []
    for p in poles:
        contributions[p.label] = p.residue * np.exp(-1j * p.z * t)
        entries.append((p.label, p.residue))
    for d in detours(kind):
        series = bcd_contribution(kind, d, delta, g, np.concatenate([[0.0], t]))
        contributions[d.label] = series[1:]
        entries.append((d.label, complex(series[0])))
    total = np.sum(list(contributions.values()), axis=0)
    trace = TimeTrace(t, total, ["C_e"], contributions)
    return trace, Breakdown(entries)


# ---------------------------------------------------------------------------
# two emitters


class ExchangeFrequencies(NamedTuple):
    j_markov: float  # Sigma_12(Delta), the Markovian exchange rate
    j_exact: float  # (E_+ - E_-)/2 from the parity-sector bound states
    e_plus: float
    e_minus: float


def _sector_sum(kind, N, offset, sign, g):
    w = np.ravel(dispersion_grid(kind, N))
    k = 2.0 * np.pi * np.arange(N) / N - np.pi
    k1, k2, k3 = np.meshgrid(k, k, k, indexing="ij")
    weight = 1.0 + sign * np.cos(offset[0] * k1 + offset[1] * k2 + offset[2] * k3).ravel()
    live = weight > 1e-14
    # merge degenerate energies to keep the root search cheap
    ws, inv = np.unique(np.round(w[live], 12), return_inverse=True)
    wt = np.bincount(inv, weights=weight[live])
    return ws, g**2 * wt / N**3


def exchange_frequencies(kind, delta: float, g: float, offset, N: int = 128) -> ExchangeFrequencies:
    """Markovian and exact exchange rates for two emitters outside the band.

    The symmetric and antisymmetric emitter states decouple
    (``omega(k) = omega(-k)``); each has one bound state ``E_+/-`` solving
    ``E - Delta - Sigma_+/-(E) = 0`` with the finite-lattice sums.
    """
    kind = parse_kind(kind)
    if kind is LatticeKind.DIAMOND:
        raise ValueError("use a single-band lattice for the pair exchange")
    lo, hi = BAND_EXTENTS[kind]
    if lo <= delta <= hi:
        raise ValueError("exchange frequencies need Delta outside the band")
    offset = tuple(int(o) for o in offset)
    energies = []
    for sign in (1.0, -1.0):
        ws, wt = _sector_sum(kind, N, offset, sign, g)

        def f(e):
            return e - delta - np.sum(wt / (e - ws))

        if delta > hi:
            left = ws.max() + 1e-12
            right = delta + 2 * g + 1.0
            if f(left) > 0:
                left = ws.max() + 1e-300 if ws.max() > 0 else ws.max()
        else:
            left = delta - 2 * g - 1.0
            right = ws.min() - 1e-12
        energies.append(optimize.brentq(f, left, right, xtol=1e-15, rtol=1e-15))
    e_plus, e_minus = energies
    j_m = pair_coupling(kind, complex(delta), N, offset, g).real
    return ExchangeFrequencies(float(j_m), 0.5 * (e_plus - e_minus), e_plus, e_minus)


def markov_two_qe(kind, delta: float, g: float, offset, t_grid, N: int = 128,
                  eta: float = 0.05):
    """Markovian populations of two emitters with the first one excited.

    ``Sigma_+/- = Sigma_e +/- Sigma_12`` are evaluated by lattice sums at
    ``Delta`` (outside the band) or at ``Delta + i eta`` (inside).

    Returns
    -------
    populations : ndarray, shape (n_t, 2)
        ``|C_1|^2`` and ``|C_2|^2``.
    freqs : ExchangeFrequencies or None
        Exact parity-sector frequencies when ``Delta`` is outside the band.
    """
    kind = parse_kind(kind)
    t = np.asarray(t_grid, dtype=float)
    lo, hi = BAND_EXTENTS[kind]
    inside = lo <= delta <= hi
    z = complex(delta, eta if inside else 0.0)
    se = sigma_brute(kind, z, N, g)
    s12 = pair_coupling(kind, z, N, offset, g)
    sp, sm = se + s12, se - s12
    jp, jm = sp.real, sm.real
    gp, gm = -2 * sp.imag, -2 * sm.imag
    cross = 2 * np.exp(-0.5 * (gp + gm) * t) * np.cos((jp - jm) * t)
    base = np.exp(-gp * t) + np.exp(-gm * t)
    pops = 0.25 * np.stack([base + cross, base - cross], axis=1)
    freqs = None if inside else exchange_frequencies(kind, delta, g, offset, N)
    return pops, freqs


def subradiant_residue(n: int, g: float, N: int | None = None) -> float:
    """Residue of the zero-energy pole of the 8-emitter BCC subradiant state.

    With ``N=None`` this is the infinite-lattice value ``1/(1 + g^2 n^3)``,
    from the separable integral ``int_0^pi sin^2(2nq)/cos^2(q) dq = 2 pi n``.
    Otherwise ``Sigma_sb'(0)`` is summed on the ``N**3`` grid.
    """
    if N is None:
        return 1.0 / (1.0 + g**2 * n**3)
    from qebath.selfenergy import _phase_grid, subradiant_geometry

    positions, signs = subradiant_geometry(n)
    amp = sum(s * _phase_grid(N, p) for s, p in zip(signs, positions))
    a2 = np.abs(amp) ** 2 / 8.0
    w = dispersion_grid(LatticeKind.BCC, N)
    live = a2 > 1e-24
    if np.any(live & (w == 0)):
        raise NonAnalyticPointError("a coupled mode sits at zero energy")
    d = -g**2 * np.sum(np.where(live, a2 / np.where(live, w, 1.0) ** 2, 0.0)) / N**3
    return float(1.0 / (1.0 - d))

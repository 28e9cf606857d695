"""Exact single-excitation dynamics of emitters coupled to a finite periodic bath.

Three propagators share one interface (:func:`evolve`):

``split-step``
    Second-order Trotter splitting of the full lattice state (optionally
    lifted to fourth order by a symmetric composition).  The bath moves in
    momentum space by FFT; emitters exchange amplitude with their site
    through an exact local rotation.
``freq-binned``
    Bath modes are grouped by frequency and, inside each group, only the
    combinations the emitters couple to are kept.  With ``d_omega = 0`` the
    groups are exact degeneracy classes and the reduction is exact.  The
    reduced problem is propagated with a Chebyshev expansion.
``dense``
    Real-space Hamiltonian diagonalized in full; a reference for ``N <= 8``.

Positions are integer primitive coordinates and fields are stored on the
primitive grid (diamond fields carry an A/B sublattice axis).  Times are in
units of 1/J.
"""
from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy import optimize, special

from qebath.lattice import (
    BAND_EXTENTS,
    LatticeKind,
    diamond_form_factor,
    dispersion_grid,
    lattice_info,
    parse_kind,
)
from qebath.selfenergy import subradiant_geometry
from qebath.trace import TimeTrace

__all__ = [
    "Method",
    "Emitter",
    "EmitterLayout",
    "EvolutionConfig",
    "BathField",
    "EvolutionResult",
    "EvolutionError",
    "ConfigError",
    "CollectiveCoupling",
    "TransferResult",
    "evolve",
    "collective_amplitude",
    "subradiant_layout",
    "bound_state_wavefunction",
    "collective_mode_coupling",
    "two_emitter_transfer",
    "dominant_frequency",
]

_SUBLATTICES = ("A", "B")
# fourth-order symmetric composition of three Strang steps
_YOSHIDA_OUTER = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
_YOSHIDA_INNER = 1.0 - 2.0 * _YOSHIDA_OUTER
_DEGENERACY_TOL = 1e-9


def _fft_workers() -> int:
    try:
        return max(1, int(os.environ.get("QEBATH_THREADS", "1")))
    except ValueError:
        return 1


class Method(enum.Enum):
    SPLIT_STEP = "split-step"
    FREQ_BINNED = "freq-binned"
    DENSE_ORACLE = "dense"


class ConfigError(ValueError):
    """Invalid layout or configuration; ``problems`` lists every issue found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class EvolutionError(RuntimeError):
    """Numerical failure during propagation (e.g. norm drift)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


@dataclass
class Emitter:
    """One two-level emitter attached to a bath site.

    Parameters
    ----------
    position : sequence of 3 ints
        Site in primitive coordinates.
    g, delta : float
        Coupling and detuning in units of J.
    amplitude : complex
        Initial excited-state amplitude.
    sublattice : {"A", "B"} or None
        Required for the diamond lattice, absent otherwise.
    """

    position: tuple
    g: float
    delta: float
    amplitude: complex = 1.0
    sublattice: str | None = None

    def __post_init__(self):
        self.position = tuple(int(p) for p in self.position)
        self.amplitude = complex(self.amplitude)
        if self.sublattice is not None:
            self.sublattice = str(self.sublattice).upper()


@dataclass
class EmitterLayout:
    """Emitters placed on an ``N**3`` periodic bath (the bath starts empty)."""

    kind: LatticeKind
    N: int
    emitters: list[Emitter]

    def __post_init__(self):
        self.kind = parse_kind(self.kind)
        self.emitters = list(self.emitters)
        problems = self.problems()
        if problems:
            raise ConfigError(problems)

    def problems(self) -> list[str]:
        out = []
        if self.N < 2:
            out.append("N must be at least 2")
        if not self.emitters:
            out.append("layout needs at least one emitter")
        for i, e in enumerate(self.emitters):
            if len(e.position) != 3 or any(not 0 <= p < self.N for p in e.position):
                out.append(f"emitter {i}: position {e.position} outside [0, {self.N})^3")
            if self.kind is LatticeKind.DIAMOND:
                if e.sublattice not in _SUBLATTICES:
                    out.append(f"emitter {i}: diamond needs sublattice A or B")
            elif e.sublattice is not None:
                out.append(f"emitter {i}: sublattice only applies to diamond")
            if not (np.isfinite(e.g) and np.isfinite(e.delta)):
                out.append(f"emitter {i}: g and delta must be finite")
        weight = sum(abs(e.amplitude) ** 2 for e in self.emitters)
        if weight > 1.0 + 1e-12:
            out.append(f"initial emitter norm {weight:.6g} exceeds 1")
        return out

    @property
    def labels(self) -> list[str]:
        return [f"C_{i + 1}" for i in range(len(self.emitters))]

    @property
    def n_sublattices(self) -> int:
        return 2 if self.kind is LatticeKind.DIAMOND else 1

    @property
    def initial_amplitudes(self) -> np.ndarray:
        return np.array([e.amplitude for e in self.emitters], dtype=complex)

    def site_index(self, emitter: Emitter) -> tuple[int, int, int, int]:
        sub = 0 if emitter.sublattice in (None, "A") else 1
        return (sub,) + emitter.position


@dataclass
class EvolutionConfig:
    """Propagator choice and numerical parameters.

    Attributes
    ----------
    method : Method or str
    t_max : float
        Final time; the trace is sampled at ``n_samples`` equally spaced times.
    dt : float
        Split-step time step.
    order : {2, 4}
        Split-step order (Strang, or its fourth-order composition).
    dt_tolerance : float or None
        When set, the split-step ``dt`` is halved until the emitter trace
        changes by less than this between successive halvings.
    d_omega : float or None
        Frequency-bin width.  ``None`` ties it to ``t_max`` as
        ``0.5 / t_max``; ``0`` groups exactly degenerate modes only.
    n_omega : int or None
        Number of bins across the band; overrides ``d_omega``.
    snapshot_times : tuple of float
        Times at which the full bath field is stored.
    record_bath : bool
        Add per-sublattice bath populations to the trace contributions.
    norm_tolerance : float
        Abort when the total norm drifts further than this.
    """

    method: Method | str = Method.SPLIT_STEP
    t_max: float = 10.0
    n_samples: int = 201
    dt: float = 0.01
    order: int = 2
    dt_tolerance: float | None = None
    d_omega: float | None = None
    n_omega: int | None = None
    snapshot_times: tuple = ()
    record_bath: bool = False
    norm_tolerance: float = 1e-6

    def __post_init__(self):
        self.method = Method(self.method)
        self.snapshot_times = tuple(float(t) for t in self.snapshot_times)

    def bin_width(self, kind) -> float:
        lo, hi = BAND_EXTENTS[parse_kind(kind)]
        if self.n_omega is not None:
            return (hi - lo) / self.n_omega
        if self.d_omega is None:
            return 0.5 / self.t_max
        return float(self.d_omega)

    def problems(self, layout: EmitterLayout) -> list[str]:
        out = []
        if not self.t_max > 0:
            out.append("t_max must be positive")
        if self.n_samples < 2:
            out.append("n_samples must be at least 2")
        if any(not 0 <= t <= self.t_max for t in self.snapshot_times):
            out.append("snapshot times must lie in [0, t_max]")
        if self.method is Method.SPLIT_STEP:
            if not self.dt > 0:
                out.append("dt must be positive")
            if self.order not in (2, 4):
                out.append("order must be 2 or 4")
        elif self.method is Method.FREQ_BINNED:
            if self.n_omega is not None and self.n_omega < 1:
                out.append("n_omega must be positive")
            elif self.d_omega is not None and self.d_omega < 0:
                out.append("d_omega must be non-negative")
            elif self.t_max > 0 and self.bin_width(layout.kind) * self.t_max > 1.0:
                out.append("frequency binning is only valid for t_max <= 1/d_omega")
        elif layout.N > 8:
            out.append("the dense oracle is limited to N <= 8")
        return out


@dataclass
class BathField:
    """Bath amplitudes on the primitive grid at one time.

    ``amplitudes`` has shape ``(N, N, N)``, or ``(2, N, N, N)`` for the
    diamond lattice with the A sublattice first.
    """

    amplitudes: np.ndarray
    time: float
    kind: LatticeKind

    @property
    def N(self) -> int:
        return self.amplitudes.shape[-1]

    @property
    def n_sublattices(self) -> int:
        return 2 if self.amplitudes.ndim == 4 else 1

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    def line(self, direction, length: int | None = None, sublattice: int = 0) -> np.ndarray:
        """Amplitudes at ``n * direction`` for ``n = 0 .. length-1`` (periodic)."""
        N = self.N
        length = N // 2 if length is None else length
        d = np.asarray(direction, dtype=int)
        idx = (np.arange(length)[:, None] * d[None, :]) % N
        arr = self.amplitudes[sublattice] if self.n_sublattices == 2 else self.amplitudes
        return arr[idx[:, 0], idx[:, 1], idx[:, 2]]


@dataclass
class EvolutionResult:
    trace: TimeTrace
    snapshots: list[BathField] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# bath modes in FFT order


def _fft_momenta(N):
    k = 2.0 * np.pi * np.arange(N) / N
    return np.meshgrid(k, k, k, indexing="ij", sparse=True)


def _diamond_bands(N):
    """Structure factor and band eigenvector components on the FFT grid.

    Returns ``F`` and ``u`` with ``u[sub, band]`` the amplitude of the
    band-``band`` eigenvector (0 lower, 1 upper) on sublattice ``sub``.
    """
    F = diamond_form_factor(*_fft_momenta(N))
    a = np.abs(F)
    zero = a < 1e-12
    phase = np.where(zero, 1.0, np.conj(F) / np.where(zero, 1.0, a))
    r = 1.0 / np.sqrt(2.0)
    u = np.empty((2, 2) + F.shape, dtype=complex)
    u[0, 0] = np.where(zero, 1.0, r)
    u[1, 0] = np.where(zero, 0.0, r * phase)
    u[0, 1] = np.where(zero, 0.0, r)
    u[1, 1] = np.where(zero, 1.0, -r * phase)
    return F, u


def _plane_wave(N, position):
    k = 2.0 * np.pi * np.arange(N) / N
    p = [np.exp(1j * x * k) for x in position]
    return p[0][:, None, None] * p[1][None, :, None] * p[2][None, None, :]


# ---------------------------------------------------------------------------
# split-step


class _SplitStep:
    def __init__(self, layout: EmitterLayout, dt: float, order: int):
        self.layout = layout
        self.dt = dt
        self.order = order
        N = layout.N
        self.shape = (layout.n_sublattices, N, N, N)
        if layout.kind is LatticeKind.DIAMOND:
            self.F = diamond_form_factor(*_fft_momenta(N))
            self.absF = np.abs(self.F)
        else:
            self.omega = np.broadcast_to(dispersion_grid(layout.kind, N, fft_order=True), (N, N, N))
        groups: dict[tuple, list[int]] = {}
        for i, e in enumerate(layout.emitters):
            groups.setdefault(layout.site_index(e), []).append(i)
        self.groups = [(site, np.array(idx)) for site, idx in groups.items()]
        self._local_cache: dict[float, list[np.ndarray]] = {}
        self._bath_cache: dict[float, tuple] = {}

    def initial(self):
        return self.layout.initial_amplitudes.copy(), np.zeros(self.shape, dtype=complex)

    def _local_props(self, tau):
        props = self._local_cache.get(tau)
        if props is None:
            props = []
            for _, idx in self.groups:
                ems = [self.layout.emitters[i] for i in idx]
                n = len(ems)
                h = np.zeros((n + 1, n + 1))
                h[np.arange(n), np.arange(n)] = [e.delta for e in ems]
                h[:n, n] = h[n, :n] = [e.g for e in ems]
                w, v = np.linalg.eigh(h)
                props.append((v * np.exp(-1j * w * tau)) @ v.conj().T)
            self._local_cache[tau] = props
        return props

    def _local(self, C, psi, tau):
        for (site, idx), u in zip(self.groups, self._local_props(tau)):
            vec = u @ np.append(C[idx], psi[site])
            C[idx] = vec[:-1]
            psi[site] = vec[-1]

    def _bath(self, psi, tau):
        workers = _fft_workers()
        pk = sfft.fftn(psi, axes=(1, 2, 3), workers=workers, overwrite_x=True)
        factors = self._bath_cache.get(tau)
        if factors is None:
            if self.layout.kind is LatticeKind.DIAMOND:
                c = np.cos(self.absF * tau)
                # i sin(|F| tau) / |F|, continuous through |F| = 0
                s = 1j * tau * np.sinc(self.absF * tau / np.pi)
                factors = (c, s * self.F, s * np.conj(self.F))
            else:
                factors = (np.exp(-1j * self.omega * tau),)
            self._bath_cache[tau] = factors
        if len(factors) == 1:
            pk[0] *= factors[0]
        else:
            c, sf, sfc = factors
            a, b = pk[0].copy(), pk[1]
            pk[0] = c * a + sf * b
            pk[1] = sfc * a + c * b
        return sfft.ifftn(pk, axes=(1, 2, 3), workers=workers, overwrite_x=True)

    def _strang(self, C, psi, tau):
        self._local(C, psi, 0.5 * tau)
        psi = self._bath(psi, tau)
        self._local(C, psi, 0.5 * tau)
        return psi

    def advance(self, state, T):
        C, psi = state
        if T <= 0:
            return C, psi
        n = max(1, math.ceil(T / self.dt - 1e-9))
        tau = T / n
        for _ in range(n):
            if self.order == 2:
                psi = self._strang(C, psi, tau)
            else:
                psi = self._strang(C, psi, _YOSHIDA_OUTER * tau)
                psi = self._strang(C, psi, _YOSHIDA_INNER * tau)
                psi = self._strang(C, psi, _YOSHIDA_OUTER * tau)
        return C, psi

    @staticmethod
    def emitters(state):
        return state[0]

    @staticmethod
    def norm(state):
        C, psi = state
        return float(np.sum(np.abs(C) ** 2) + np.sum(np.abs(psi) ** 2))

    def bath_populations(self, state):
        return np.sum(np.abs(state[1]) ** 2, axis=(1, 2, 3))

    def field(self, state):
        psi = state[1]
        return psi.copy() if self.layout.n_sublattices == 2 else psi[0].copy()


# ---------------------------------------------------------------------------
# frequency-binned reduction


_CHEB_MAX_ARG = 400.0


def _chebyshev_sweep(matvec, psi, taus, full_mask, center, radius, n_head):
    """``exp(-i H tau) psi`` for several ``tau`` from one Chebyshev series.

    ``H`` must have its spectrum in ``center +/- radius``.  Only the first
    ``n_head`` components are returned for every ``tau``; full vectors are
    returned where ``full_mask`` is set.
    """
    taus = np.asarray(taus, dtype=float)
    x = radius * taus
    n_max = int(x.max() + 12.0 * max(x.max(), 1.0) ** (1.0 / 3.0) + 25)
    coef = special.jv(np.arange(n_max)[None, :], x[:, None])
    big = np.nonzero(np.abs(coef).max(axis=0) > 1e-18)[0]
    n_max = int(big[-1]) + 1 if big.size else 1
    coef = coef[:, :n_max] * 2.0 * (-1j) ** np.arange(n_max)
    coef[:, 0] *= 0.5
    full_idx = np.nonzero(full_mask)[0]
    head = np.zeros((taus.size, n_head), dtype=complex)
    full = np.zeros((full_idx.size, psi.size), dtype=complex)

    def hs(v):
        return (matvec(v) - center * v) / radius

    def accumulate(n, vec):
        head[:] += coef[:, n, None] * vec[None, :n_head]
        if full_idx.size:
            full[:] += coef[full_idx, n, None] * vec[None, :]

    prev, cur = None, psi
    accumulate(0, psi)
    for n in range(1, n_max):
        nxt = hs(cur) if n == 1 else 2.0 * hs(cur) - prev
        prev, cur = cur, nxt
        accumulate(n, cur)
    phase = np.exp(-1j * center * taus)
    head *= phase[:, None]
    full *= phase[full_idx, None]
    return head, full


class _FreqBinned:
    """Emitters plus the bath combinations they couple to, bin by bin."""

    def __init__(self, layout: EmitterLayout, d_omega: float):
        self.layout = layout
        N = layout.N
        ems = layout.emitters
        n_e = len(ems)
        self.n_e = n_e
        norm = N ** -1.5
        if layout.kind is LatticeKind.DIAMOND:
            F, u = _diamond_bands(N)
            a = np.abs(F)
            omega = np.stack([-a, a])  # (band, N, N, N)
            self.u = u
        else:
            omega = np.broadcast_to(dispersion_grid(layout.kind, N, fft_order=True), (N, N, N))[None]
            self.u = None
        self.mode_shape = omega.shape
        omega = omega.reshape(-1)
        self.omega_modes = omega

        # group labels: exact degeneracy classes or fixed-width bins
        if d_omega > 0:
            lo = omega.min()
            labels = np.floor((omega - lo) / d_omega).astype(np.int64)
            _, labels = np.unique(labels, return_inverse=True)
        else:
            order = np.argsort(omega, kind="stable")
            breaks = np.diff(omega[order]) > _DEGENERACY_TOL
            sorted_labels = np.concatenate([[0], np.cumsum(breaks)])
            labels = np.empty_like(sorted_labels)
            labels[order] = sorted_labels
        labels = labels.reshape(-1)
        n_groups = int(labels.max()) + 1
        self.labels = labels

        gram = np.zeros((n_groups, n_e, n_e), dtype=complex)
        weight = np.zeros(n_groups)
        wsum = np.zeros(n_groups)
        couplings = [self._coupling(e, norm) for e in ems]
        for j in range(n_e):
            vj = couplings[j]
            pj = np.abs(vj) ** 2
            weight += np.bincount(labels, pj, n_groups)
            wsum += np.bincount(labels, pj * omega, n_groups)
            for l in range(j, n_e):
                prod = vj * np.conj(couplings[l])
                g = np.bincount(labels, prod.real, n_groups) + 1j * np.bincount(labels, prod.imag, n_groups)
                gram[:, j, l] = g
                gram[:, l, j] = np.conj(g)
        self._couplings = couplings
        lam, vec = np.linalg.eigh(gram)
        cut = 1e-13 * max(lam.max(), 1e-300)
        kept = lam > cut
        grp, lvl = np.nonzero(kept)
        safe = np.where(weight > 0, weight, 1.0)
        self.group_freq = np.where(weight > 0, wsum / safe, 0.0)
        self.mode_group = grp
        sq = np.sqrt(lam[grp, lvl])
        self.W = np.ascontiguousarray(vec[grp, :, lvl].T * sq)  # (n_e, n_red)
        self.Wh = np.ascontiguousarray(self.W.conj().T)
        self.back = vec[grp, :, lvl].T / sq  # U / sqrt(lambda) for field reconstruction
        self.omega = self.group_freq[grp]
        self.delta = np.array([e.delta for e in ems])
        self.dim = n_e + self.omega.size
        wn = float(np.sqrt(np.sum(np.abs(self.W) ** 2)))
        lo = min(self.omega.min(initial=np.inf), self.delta.min()) - wn
        hi = max(self.omega.max(initial=-np.inf), self.delta.max()) + wn
        self.center = 0.5 * (lo + hi)
        self.radius = 0.5 * (hi - lo) * (1 + 1e-9) + 1e-12

    def _coupling(self, e: Emitter, norm):
        N = self.layout.N
        pw = e.g * norm * _plane_wave(N, e.position)
        if self.u is None:
            return pw.reshape(-1)
        sub = 0 if e.sublattice == "A" else 1
        return (pw[None] * self.u[sub]).reshape(-1)

    def matvec(self, v):
        c, d = v[: self.n_e], v[self.n_e :]
        return np.concatenate([self.delta * c + self.W @ d, self.omega * d + self.Wh @ c])

    def initial(self):
        psi = np.zeros(self.dim, dtype=complex)
        psi[: self.n_e] = self.layout.initial_amplitudes
        return psi

    def sweep(self, events, need_full):
        """Yield ``(t, emitter amplitudes, full state or None)`` per event.

        Events inside one Chebyshev chunk share a single expansion; the
        full state is also produced at every chunk end.
        """
        state = self.initial()
        t0 = 0.0
        step = _CHEB_MAX_ARG / self.radius
        i = 0
        events = np.asarray(events, dtype=float)
        while i < events.size and events[i] <= 0.0:
            yield events[i], state[: self.n_e].copy(), state
            i += 1
        while i < events.size:
            j = int(np.searchsorted(events, t0 + step, side="right"))
            j = max(j, i + 1)
            taus = events[i:j] - t0
            mask = np.asarray(need_full[i:j], dtype=bool).copy()
            mask[-1] = True
            head, full = _chebyshev_sweep(self.matvec, state, taus, mask, self.center, self.radius, self.n_e)
            rows = iter(full)
            for m in range(taus.size):
                yield events[i + m], head[m], next(rows) if mask[m] else None
            state = full[-1]
            t0 = events[j - 1]
            i = j

    def emitters(self, state):
        return state[: self.n_e]

    @staticmethod
    def norm(state):
        return float(np.sum(np.abs(state) ** 2))

    def mode_amplitudes(self, state):
        """Amplitude of every lattice mode, shape ``(bands, N, N, N)``."""
        d = state[self.n_e :]
        n_groups = self.group_freq.size
        beta = np.zeros((self.n_e, n_groups), dtype=complex)
        for j in range(self.n_e):
            beta[j] = np.bincount(self.mode_group, (self.back[j] * d).real, n_groups) + 1j * np.bincount(
                self.mode_group, (self.back[j] * d).imag, n_groups
            )
        c = np.zeros(self.omega_modes.size, dtype=complex)
        for j in range(self.n_e):
            c += np.conj(self._couplings[j]) * beta[j, self.labels]
        return c.reshape(self.mode_shape)

    def _sublattice_k(self, c):
        if self.u is None:
            return c
        return np.einsum("sbxyz,bxyz->sxyz", self.u, c)

    def bath_populations(self, state):
        ck = self._sublattice_k(self.mode_amplitudes(state))
        return np.sum(np.abs(ck) ** 2, axis=(1, 2, 3))

    def field(self, state):
        N = self.layout.N
        ck = self._sublattice_k(self.mode_amplitudes(state))
        f = sfft.ifftn(ck, axes=(1, 2, 3), workers=_fft_workers()) * N**1.5
        return f if self.u is not None else f[0]


# ---------------------------------------------------------------------------
# dense oracle


class _Dense:
    def __init__(self, layout: EmitterLayout):
        self.layout = layout
        N = layout.N
        n_sites = layout.n_sublattices * N**3
        n_e = len(layout.emitters)
        self.n_e = n_e
        self.n_sites = n_sites
        h = np.zeros((n_sites + n_e, n_sites + n_e))
        grid = np.indices((N, N, N)).reshape(3, -1).T
        flat = np.ravel_multi_index(grid.T, (N, N, N))
        offsets = lattice_info(layout.kind).neighbour_offsets
        for off in offsets:
            nb = np.ravel_multi_index(((grid + off) % N).T, (N, N, N))
            if layout.kind is LatticeKind.DIAMOND:
                np.add.at(h, (flat, N**3 + nb), -1.0)
                np.add.at(h, (N**3 + nb, flat), -1.0)
            else:
                np.add.at(h, (flat, nb), -1.0)
        for i, e in enumerate(layout.emitters):
            sub, *pos = layout.site_index(e)
            s = sub * N**3 + int(np.ravel_multi_index(tuple(pos), (N, N, N)))
            h[n_sites + i, n_sites + i] = e.delta
            h[n_sites + i, s] += e.g
            h[s, n_sites + i] += e.g
        self.energies, self.vectors = np.linalg.eigh(h)

    def initial(self):
        psi = np.zeros(self.n_sites + self.n_e, dtype=complex)
        psi[self.n_sites :] = self.layout.initial_amplitudes
        return psi

    def advance(self, state, T):
        v = self.vectors
        return v @ (np.exp(-1j * self.energies * T) * (v.conj().T @ state))

    def emitters(self, state):
        return state[self.n_sites :]

    @staticmethod
    def norm(state):
        return float(np.sum(np.abs(state) ** 2))

    def field(self, state):
        N = self.layout.N
        f = state[: self.n_sites].reshape(self.layout.n_sublattices, N, N, N)
        return f.copy() if self.layout.n_sublattices == 2 else f[0].copy()

    def bath_populations(self, state):
        f = state[: self.n_sites].reshape(self.layout.n_sublattices, -1)
        return np.sum(np.abs(f) ** 2, axis=1)


# ---------------------------------------------------------------------------
# driver


def _propagator(layout, cfg, dt=None):
    if cfg.method is Method.SPLIT_STEP:
        return _SplitStep(layout, cfg.dt if dt is None else dt, cfg.order)
    if cfg.method is Method.FREQ_BINNED:
        return _FreqBinned(layout, cfg.bin_width(layout.kind))
    return _Dense(layout)


def _sequential_sweep(prop, events, need_full):
    state = prop.initial()
    t_prev = 0.0
    for t in events:
        state = prop.advance(state, t - t_prev)
        t_prev = t
        yield t, prop.emitters(state), state


def _run(prop, layout: EmitterLayout, cfg: EvolutionConfig) -> EvolutionResult:
    times = np.linspace(0.0, cfg.t_max, cfg.n_samples)
    snaps = np.asarray(cfg.snapshot_times, dtype=float)
    events = np.union1d(times, snaps)
    is_snap = np.array([np.any(np.isclose(t, snaps, rtol=0, atol=1e-12)) for t in events], dtype=bool)
    need_full = is_snap | cfg.record_bath
    n_e = len(layout.emitters)
    amps = np.empty((times.size, n_e), dtype=complex)
    bath = np.empty((times.size, layout.n_sublattices)) if cfg.record_bath else None
    snapshots = []
    norm0 = float(np.sum(np.abs(layout.initial_amplitudes) ** 2))
    max_drift = 0.0
    sample = 0
    sweep = prop.sweep if hasattr(prop, "sweep") else lambda e, f: _sequential_sweep(prop, e, f)
    for i, (t, em, state) in enumerate(sweep(events, need_full)):
        if state is not None:
            drift = abs(prop.norm(state) - norm0)
            max_drift = max(max_drift, drift)
            if drift > cfg.norm_tolerance:
                raise EvolutionError(
                    f"norm drift {drift:.3e} exceeds {cfg.norm_tolerance:.1e} at t = {t:.6g}",
                    {"time": float(t), "drift": drift, "method": cfg.method.value},
                )
        if sample < times.size and np.isclose(t, times[sample], rtol=0, atol=1e-12):
            amps[sample] = em
            if bath is not None:
                bath[sample] = prop.bath_populations(state)
            sample += 1
        if is_snap[i]:
            snapshots.append(BathField(prop.field(state), float(t), layout.kind))
    contributions = {}
    if bath is not None:
        names = ["bath_A", "bath_B"] if layout.n_sublattices == 2 else ["bath"]
        contributions = {name: bath[:, i] for i, name in enumerate(names)}
    trace = TimeTrace(times, amps, layout.labels, contributions)
    diag = {"method": cfg.method.value, "max_norm_drift": max_drift}
    if isinstance(prop, _FreqBinned):
        diag["reduced_dimension"] = prop.dim
    if isinstance(prop, _SplitStep):
        diag["dt"] = prop.dt
    return EvolutionResult(trace, snapshots, diag)


def evolve(layout: EmitterLayout, cfg: EvolutionConfig) -> EvolutionResult:
    """Propagate the emitters and the bath from an empty bath.

    Returns
    -------
    EvolutionResult
        Emitter amplitudes ``C_1 .. C_n`` on the sample grid, requested bath
        snapshots and diagnostics (maximum norm drift, time step used or
        reduced dimension).

    Raises
    ------
    ConfigError
        Configuration incompatible with the method or layout.
    EvolutionError
        Total norm drifted beyond ``cfg.norm_tolerance``, or the time step
        could not be converged to ``cfg.dt_tolerance``.
    """
    problems = layout.problems() + cfg.problems(layout)
    if problems:
        raise ConfigError(problems)
    if cfg.method is not Method.SPLIT_STEP or cfg.dt_tolerance is None:
        return _run(_propagator(layout, cfg), layout, cfg)
    dt = cfg.dt
    result = _run(_propagator(layout, cfg, dt), layout, cfg)
    for _ in range(8):
        dt *= 0.5
        finer = _run(_propagator(layout, cfg, dt), layout, cfg)
        change = float(np.max(np.abs(finer.trace.amplitudes - result.trace.amplitudes)))
        result = finer
        result.diagnostics["dt_change"] = change
        if change < cfg.dt_tolerance:
            return result
    raise EvolutionError("time step did not converge", {"dt": dt, "change": change})


def collective_amplitude(trace: TimeTrace, weights) -> np.ndarray:
    """Overlap ``sum_j conj(w_j) C_j(t)`` with a normalized emitter state."""
    w = np.asarray(weights, dtype=complex)
    w = w / np.linalg.norm(w)
    return trace.amplitudes @ np.conj(w)


# ---------------------------------------------------------------------------
# layouts and stationary states


def subradiant_layout(n: int, g: float, N: int, delta: float = 0.0) -> EmitterLayout:
    """Eight BCC emitters prepared in the subradiant superposition.

    Positions are ``+/-2n`` along the primitive axes and ``+/-2n(1,1,1)``,
    wrapped onto the periodic grid; amplitudes are ``+/-1/sqrt(8)`` with the
    sign pattern that nulls the collective self-energy at zero energy.
    """
    if n < 1:
        raise ValueError("n must be a positive integer")
    if not 4 * n < N / 2:
        raise ValueError(f"need 4n < N/2 for the emitters to fit (n={n}, N={N})")
    positions, signs = subradiant_geometry(n)
    ems = [
        Emitter(tuple(int(p) % N for p in pos), g, delta, s / np.sqrt(8.0))
        for pos, s in zip(positions, signs)
    ]
    return EmitterLayout(LatticeKind.BCC, N, ems)


def bound_state_wavefunction(kind, E: float, N: int) -> BathField:
    """Normalized photon cloud of a bound state at energy ``E`` outside the band.

    The emitter sits at the origin (on sublattice A for the diamond
    lattice); the amplitude at site ``n`` is proportional to
    ``sum_k exp(i k.n) / (E - omega_k)``.

    Raises
    ------
    ValueError
        If ``E`` lies inside the continuum.
    """
    kind = parse_kind(kind)
    lo, hi = BAND_EXTENTS[kind]
    if lo <= E <= hi:
        raise ValueError(f"E = {E} lies inside the band [{lo}, {hi}]")
    if kind is LatticeKind.DIAMOND:
        F = diamond_form_factor(*_fft_momenta(N))
        den = E**2 - np.abs(F) ** 2
        ck = np.stack([E / den, -np.conj(F) / den])
        f = sfft.ifftn(ck, axes=(1, 2, 3), workers=_fft_workers())
    else:
        w = dispersion_grid(kind, N, fft_order=True)
        f = sfft.ifftn(np.broadcast_to(1.0 / (E - w), (N, N, N)), workers=_fft_workers())
    f = f / np.sqrt(np.sum(np.abs(f) ** 2))
    return BathField(f, 0.0, kind)


@dataclass(frozen=True)
class CollectiveCoupling:
    g_a: float
    n_zero_modes: int


def collective_mode_coupling(N: int, g: float) -> CollectiveCoupling:
    """Coupling of a diamond A-site emitter to the zero-energy bath modes.

    Counts the momenta of the ``N**3`` grid where both bands touch zero
    energy and returns ``g sqrt(N_zero) / N**1.5``, which tends to
    ``sqrt(3) g / N`` for large even ``N``.
    """
    F = diamond_form_factor(*_fft_momenta(N))
    n0 = int(np.count_nonzero(np.abs(F) < 1e-9))
    return CollectiveCoupling(g * math.sqrt(n0) / N**1.5, n0)


@dataclass
class TransferResult:
    times: np.ndarray
    populations: np.ndarray  # (n_t, 2)
    bath: dict
    result: EvolutionResult


def two_emitter_transfer(layout: EmitterLayout, cfg: EvolutionConfig) -> TransferResult:
    """Populations of a two-emitter exchange run, with the bath per sublattice."""
    if len(layout.emitters) != 2:
        raise ValueError("two_emitter_transfer needs exactly two emitters")
    cfg = EvolutionConfig(**{**cfg.__dict__, "record_bath": True})
    res = evolve(layout, cfg)
    tr = res.trace
    pops = np.abs(tr.amplitudes) ** 2
    return TransferResult(tr.times, pops, dict(tr.contributions), res)


def dominant_frequency(times, signal) -> float:
    """Angular frequency of the strongest oscillation in a uniformly sampled signal.

    An FFT peak seeds a least-squares fit of ``a + b cos(w t + phi)``.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(signal, dtype=float)
    y0 = y - y.mean()
    dt = t[1] - t[0]
    n_pad = 16 * t.size
    spec = np.abs(np.fft.rfft(y0, n_pad))
    freqs = 2.0 * np.pi * np.fft.rfftfreq(n_pad, dt)
    w0 = freqs[1 + np.argmax(spec[1:])]

    def model(tt, a, b, w, phi):
        return a + b * np.cos(w * tt + phi)

    amp = 0.5 * (y.max() - y.min())
    best = None
    for phi0 in (0.0, 0.5 * np.pi, np.pi, 1.5 * np.pi):
        try:
            p, _ = optimize.curve_fit(model, t, y, p0=(y.mean(), amp, w0, phi0), maxfev=20000)
        except RuntimeError:
            continue
        res = np.sum((model(t, *p) - y) ** 2)
        if best is None or res < best[0]:
            best = (res, p)
    return float(abs(best[1][2])) if best is not None else float(w0)

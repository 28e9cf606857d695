"""Shared analysis helpers for the test suite."""
import itertools

import numpy as np

from qebath.bloch import LATTICE_SCALE
from qebath.lattice import lattice_info, parse_kind


def line_mask(N, directions):
    """Boolean mask of the sites ``n * d`` (periodic) for each direction, origin excluded."""
    n = np.arange(N)
    mask = np.zeros((N, N, N), dtype=bool)
    for d in directions:
        idx = (n[:, None] * np.asarray(d)) % N
        mask[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    mask[0, 0, 0] = False
    return mask


def diagonal_contrast(amplitudes):
    """Mean |C| on the four body diagonals over the mean |C| elsewhere."""
    a = np.abs(amplitudes)
    N = a.shape[-1]
    on = line_mask(N, [(1, 1, 1), (1, 1, -1), (1, -1, 1), (-1, 1, 1)])
    off = ~on
    off[0, 0, 0] = False
    return a[on].mean() / a[off].mean()


def line_family_shares(kind, amplitudes):
    """Fraction of the bath norm nearest (by angle) to each of the 13 lattice line families.

    Returns ``(families, shares)`` with families as primitive integer
    directions; the emitter site is excluded and positions are taken as
    minimum images.
    """
    fam = []
    for d in itertools.product([-1, 0, 1], repeat=3):
        d = np.array(d)
        if d.any() and d[np.nonzero(d)[0][0]] > 0:
            fam.append(d)
    fam = np.array(fam)
    prims = lattice_info(kind).real_primitives
    cart = fam @ prims
    cart /= np.linalg.norm(cart, axis=1)[:, None]
    N = amplitudes.shape[-1]
    n = np.arange(N)
    n = np.where(n >= N // 2, n - N, n)
    grid = np.stack(np.meshgrid(n, n, n, indexing="ij"), -1).reshape(-1, 3)
    x = grid @ prims
    r = np.linalg.norm(x, axis=1)
    r[r == 0] = 1.0
    label = np.argmax(np.abs((x / r[:, None]) @ cart.T), axis=1)
    w = (np.abs(amplitudes) ** 2).ravel().copy()
    w[0] = 0.0
    shares = np.bincount(label, weights=w, minlength=len(fam)) / w.sum()
    return fam, shares


def fit_cloud_exponent(profile, kappa, n_lo, n_hi):
    """Power ``beta`` in ``|C(n)| ~ A exp(-kappa n) / n**beta`` over ``n_lo..n_hi``."""
    n = np.arange(n_lo, n_hi + 1)
    y = np.log(np.abs(profile[n])) + kappa * n
    return -np.polyfit(np.log(n), y, 1)[0]


def shifted_neighbour_sum(kind, amps):
    """Apply the bath hopping matrix (all hoppings -1) to a field by periodic rolls."""
    offsets = lattice_info(kind).neighbour_offsets
    if amps.ndim == 4:
        a, b = amps
        out_a = np.zeros_like(a)
        out_b = np.zeros_like(b)
        for off in offsets:
            off = tuple(int(o) for o in off)
            out_a -= np.roll(b, tuple(-o for o in off), axis=(0, 1, 2))
            out_b -= np.roll(a, off, axis=(0, 1, 2))
        return np.stack([out_a, out_b])
    out = np.zeros_like(amps)
    for off in offsets:
        out -= np.roll(amps, tuple(-int(o) for o in off), axis=(0, 1, 2))
    return out


def free_particle_energy(kind, k):
    """Lowest free-particle band by direct search over Cartesian reciprocal shifts."""
    prims = LATTICE_SCALE[parse_kind(kind)] * lattice_info(kind).real_primitives
    recip = 2 * np.pi * np.linalg.inv(prims).T
    k_cart = np.asarray(k) @ recip / (2 * np.pi)
    shifts = np.array(list(itertools.product(range(-3, 4), repeat=3))) @ recip
    return np.min(np.sum((k_cart + shifts) ** 2, axis=1))

"""Complex special functions used by the lattice self-energies.

``elliptic_k`` evaluates the complete elliptic integral of the first kind,

    K(m) = int_0^{pi/2} dtheta / sqrt(1 - m sin^2 theta),

for complex parameter ``m`` (``m = k**2``) through the arithmetic-geometric
mean.  The principal sheet has its cut on real ``m`` in ``[1, inf)``; a real
``m > 1`` is read as ``m - i0``.  The two shifted sheets add ``-/+ 2i K(1-m)``
and are needed when a continued self-energy drags ``m`` across the cut.
"""
from __future__ import annotations

import enum

import numpy as np
from scipy import special

__all__ = [
    "EllipticSheet",
    "EllipticConvergenceError",
    "elliptic_k",
    "lambert_w",
]

_AGM_MAX_ITER = 60


class EllipticSheet(enum.Enum):
    PRINCIPAL = "principal"
    SHIFTED_PLUS = "shifted_plus"  # K(m) - 2i K(1-m)
    SHIFTED_MINUS = "shifted_minus"  # K(m) + 2i K(1-m)


class EllipticConvergenceError(ArithmeticError):
    """The AGM iteration did not converge within the iteration cap."""


def _agm(a, b):
    a = np.array(a, dtype=complex)
    b = np.array(b, dtype=complex)
    for _ in range(_AGM_MAX_ITER):
        an = 0.5 * (a + b)
        bn = np.sqrt(a * b)
        # "right" choice of root keeps the iteration on the optimal sequence
        flip = np.abs(an - bn) > np.abs(an + bn)
        bn = np.where(flip, -bn, bn)
        a, b = an, bn
        if np.all(np.abs(a - b) <= 4e-16 * np.abs(a)):
            return 0.5 * (a + b)
    raise EllipticConvergenceError("AGM did not converge")


def _k_principal(m):
    m = np.asarray(m, dtype=complex) + 0j
    if np.any(m == 1.0):
        raise ValueError("K(m) diverges at m = 1")
    if not np.all(np.isfinite(m)):
        raise ValueError("elliptic parameter must be finite")
    kp = np.sqrt(1.0 - m)
    return np.pi / (2.0 * _agm(np.ones_like(kp), kp))


def elliptic_k(m, sheet: EllipticSheet = EllipticSheet.PRINCIPAL):
    """Complete elliptic integral of the first kind on a chosen sheet.

    Parameters
    ----------
    m : complex or array_like
        Parameter ``m = k**2``.
    sheet : EllipticSheet
        ``PRINCIPAL`` is continuous off the cut ``[1, inf)``.
        ``SHIFTED_PLUS`` returns ``K(m) - 2i K(1-m)`` and ``SHIFTED_MINUS``
        returns ``K(m) + 2i K(1-m)``.

    Returns
    -------
    complex or ndarray
        Scalar for scalar input.
    """
    scalar = np.ndim(m) == 0
    val = _k_principal(m)
    if sheet is EllipticSheet.SHIFTED_PLUS:
        val = val - 2j * _k_principal(1.0 - np.asarray(m, dtype=complex))
    elif sheet is EllipticSheet.SHIFTED_MINUS:
        val = val + 2j * _k_principal(1.0 - np.asarray(m, dtype=complex))
    return complex(val) if scalar else val


def lambert_w(x: float) -> float:
    """Principal branch of the Lambert (product-log) function for real x.

    Raises
    ------
    ValueError
        If ``x < -1/e``, where the principal branch is not real.
    """
    x = float(x)
    if not np.isfinite(x):
        raise ValueError("lambert_w needs a finite argument")
    if x < -np.exp(-1.0):
        raise ValueError(f"lambert_w undefined below -1/e (got {x})")
    if x == 0.0:
        return 0.0
    w = float(special.lambertw(x, 0).real)
    if x == -np.exp(-1.0):
        return -1.0
    # Halley polish; scipy is already close, this pins the last ulps
    for _ in range(4):
        ew = np.exp(w)
        f = w * ew - x
        if f == 0.0:
            break
        wp1 = w + 1.0
        w -= f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
    return w

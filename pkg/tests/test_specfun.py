import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special

from qebath.specfun import EllipticSheet, elliptic_k, lambert_w


def mp_k(m):
    return complex(mpmath.ellipk(mpmath.mpc(m.real, m.imag)))


@given(st.floats(-50.0, 0.999, allow_nan=False))
def test_real_parameter_matches_scipy(m):
    assert elliptic_k(m).real == pytest.approx(special.ellipk(m), rel=1e-13)
    assert elliptic_k(m).imag == pytest.approx(0.0, abs=1e-14)


@given(st.complex_numbers(max_magnitude=200.0, allow_nan=False, allow_infinity=False))
def test_complex_parameter_matches_mpmath_off_the_cut(m):
    if abs(m.imag) < 1e-6 and m.real >= 0.999 or abs(m - 1) < 1e-6:
        return
    assert elliptic_k(m) == pytest.approx(mp_k(m), rel=1e-12)


@pytest.mark.parametrize("x", [1.5, 3.0, 10.0, 120.0])
def test_real_parameter_beyond_one_is_read_below_the_cut(x):
    assert elliptic_k(x) == pytest.approx(mp_k(complex(x, -1e-13)), rel=1e-9)


@given(st.floats(1.05, 40.0))
def test_shifted_sheet_continues_across_the_cut(x):
    # crossing [1, inf) from above lands continuously on the shifted sheet
    above = elliptic_k(complex(x, 1e-12))
    below = elliptic_k(complex(x, -1e-12), EllipticSheet.SHIFTED_MINUS)
    jump = elliptic_k(complex(x, -1e-12))
    assert abs(below - above) < 1e-8 * abs(above)
    assert abs(jump - above) > 1e-3 * abs(above)


def test_shifted_sheets_differ_by_complementary_integral():
    m = 0.3 + 0.4j
    kc = elliptic_k(1 - m)
    assert elliptic_k(m, EllipticSheet.SHIFTED_PLUS) == pytest.approx(elliptic_k(m) - 2j * kc)
    assert elliptic_k(m, EllipticSheet.SHIFTED_MINUS) == pytest.approx(elliptic_k(m) + 2j * kc)


def test_array_input_keeps_shape_and_rejects_the_pole():
    m = np.array([[0.1, 0.2], [0.3 + 1j, -4.0]])
    assert elliptic_k(m).shape == (2, 2)
    with pytest.raises(ValueError):
        elliptic_k(1.0)


def newton_w(x):
    """Independent oracle: Newton on w exp(w) - x from a safe start."""
    w = np.log1p(x) if x > -0.3 else -1.0 + np.sqrt(2 * (1 + np.e * x))
    for _ in range(100):
        step = (w * np.exp(w) - x) / (np.exp(w) * (w + 1))
        w -= step
        if abs(step) < 1e-16 * max(1.0, abs(w)):
            break
    return w


@given(st.floats(-np.exp(-1.0) + 1e-6, 1e6, allow_nan=False))
def test_lambert_w_inverts_w_exp_w(x):
    w = lambert_w(x)
    assert w >= -1.0
    assert w * np.exp(w) == pytest.approx(x, rel=1e-13, abs=1e-15)


@pytest.mark.parametrize("x", [-0.3, -0.01, 0.5, 1.0, 7.0, 1e3])
def test_lambert_w_matches_newton_oracle(x):
    assert lambert_w(x) == pytest.approx(newton_w(x), rel=1e-14)


def test_lambert_w_special_points_and_domain():
    assert lambert_w(0.0) == 0.0
    assert lambert_w(-np.exp(-1.0)) == -1.0
    assert lambert_w(np.e) == pytest.approx(1.0, rel=1e-15)
    with pytest.raises(ValueError):
        lambert_w(-0.5)
    with pytest.raises(ValueError):
        lambert_w(float("nan"))

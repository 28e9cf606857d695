import numpy as np
import pytest
from hypothesis import given, strategies as st

from qebath.lattice import BAND_EXTENTS, LatticeKind, dispersion_grid, dos_histogram, parse_kind
from qebath.selfenergy import (
    DETOUR_ENERGIES,
    CollectiveMode,
    CollectiveQuery,
    NonAnalyticPointError,
    SheetRegion,
    markov_params,
    pair_coupling,
    region_at,
    regions,
    sheet_interval,
    sigma_analytic,
    sigma_brute,
    sigma_collective,
    sigma_derivative,
    sigma_expansion,
    subradiant_geometry,
)

KINDS = list(LatticeKind)
SECOND_MOMENT = {LatticeKind.CS: 6, LatticeKind.BCC: 8, LatticeKind.FCC: 12, LatticeKind.DIAMOND: 4}


def lattice_sum(kind, z, N):
    """Independent oracle: explicit mode sum of 1/(z - omega) (A site for diamond)."""
    w = dispersion_grid(kind, N)
    if parse_kind(kind) is LatticeKind.DIAMOND:
        a = w[1]
        return np.mean(z / (z**2 - a**2))
    return np.mean(1.0 / (z - w))


@pytest.mark.parametrize("kind", KINDS)
@given(x=st.floats(-14.0, 14.0), y=st.floats(1.0, 3.0), lower=st.booleans())
def test_physical_sheet_matches_mode_sum_off_axis(kind, x, y, lower):
    z = complex(x, -y if lower else y)
    # finite-size error of the sum decays like exp(-c N y); at y >= 1, N = 96 is exact to ~1e-12
    ref = lattice_sum(kind, z, 96)
    assert sigma_analytic(kind, z) == pytest.approx(ref, rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_real_axis_outside_band_matches_mode_sum(kind):
    lo, hi = BAND_EXTENTS[kind]
    for e in (lo - 1.0, hi + 1.0, hi + 7.0):
        assert sigma_analytic(kind, e) == pytest.approx(sigma_brute(kind, e, 64), rel=1e-6)
        assert sigma_analytic(kind, e).imag == 0.0


@pytest.mark.parametrize("kind", KINDS)
def test_brute_sum_agrees_with_independent_oracle(kind):
    z = 0.7 + 0.3j
    assert sigma_brute(kind, z, 24, g=0.5) == pytest.approx(0.25 * lattice_sum(kind, z, 24), rel=1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_far_field_follows_moment_expansion(kind):
    z = 40.0 + 7.0j
    w = dispersion_grid(kind, 32)
    w = np.concatenate([np.ravel(w[0]), np.ravel(w[1])]) if parse_kind(kind) is LatticeKind.DIAMOND else np.ravel(w)
    # moments below order 32 are exact on a 32^3 grid; |omega/z| <= 0.3 bounds the tail
    series = sum(np.mean(w**n) / z ** (n + 1) for n in range(26))
    assert np.mean(w**2) == SECOND_MOMENT[parse_kind(kind)]
    assert sigma_analytic(kind, z) == pytest.approx(series, rel=1e-10)


@pytest.mark.parametrize("kind", KINDS)
@given(x=st.floats(-15.0, 15.0), y=st.floats(1e-3, 4.0))
def test_schwarz_reflection_on_physical_sheet(kind, x, y):
    z = complex(x, y)
    assert sigma_analytic(kind, np.conj(z)) == pytest.approx(np.conj(sigma_analytic(kind, z)), rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("kind", KINDS)
def test_g_scaling(kind):
    z = 1.3 + 0.2j
    assert sigma_analytic(kind, z, g=0.3) == pytest.approx(0.09 * sigma_analytic(kind, z), rel=1e-13)


def inner_points(kind):
    out = []
    for r in regions(kind):
        if r.is_outer:
            continue
        lo, hi = r.interval
        out += [(r, lo + f * (hi - lo)) for f in (0.2, 0.5, 0.8)]
    return out


@pytest.mark.parametrize("kind", KINDS)
def test_continued_sheets_attach_to_upper_half_plane(kind):
    # crossing the band from above lands on the region's continuation
    for r, x in inner_points(kind):
        above = sigma_analytic(kind, x)
        below = sigma_analytic(kind, x, region=r)
        assert below == pytest.approx(above, rel=1e-7, abs=1e-9), (r, x)
        assert above.imag < 0


@pytest.mark.parametrize("kind", KINDS)
def test_continued_sheets_are_analytic_in_lower_half_plane(kind):
    # mean-value property on small circles around points below the axis
    th = 2 * np.pi * np.arange(64) / 64
    for r, x in inner_points(kind):
        z0 = complex(x, -0.05)
        rad = 0.02
        circle = sigma_analytic(kind, z0 + rad * np.exp(1j * th), region=r)
        assert np.mean(circle) == pytest.approx(sigma_analytic(kind, z0, region=r), rel=1e-9)


def test_cs_middle_regions_form_one_sheet():
    for y in (1e-3, 0.1):
        left = sigma_analytic("cs", complex(-1e-9, -y), region=3)
        right = sigma_analytic("cs", complex(1e-9, -y), region=4)
        assert left == pytest.approx(right, rel=1e-6)
    assert sheet_interval(SheetRegion(LatticeKind.CS, 3)) == (-2.0, 2.0)
    assert sheet_interval(SheetRegion(LatticeKind.BCC, 2)) == (-8.0, 0.0)


@pytest.mark.parametrize("kind", KINDS)
def test_detour_energies_are_rejected(kind):
    for e in DETOUR_ENERGIES[parse_kind(kind)]:
        if parse_kind(kind) is LatticeKind.DIAMOND and e == 0.0:
            continue
        with pytest.raises(NonAnalyticPointError):
            sigma_analytic(kind, e)


def test_diamond_vanishes_at_singular_gap():
    assert sigma_analytic("diamond", 0.0) == 0.0
    assert sigma_analytic("diamond", 0.0, region=3) == 0.0


@given(x=st.floats(-3.0, 3.0), y=st.floats(0.05, 2.0))
def test_diamond_is_fcc_green_function_in_disguise(x, y):
    z = complex(x, y)
    assert sigma_analytic("diamond", z) == pytest.approx(-z * sigma_analytic("fcc", 4 - z * z), rel=1e-10)


@pytest.mark.parametrize("kind", KINDS)
def test_derivative_matches_mode_sum_derivative(kind):
    z = 0.9 + 1.2j
    w = dispersion_grid(kind, 96)
    if parse_kind(kind) is LatticeKind.DIAMOND:
        a2 = w[1] ** 2
        ref = np.mean(-(z**2 + a2) / (z**2 - a2) ** 2)
    else:
        ref = np.mean(-1.0 / (z - w) ** 2)
    assert sigma_derivative(kind, z) == pytest.approx(ref, rel=1e-7)


def test_region_lookup():
    assert region_at("bcc", -3.0) == SheetRegion(LatticeKind.BCC, 2)
    assert region_at("cs", 7.0).is_outer
    assert SheetRegion(LatticeKind.CS, 3).label == "III"
    with pytest.raises(NonAnalyticPointError):
        region_at("fcc", 4.0)
    with pytest.raises(ValueError):
        SheetRegion(LatticeKind.FCC, 6)


# literature constants of the simple cubic bath
def test_cs_markov_rate_at_band_centre():
    assert -2 * sigma_analytic("cs", 0.0).imag == pytest.approx(0.89, abs=0.01)


def test_cs_lamb_shift_at_inner_kinks():
    # magnitude 0.321 g^2/J; the real part is odd in E and positive at +2J
    assert sigma_analytic("cs", 2.0 + 1e-12j).real == pytest.approx(0.321, abs=0.003)
    assert sigma_analytic("cs", -2.0 + 1e-12j).real == pytest.approx(-0.321, abs=0.003)


def test_bcc_centre_expansion_matches_continued_sheets():
    f = sigma_expansion("bcc", "bcc-center")
    for y in (1e-2, 1e-3):
        z = complex(1e-9, -y)
        for r in (2, 3):
            assert f(z) == pytest.approx(sigma_analytic("bcc", z, region=r), rel=1e-6)


def test_fcc_upper_edge_expansion():
    f = sigma_expansion("fcc", "fcc-upper-edge")
    # the expansion is written for 4J + x - i0+, the mirror image of the physical value
    for x in (1e-4, -1e-4, 1e-6, -1e-6):
        assert np.conj(f(x)) == pytest.approx(sigma_analytic("fcc", 4 + x), rel=2e-4)


def test_diamond_gap_expansion():
    f = sigma_expansion("diamond", "diamond-gap")
    for e in (1e-3, -1e-3, 1e-4):
        assert f(e) == pytest.approx(sigma_analytic("diamond", e), rel=1e-4)
    with pytest.raises(ValueError):
        sigma_expansion("cs", "diamond-gap")


@pytest.mark.parametrize("kind, e", [("cs", 0.5), ("cs", -4.0), ("bcc", 3.0), ("fcc", -6.0), ("diamond", 3.0)])
def test_markov_params_read_sigma_and_histogram(kind, e):
    p = markov_params(kind, e, g=0.5, N=32, n_bins=40)
    h = dos_histogram(kind, 32, 40)
    i = np.searchsorted(h.bin_edges, e, side="right") - 1
    assert p.rate == pytest.approx(-sigma_analytic(kind, e, g=0.5).imag * 2)
    assert p.rate_fgr == pytest.approx(2 * np.pi * 0.25 * h.density[i])
    assert p.shift == pytest.approx(sigma_analytic(kind, e, g=0.5).real)


@pytest.mark.parametrize("kind", KINDS)
def test_integrated_golden_rule_rate_counts_modes(kind):
    # int Gamma_M / (2 pi g^2) over a window equals the fraction of modes in it;
    # pointwise histograms are too noisy for a tight check, integrals are not
    w = dispersion_grid(kind, 128)
    w = np.concatenate([np.ravel(w[0]), np.ravel(w[1])]) if parse_kind(kind) is LatticeKind.DIAMOND else np.ravel(w)
    x, wq = np.polynomial.legendre.leggauss(200)
    for r in regions(kind):
        if r.is_outer:
            continue
        lo, hi = r.interval
        # stay clear of the band edges and kinks, where the integrand is singular
        a, b = lo + 0.15 * (hi - lo), hi - 0.15 * (hi - lo)
        e = 0.5 * (a + b) + 0.5 * (b - a) * x
        integral = 0.5 * (b - a) * np.sum(wq * -sigma_analytic(kind, e).imag / np.pi)
        assert integral == pytest.approx(np.mean((w >= a) & (w < b)), abs=1e-3)


def test_markov_rate_vanishes_outside_band():
    p = markov_params("fcc", 5.0, g=1.0, N=32)
    assert p.rate == 0.0 and p.rate_fgr == 0.0


def test_pair_modes_split_single_emitter_self_energy():
    z = 5.0
    s_plus = sigma_collective("fcc", CollectiveQuery(CollectiveMode.SYM_PAIR, (1, 0, 0)), z, 32)
    s_minus = sigma_collective("fcc", CollectiveQuery(CollectiveMode.ANTI_PAIR, (1, 0, 0)), z, 32)
    s_e = sigma_brute("fcc", z, 32)
    s_12 = pair_coupling("fcc", z, 32, (1, 0, 0))
    assert s_plus + s_minus == pytest.approx(2 * s_e)
    assert s_plus - s_minus == pytest.approx(2 * s_12)
    # oracle: explicit sum with the phase factor
    w = dispersion_grid("fcc", 32)
    from qebath.lattice import momentum_grid

    k = momentum_grid(32)
    ph = np.cos(k)[:, None, None] * np.ones((1, 32, 32))
    assert s_12 == pytest.approx(np.mean(ph / (z - w)), rel=1e-12)


@pytest.mark.parametrize("n", [1, 2])
def test_subradiant_state_decouples_at_zero_energy(n):
    positions, signs = subradiant_geometry(n)
    assert len(positions) == 8 and np.all(np.abs(signs) == 1)
    # the eight sites come in inversion pairs with opposite sign
    for p, s in zip(positions[:4], signs[:4]):
        j = np.nonzero(np.all(positions == -p, axis=1))[0][0]
        assert signs[j] == -s
    val = sigma_collective("bcc", CollectiveQuery(CollectiveMode.SUBRADIANT8, n=n), 0.0, 16 * n, g=1.0)
    assert abs(val) < 1e-12
    # but it does couple away from zero
    assert abs(sigma_collective("bcc", CollectiveQuery(CollectiveMode.SUBRADIANT8, n=n), 1.0 + 0.5j, 16 * n)) > 1e-3


def test_brute_sum_rejects_in_band_real_energy():
    with pytest.raises(ValueError):
        sigma_brute("cs", 1.0, 32)
    with pytest.raises(ValueError):
        sigma_brute("cs", 1.0 + 0.1j, 8)

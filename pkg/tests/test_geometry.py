"""Geometry tests: exact radii, bounds, samplers, Monte Carlo.

Oracles are kept independent of the implementation under test: log-gamma is
checked against the C library's lgamma, the exact 2-D ratio against adaptive
quadrature, and the Chernoff rate against a from-scratch golden-section
search.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from normclash import geometry as geo
from normclash.rng import substream


# ---------------------------------------------------------------------------
# log-gamma
# ---------------------------------------------------------------------------

def test_log_gamma_matches_libm():
    xs = np.concatenate([
        np.linspace(0.1, 2.0, 97),
        np.linspace(2.0, 19.99, 113),
        np.linspace(20.0, 200.0, 77),
        np.geomspace(200.0, 2.0e5, 60),
    ])
    for x in xs:
        mine = geo.log_gamma(float(x))
        ref = math.lgamma(float(x))
        assert mine == pytest.approx(ref, rel=1e-12, abs=1e-13)


def test_log_gamma_rejects_nonpositive():
    for bad in (0.0, -1.0, math.nan):
        with pytest.raises(ValueError):
            geo.log_gamma(bad)


# ---------------------------------------------------------------------------
# Ball volumes
# ---------------------------------------------------------------------------

def test_linf_unit_square_volume():
    spec = geo.BallSpec(norm="linf", radius=1.0, dim=2)
    assert geo.ball_log_volume(spec) == pytest.approx(math.log(4.0), abs=1e-14)


def test_l2_unit_disk_volume():
    spec = geo.BallSpec(norm="l2", radius=1.0, dim=2)
    assert geo.ball_log_volume(spec) == pytest.approx(math.log(math.pi), abs=1e-14)


def test_l2_volume_d784_against_libm_oracle():
    spec = geo.BallSpec(norm="l2", radius=1.0, dim=784)
    ref = 0.5 * 784 * math.log(math.pi) - math.lgamma(0.5 * 784 + 1.0)
    assert geo.ball_log_volume(spec) == pytest.approx(ref, rel=1e-10)


def test_ball_spec_validation():
    with pytest.raises(ValueError):
        geo.BallSpec(norm="l1", radius=1.0, dim=2)
    with pytest.raises(ValueError):
        geo.BallSpec(norm="l2", radius=0.0, dim=2)
    with pytest.raises(ValueError):
        geo.BallSpec(norm="l2", radius=1.0, dim=0)
    with pytest.raises(ValueError):
        geo.BallSpec(norm="l2", radius=1.0, dim=3, center=np.zeros(2))


# ---------------------------------------------------------------------------
# Equal-volume radius
# ---------------------------------------------------------------------------

def test_equal_volume_radius_d1_exact():
    assert geo.equal_volume_radius(1) == 1.0


def test_equal_volume_radius_d2():
    assert geo.equal_volume_radius(2) == pytest.approx(2.0 / math.sqrt(math.pi), abs=1e-12)
    assert geo.equal_volume_radius(2) == pytest.approx(1.1283791671, abs=1e-9)


def test_equal_volume_radius_d784():
    r = geo.equal_volume_radius(784)
    ref = (2.0 / math.sqrt(math.pi)) * math.exp(math.lgamma(0.5 * 784 + 1.0) / 784)
    assert r == pytest.approx(ref, rel=1e-12)
    assert 13.61 < r < 13.63


@pytest.mark.parametrize("d", list(range(1, 201)) + [784, 3072, 150528])
def test_volume_identity(d):
    r2 = geo.equal_volume_radius(d)
    v_l2 = geo.ball_log_volume(geo.BallSpec(norm="l2", radius=r2, dim=d))
    v_inf = geo.ball_log_volume(geo.BallSpec(norm="linf", radius=1.0, dim=d))
    assert abs(v_l2 - v_inf) < 1e-9


@settings(max_examples=60, deadline=None)
@given(d=st.integers(min_value=1, max_value=500),
       scale=st.floats(min_value=1e-3, max_value=1e3))
def test_volume_pairing_commutes_with_dilation(d, scale):
    r2 = scale * geo.equal_volume_radius(d)
    v_l2 = geo.ball_log_volume(geo.BallSpec(norm="l2", radius=r2, dim=d))
    v_inf = geo.ball_log_volume(geo.BallSpec(norm="linf", radius=scale, dim=d))
    assert abs(v_l2 - v_inf) < 1e-8


# ---------------------------------------------------------------------------
# Stirling form
# ---------------------------------------------------------------------------

def test_stirling_constant():
    assert geo.stirling_radius(1) == pytest.approx(0.4839414490, abs=1e-9)


def test_stirling_radius_d784():
    assert geo.stirling_radius(784) == pytest.approx(13.550361, abs=1e-3)
    gap = abs(geo.stirling_radius(784) - geo.equal_volume_radius(784))
    assert gap / geo.equal_volume_radius(784) < 0.01


def test_stirling_ratio_converges_monotonically():
    ratios = [geo.stirling_radius(d) / geo.equal_volume_radius(d)
              for d in (10, 100, 1000, 10_000)]
    for a, b in zip(ratios, ratios[1:]):
        assert abs(1.0 - b) < abs(1.0 - a)
    # convergence is logarithmic: the gap at d = 1e4 is about ln(pi d)/(2d)
    assert ratios[-1] == pytest.approx(1.0, abs=1e-3)


# ---------------------------------------------------------------------------
# Concentration bounds
# ---------------------------------------------------------------------------

def test_hoeffding_d2_value_and_flag():
    est = geo.hoeffding_bound(2)
    expected = math.exp(-((4.0 / math.pi - 2.0 / 3.0) ** 2) / 2.0)
    assert est.value == pytest.approx(expected, rel=1e-12)
    assert est.value == pytest.approx(0.8320, abs=5e-4)
    assert not est.applicable  # threshold sits above the mean in d=2


def test_hoeffding_crossover_is_computed():
    # r2(d)^2 crosses below d/3 between d=9 and d=10; the flag must follow
    # the computed inequality, not a hard-coded dimension.
    assert not geo.hoeffding_bound(9).applicable
    assert geo.hoeffding_bound(10).applicable
    for d in (12, 50, 784):
        assert geo.hoeffding_bound(d).applicable


def test_hoeffding_d784():
    est = geo.hoeffding_bound(784)
    r2sq = (2.0 / math.sqrt(math.pi) * math.exp(math.lgamma(393.0) / 784)) ** 2
    expected = math.exp(-((r2sq - 784.0 / 3.0) ** 2) / 784.0)
    assert est.value == pytest.approx(expected, rel=1e-10)
    assert -3.3 < est.log10_value < -3.1


def test_hoeffding_is_at_most_one():
    for d in range(1, 60):
        assert 0.0 < geo.hoeffding_bound(d).value <= 1.0


def test_asymptotic_constant_and_d2():
    est = geo.asymptotic_bound(2)
    assert est.detail["rate"] == pytest.approx(0.009827551, abs=1e-8)
    assert est.value == pytest.approx(0.9805, abs=1e-3)
    assert est.log10_value == pytest.approx(-0.008536, abs=1e-5)


def test_asymptotic_approaches_one_at_small_d():
    values = [geo.asymptotic_bound(d).value for d in (3, 2, 1)]
    assert values == sorted(values)
    assert values[-1] > 0.99


def _golden_section_rate(a, lo=1e-9, hi=60.0, iters=200):
    """Independent Cramer-rate oracle: golden-section on s = -lambda."""
    def f(s):
        m = 0.5 * math.sqrt(math.pi / s) * math.erf(math.sqrt(s))
        return s * a + math.log(m)

    gr = (math.sqrt(5.0) - 1.0) / 2.0
    c = hi - gr * (hi - lo)
    d = lo + gr * (hi - lo)
    for _ in range(iters):
        if f(c) < f(d):
            hi = d
        else:
            lo = c
        c = hi - gr * (hi - lo)
        d = lo + gr * (hi - lo)
    s = 0.5 * (lo + hi)
    return -f(s), -s


def test_chernoff_rate_at_limit_threshold():
    a = 2.0 / (math.pi * math.e)
    rate, lam = geo.chernoff_rate(a)
    oracle_rate, oracle_lam = _golden_section_rate(a)
    assert rate == pytest.approx(oracle_rate, rel=1e-8)
    assert lam == pytest.approx(oracle_lam, abs=1e-5)
    assert rate == pytest.approx(0.0605239, abs=1e-5)
    assert lam == pytest.approx(-1.29102, abs=1e-3)


def test_chernoff_rate_zero_at_mean():
    rate, lam = geo.chernoff_rate(1.0 / 3.0)
    assert rate == 0.0
    assert lam == 0.0


def test_chernoff_d784():
    est = geo.chernoff_bound(784)
    a = geo.equal_volume_radius(784) ** 2 / 784
    oracle_rate, _ = _golden_section_rate(a)
    assert est.log10_value == pytest.approx(-oracle_rate * 784 / math.log(10.0), rel=1e-7)
    assert -20.1 < est.log10_value < -19.1
    assert est.detail["lambda"] == pytest.approx(-1.2547, abs=1e-3)


def test_chernoff_requires_d12():
    with pytest.raises(ValueError):
        geo.chernoff_bound(11)


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------

def test_l2_samples_stay_inside_ball():
    rng = substream(42, 0)
    d, r = 3, 2.5
    for _ in range(1_000_000):
        x = geo.sample_uniform_l2(d, r, rng)
        assert x @ x <= r * r * (1.0 + 1e-12)


def test_linf_second_moment():
    rng = substream(43, 0)
    n, d = 100_000, 4
    acc = 0.0
    for _ in range(n):
        x = geo.sample_uniform_linf(d, 1.0, rng)
        acc += float(np.sum(x * x))
    mean = acc / (n * d)
    sigma = math.sqrt((1.0 / 5.0 - 1.0 / 9.0) / (n * d))
    assert abs(mean - 1.0 / 3.0) < 3.0 * sigma


def test_l2_radius_moment():
    rng = substream(44, 0)
    n, d, r = 100_000, 6, 1.7
    acc = 0.0
    for _ in range(n):
        x = geo.sample_uniform_l2(d, r, rng)
        acc += float(x @ x)
    mean = acc / n
    expected = r * r * d / (d + 2.0)
    var = r ** 4 * (d / (d + 4.0) - (d / (d + 2.0)) ** 2)
    assert abs(mean - expected) < 3.0 * math.sqrt(var / n)


# ---------------------------------------------------------------------------
# Monte Carlo estimation
# ---------------------------------------------------------------------------

def test_mc_d1_equal_volume_is_exactly_one():
    est = geo.mc_intersection_ratio(1, geo.equal_volume_radius(1), 1.0, 10_000, seed=5)
    assert est.value == 1.0


def test_mc_d2_matches_exact_oracle():
    exact = geo.exact_ratio_2d(geo.equal_volume_radius(2))
    for seed in (1, 2):
        est = geo.mc_intersection_ratio(2, geo.equal_volume_radius(2), 1.0,
                                        1_000_000, seed=seed)
        assert abs(est.value - exact) <= 3.0 * est.stderr


def test_mc_deterministic_and_thread_invariant():
    a = geo.mc_intersection_ratio(5, 1.2, 1.0, 50_000, seed=9)
    b = geo.mc_intersection_ratio(5, 1.2, 1.0, 50_000, seed=9)
    c = geo.mc_intersection_ratio(5, 1.2, 1.0, 50_000, seed=9, threads=4)
    assert a.value == b.value == c.value
    assert a.stderr == b.stderr


def test_mc_rejects_tiny_budget():
    with pytest.raises(ValueError):
        geo.mc_intersection_ratio(2, 1.0, 1.0, 100, seed=0)


def test_mc_zero_hits_reports_upper_bound():
    # L2 radius so small that no sample of the unit cube can land inside.
    est = geo.mc_intersection_ratio(8, 1e-9, 1.0, 10_000, seed=3)
    assert est.value == 0.0
    assert est.upper95 == pytest.approx(3.0 / 10_000)


# ---------------------------------------------------------------------------
# Exact 2-D ratio
# ---------------------------------------------------------------------------

def test_exact_2d_inscribed_and_circumscribed():
    assert geo.exact_ratio_2d(1.0) == pytest.approx(math.pi / 4.0, abs=1e-15)
    assert geo.exact_ratio_2d(math.sqrt(2.0)) == 1.0
    assert geo.exact_ratio_2d(5.0) == 1.0


def test_exact_2d_equal_volume_radius_against_quadrature():
    r = 2.0 / math.sqrt(math.pi)
    via_formula = geo.exact_ratio_2d(r)
    f = lambda t: min(1.0, math.sqrt(max(r * r - t * t, 0.0)))
    area, err = integrate.quad(f, -1.0, 1.0, limit=200)
    assert via_formula == pytest.approx(2.0 * area / 4.0, abs=1e-7)
    assert via_formula == pytest.approx(0.9094540312, abs=1e-9)


@settings(max_examples=80, deadline=None)
@given(r=st.floats(min_value=0.05, max_value=2.0))
def test_exact_2d_monotone_in_radius(r):
    assert geo.exact_ratio_2d(r) <= geo.exact_ratio_2d(r * 1.05) + 1e-12


# ---------------------------------------------------------------------------
# Dimension table
# ---------------------------------------------------------------------------

def test_dimension_table_structure_and_mc_budget_rule():
    rows = geo.dimension_table([2, 784, 3072, 150528], mc_budget=100_000,
                               seed=42, mc_max_dim=100)
    assert [r.dim for r in rows] == [2, 784, 3072, 150528]
    assert rows[0].mc is not None
    for r in rows[1:]:
        assert r.mc is None
    assert rows[0].chernoff is None
    for r in rows[1:]:
        assert r.chernoff is not None
    assert rows[0].asymptotic.log10_value == pytest.approx(-0.0085, abs=5e-4)


def test_dimension_table_bounds_decrease_for_d_ge_12():
    dims = [12, 20, 50, 100, 200, 784]
    rows = geo.dimension_table(dims, mc_budget=10_000, seed=0, mc_max_dim=0)
    for a, b in zip(rows, rows[1:]):
        assert b.hoeffding.log10_value <= a.hoeffding.log10_value
        assert b.asymptotic.log10_value <= a.asymptotic.log10_value
        assert b.chernoff.log10_value <= a.chernoff.log10_value


def test_dimension_table_rejects_empty():
    with pytest.raises(ValueError):
        geo.dimension_table([])

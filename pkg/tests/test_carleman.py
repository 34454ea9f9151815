import numpy as np
import pytest
from scipy.integrate import quad

from mfgcoef.carleman import (
    CarlemanParams,
    bound_constant,
    conventional_vs_new_ratio,
    random_profile,
    ratio_log_slope,
    run_certification,
    validate_exponent,
    volterra_carleman_check,
)


def test_exponent_validation():
    assert validate_exponent(0.2).denominator == 5
    assert validate_exponent(1.0 / 7.0).numerator == 1
    for bad in (0.25, 0.4, 1.0 / 3.0, 0.35, -0.2, 2.0 / 5.0):
        with pytest.raises(ValueError):
            validate_exponent(bad)


def test_weight_peak_location_and_value():
    p = CarlemanParams(lam=3.0, alpha=0.2, b=2.0, horizon=1.0)
    x1 = np.linspace(1.0, 2.0, 41)
    t = np.linspace(0.0, 1.0, 41)
    w = p.weight(x1[:, None], t[None, :])
    peak = np.unravel_index(np.argmax(w), w.shape)
    assert x1[peak[0]] == 2.0
    assert t[peak[1]] == 0.5
    assert w.max() == pytest.approx(np.exp(2.0 * 3.0 * 4.0), rel=1e-12)
    assert w.max() == pytest.approx(p.max_over_slab(), rel=1e-12)


def test_weight_monotone_in_each_direction():
    p = CarlemanParams(lam=2.0, alpha=0.2, b=2.0, horizon=1.0)
    x1 = np.linspace(1.0, 2.0, 21)
    w = p.weight(x1, 0.5)
    assert np.all(np.diff(w) > 0)
    t = np.linspace(0.5, 1.0, 21)
    w = p.weight(1.5, t)
    assert np.all(np.diff(w) < 0)
    # symmetric about the temporal midpoint
    assert p.weight(1.5, 0.2) == pytest.approx(p.weight(1.5, 0.8), rel=1e-13)


def test_balanced_log_weight_never_positive():
    p = CarlemanParams(lam=100.0, alpha=0.2, b=2.0, horizon=1.0)
    x1 = np.linspace(1.0, 2.0, 31)
    t = np.linspace(0.0, 1.0, 31)
    lw = p.balanced_log_weight(x1[:, None], t[None, :])
    assert lw.max() <= 0.0
    assert lw.max() == pytest.approx(0.0, abs=1e-12)
    # no overflow at large lam: the balanced weight is a plain probability-like factor
    assert np.all(np.isfinite(np.exp(lw)))


def test_bound_constant_closed_form():
    # d^((1-3a)/2) / (sqrt(2) (1+a)^(3/2)) at d = 0.5, a = 1/5
    expect = 0.5 ** (0.2) / (np.sqrt(2.0) * 1.2**1.5)
    assert bound_constant(0.5, 0.2) == pytest.approx(expect, rel=1e-14)


def test_check_against_quad_oracle_constant_profile():
    # independent route: adaptive quad on the two integrands for f = 1
    lam, alpha, d = 1.0, 0.2, 0.5
    knots = np.linspace(-d, d, 17)
    r = volterra_carleman_check(knots, np.ones(17), lam, alpha)
    w = lambda t: np.exp(-2.0 * lam * abs(t) ** (1.0 + alpha))
    lhs_oracle = 2.0 * quad(lambda t: w(t) * t * t, 0.0, d, epsabs=1e-13)[0]
    rhs_int_oracle = 2.0 * quad(w, 0.0, d, epsabs=1e-13)[0]
    assert r.lhs == pytest.approx(lhs_oracle, rel=1e-7)
    assert r.rhs == pytest.approx(lam**-1.5 * bound_constant(d, alpha) * rhs_int_oracle, rel=1e-7)
    assert r.holds and r.converged


def test_check_against_quad_oracle_linear_profile():
    lam, alpha, d = 4.0, 0.2, 0.5
    knots = np.linspace(-d, d, 17)
    r = volterra_carleman_check(knots, knots.copy(), lam, alpha)
    w = lambda t: np.exp(-2.0 * lam * abs(t) ** (1.0 + alpha))
    # inner integral of f(t) = t from 0 is t^2/2
    lhs_oracle = 2.0 * quad(lambda t: w(t) * (t * t / 2.0) ** 2, 0.0, d, epsabs=1e-14)[0]
    assert r.lhs == pytest.approx(lhs_oracle, rel=1e-7)
    assert r.holds


def test_inequality_holds_across_lambda_range():
    knots = np.linspace(-0.5, 0.5, 17)
    rng = np.random.default_rng(42)
    values = rng.uniform(-1.0, 1.0, 17)
    for lam in (0.5, 1.0, 3.0, 10.0, 30.0, 100.0):
        r = volterra_carleman_check(knots, values, lam, 0.2)
        assert r.converged
        assert r.holds, f"violated at lam={lam}: lhs={r.lhs}, rhs={r.rhs}"


def test_margin_never_reverses_as_lambda_grows():
    knots = np.linspace(-0.5, 0.5, 17)
    rng = np.random.default_rng(3)
    values = rng.uniform(-1.0, 1.0, 17)
    results = [volterra_carleman_check(knots, values, lam, 0.2) for lam in (1, 2, 4, 8, 16)]
    assert all(r.holds for r in results)


def test_certification_suite_seeded():
    results = run_certification(seed=123, n_trials=10, lambdas=(1.0, 8.0))
    assert len(results) == 20
    assert all(r.status == "holds" for r in results)
    again = run_certification(seed=123, n_trials=10, lambdas=(1.0, 8.0))
    assert [r.lhs for r in results] == [r.lhs for r in again]


def test_ratio_closed_form_and_slope():
    c = bound_constant(0.5, 0.2)
    assert conventional_vs_new_ratio(1.0, 0.5, 0.2) == pytest.approx(c, rel=1e-14)
    assert conventional_vs_new_ratio(100.0, 0.5, 0.2) == pytest.approx(c / 10.0, rel=1e-14)
    assert ratio_log_slope((1.0, 2.0, 4.0, 8.0)) == pytest.approx(-0.5, abs=1e-12)


def test_ratio_dips_below_one_for_large_lambda():
    c = bound_constant(0.5, 0.2)
    lam_star = c * c
    assert conventional_vs_new_ratio(lam_star * 1.01, 0.5, 0.2) < 1.0
    assert conventional_vs_new_ratio(lam_star * 0.99, 0.5, 0.2) > 1.0


def test_profile_input_validation():
    with pytest.raises(ValueError):
        volterra_carleman_check(np.array([0.0, 0.5]), np.ones(2), 1.0, 0.2)
    with pytest.raises(ValueError):
        volterra_carleman_check(np.linspace(-0.5, 0.5, 5), np.ones(5), 0.0, 0.2)
    knots, values = random_profile(np.random.default_rng(0), 0.5)
    with pytest.raises(ValueError):
        volterra_carleman_check(knots, values, 1.0, 0.25)

import math

import numpy as np
import pytest
from scipy import integrate, stats

from heiscouple import analysis as A
from heiscouple.coupling import CouplingOutcome, PreconditionError
from heiscouple.heis_core import IDENTITY, GroupPoint
from heiscouple.rng import SeedSpec


def _outcome(tau, censored=False):
    return CouplingOutcome(tau, tau, 0.0, 0, SeedSpec(0), tau_censored=censored)


# -- tails and fits ---------------------------------------------------------------

def test_estimate_tail_examples():
    zero = A.estimate_tail([_outcome(0.0)] * 10, [0.5, 1.0])
    np.testing.assert_array_equal(zero.survival, [0.0, 0.0])
    cens = A.estimate_tail([_outcome(100.0, True)] * 10, [1.0, 100.0])
    np.testing.assert_array_equal(cens.survival, [1.0, 1.0])
    mixed = A.estimate_tail([_outcome(1.0), _outcome(3.0), _outcome(5.0, True)], [0.5, 2, 4])
    np.testing.assert_allclose(mixed.survival, [1.0, 2 / 3, 1 / 3])
    assert np.all(mixed.ci_half_widths > 0)


def test_estimate_tail_rejects_times_past_horizon():
    with pytest.raises(ValueError):
        A.estimate_tail([_outcome(10.0, True)], [20.0])
    with pytest.raises(ValueError):
        A.estimate_tail([], [1.0])


def test_wilson_interval_contains_estimate():
    lo, hi = A.wilson_interval(np.array([0, 5, 10]), 10)
    assert lo[0] == pytest.approx(0.0, abs=1e-15) and hi[2] == pytest.approx(1.0)
    assert lo[1] < 0.5 < hi[1]


@pytest.mark.parametrize("exponent", [1.0, 0.5])
def test_fit_power_law_exact(exponent):
    t = np.array([1.0, 2, 4, 8, 16, 32])
    s = 0.9 * t**-exponent
    tail = A.TailEstimate(t, s, np.zeros_like(t), 10**6, np.full(t.size, 1000))
    fit = A.fit_power_law(tail)
    assert fit.slope == pytest.approx(-exponent, abs=1e-6)
    assert fit.intercept == pytest.approx(math.log(0.9), abs=1e-6)
    assert fit.n_points == 6


def test_fit_power_law_insufficient_data():
    t = np.array([1.0, 2.0, 4.0])
    tail = A.TailEstimate(t, [0.5, 0.2, 0.1], [0.01] * 3, 1000, [500, 20, 10])
    with pytest.raises(A.InsufficientDataError):
        A.fit_power_law(tail)


def test_fit_recovers_half_exponent_from_noisy_tail():
    # |B| started at 1 and absorbed at 0: P(T > t) ~ sqrt(2/(pi t))
    rng = np.random.default_rng(0)
    hits = 1.0 / rng.standard_normal(200_000) ** 2
    outs = [_outcome(float(h)) if h <= 1e4 else _outcome(1e4, True) for h in hits]
    tail = A.estimate_tail(outs, 2.0 ** np.arange(2, 12))
    fit = A.fit_power_law(tail)
    assert fit.slope == pytest.approx(-0.5, abs=0.03)


# -- area law and total variation -------------------------------------------------

def test_area_density_examples():
    assert A.area_density(0.0, 1.0) == pytest.approx(1.0)
    total, _ = integrate.quad(lambda z: A.area_density(z, 1.0), -np.inf, np.inf)
    assert total == pytest.approx(1.0, abs=1e-8)
    assert A.area_cdf(0.0, 3.0) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        A.area_density(0.0, 0.0)


def test_x3_density_is_area_density_at_double_scale():
    z = np.linspace(-3, 3, 13)
    np.testing.assert_allclose(A.x3_density(z, 1.0), 0.5 / np.cosh(np.pi * z / 2))


def test_tv_lower_analytic_examples():
    assert A.tv_lower_analytic(0.0, 1.0) == 0.0
    u = np.linspace(0.01, 2.0, 60)
    vals = np.array([A.tv_lower_analytic(v, 1.0) for v in u])
    assert np.all(np.diff(vals) > 0) and np.all(vals <= 2.0)
    r1 = A.tv_lower_analytic(1e-3, 1.0) / 1e-3
    r2 = A.tv_lower_analytic(1e-4, 1.0) / 1e-4
    assert abs(r1 - r2) / r2 <= 0.02


@pytest.mark.parametrize("a, t", [(1.0, 2.0), (0.3, 1.0), (5.0, 4.0)])
def test_tv_lower_analytic_closed_form(a, t):
    # int |f1(z - u) - f1(z)| dz for f1 = sech(pi z), u = a/t
    u = a / t
    closed = 4 / math.pi * (math.atan(math.exp(math.pi * u / 2)) - math.atan(math.exp(-math.pi * u / 2)))
    assert A.tv_lower_analytic(a, t) == pytest.approx(closed, abs=1e-9)


def test_area_marginal_tv_matches_sampled_marginals():
    # exact total variation between the third-coordinate laws
    exact = A.area_marginal_tv(1.0, 2.0)
    xa = A.sample_area_marginal(GroupPoint(0, 0, 1), 2.0, 200_000, seed=SeedSpec(3, 0, 12))
    xb = A.sample_area_marginal(IDENTITY, 2.0, 200_000, seed=SeedSpec(3, 0, 13))
    tv, noise = A.empirical_tv_with_noise(xa, xb, bins=201)
    assert abs(tv - exact) <= 0.01 + noise


def test_empirical_tv_examples():
    x = np.random.default_rng(1).standard_normal(10_000)
    assert A.empirical_tv(x, x) == 0.0
    assert A.empirical_tv(np.zeros(100), np.full(100, 10.0)) == pytest.approx(1.0, abs=1e-12)
    rng = np.random.default_rng(2)
    a = rng.standard_normal(1_000_000)
    b = rng.standard_normal(1_000_000) + 0.5
    exact = 2 * stats.norm.cdf(0.25) - 1
    assert A.empirical_tv(a, b, bins=201) == pytest.approx(exact, abs=0.01)


def test_empirical_tv_validation():
    with pytest.raises(ValueError):
        A.empirical_tv([], [1.0])
    with pytest.raises(ValueError):
        A.empirical_tv([1.0], [1.0], bins=0)


# -- experiment preconditions -----------------------------------------------------

def test_lemma_preconditions():
    with pytest.raises(PreconditionError):
        A.lemma_tail_check(0.0, [1.0], 10)
    with pytest.raises(PreconditionError, match="y >= b"):
        A.lemma_tail_check(2.0, [3.0], 10)


def test_area_control_precondition():
    with pytest.raises(PreconditionError):
        A.area_control_check([2.0], [0.0], 1.0, 10)


def test_exit_preconditions():
    with pytest.raises(PreconditionError):
        A.exit_experiment(IDENTITY, 1.0, [0.1], 10)
    with pytest.raises(PreconditionError):
        A.exit_experiment(IDENTITY, 0.0, [0.0], 10)
    with pytest.raises(PreconditionError, match="A\\(0\\)"):
        A.exit_experiment(IDENTITY, 64.0, [1.0], 10, variants=("area",))


def test_liouville_precondition():
    with pytest.raises(PreconditionError):
        A.liouville_demo(lambda p: p[:, 0], GroupPoint(0, 2, 0), IDENTITY, 2.0, 10)


# -- small experiment runs --------------------------------------------------------

def test_lemma_tail_small_run():
    rep = A.lemma_tail_check(1.0, [1.0, 4.0, 16.0], 2000, horizon=1e3, steps_per_block=256)
    assert rep.censored_fraction < 0.05
    for ex, ex_done, bound in zip(rep.exceedance, rep.exceedance_completed, rep.bound):
        assert ex_done <= ex <= bound + 3 * 0.02


def test_area_control_small_run():
    rep = A.area_control_check([0.0, 1.0], [0.0, 1.0], 4.0, 400, steps_per_interval=128)
    assert len(rep.rows) == 4
    zero = [r for r in rep.rows if r["b_offset"] == 0 and r["a_offset"] == 0][0]
    assert zero["mean"] == 0.0
    assert rep.c1_fitted >= 0 and rep.c2_fitted >= 0


def test_moment_scaling_small_run():
    rep = A.moment_scaling_check([1.0, 4.0], 400, steps_per_interval=64)
    assert set(rep.ratio_spreads) == {"ratio_tau", "ratio_b1", "ratio_b2"}
    assert all(s >= 1 for s in rep.ratio_spreads.values())


def test_exit_experiment_zero_offset_and_reproducibility():
    kw = dict(variants=("planar",), steps_per_interval=64, master_seed=5)
    a = A.exit_experiment(IDENTITY, 4.0, [0.0, 0.1], 200, **kw)
    b = A.exit_experiment(IDENTITY, 4.0, [0.0, 0.1], 200, workers=2, **kw)
    assert a.rows[0]["probability"] == 0.0
    assert a.rows[1] == b.rows[1]


def test_liouville_small_run():
    rep = A.liouville_demo(lambda p: np.tanh(p[:, 2]), GroupPoint(0, 1, 0), IDENTITY, 4.0, 300,
                           sup_norm=1.0, steps_per_interval=64)
    assert rep.difference <= rep.coupling_bound + 4 * rep.difference_se
    # zero relative area with a planar offset uses nu(0) = 2
    assert rep.cc_distance == pytest.approx(math.sqrt(2))


def test_lambda_variance_small_run():
    rep = A.lambda_variance_check([0, 2], 4000, steps=256)
    for row in rep.rows:
        assert abs(row["variance"] - row["target"]) <= 5 * row["target"] * math.sqrt(2 / 3999)


def test_marginal_check_small_run():
    rep = A.marginal_check(GroupPoint(0, 1, 0), IDENTITY, 400, steps_per_interval=64)
    assert len(rep.ks) == 8
    assert len(rep.chi2) == 2

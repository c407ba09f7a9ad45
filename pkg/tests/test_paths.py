import io
import math

import numpy as np
import pytest
from scipy import stats

from heiscouple import paths as P
from heiscouple.rng import SeedSpec, Stream

SEED = SeedSpec(2024, 0, Stream.AUX)


def grid(T=1.0, steps=64, t0=0.0):
    return P.TimeGrid(t0, t0 + T, steps)


# -- grids, seeds ---------------------------------------------------------------

def test_timegrid_validation_and_nodes():
    g = P.TimeGrid(1.0, 3.0, 4)
    assert g.h == 0.5 and g.nodes == 5
    assert g.times()[-1] == 3.0
    with pytest.raises(ValueError):
        P.TimeGrid(1.0, 1.0, 4)
    with pytest.raises(ValueError):
        P.TimeGrid(0.0, 1.0, 0)


def test_scalarpath_length_check_and_csv():
    g = grid(steps=2)
    with pytest.raises(ValueError):
        P.ScalarPath(g, np.zeros(4))
    buf = io.StringIO()
    P.ScalarPath(g, np.array([0.0, 1.0, 2.0])).to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,value" and len(lines) == 4


def test_seed_streams_are_reproducible_and_distinct():
    a = SeedSpec(1, 2, 3).generator(4).standard_normal(5)
    b = SeedSpec(1, 2, 3).generator(4).standard_normal(5)
    c = SeedSpec(1, 2, 3).generator(5).standard_normal(5)
    d = SeedSpec(1, 3, 3).generator(4).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)
    with pytest.raises(ValueError):
        SeedSpec(-1)


# -- sample_bm / sample_bridge --------------------------------------------------

def test_sample_bm_examples():
    g = P.TimeGrid(0.5, 2.5, 16)
    paths = P.sample_bm(g, 0.0, SEED, size=100_000)
    inc = paths.values[:, -1] - paths.values[:, 0]
    var = inc.var(ddof=1)
    se = 2.0 * math.sqrt(2 / (inc.size - 1))
    assert abs(var - 2.0) <= 3 * se
    one = P.sample_bm(g, 5.0, SEED)
    assert one.values[0] == 5.0
    assert np.array_equal(one.values, P.sample_bm(g, 5.0, SEED).values)


def test_sample_bridge_examples():
    T = 3.0
    g = P.TimeGrid(0.0, T, 8)
    br = P.sample_bridge(g, SEED, size=100_000).values
    assert np.all(br[:, 0] == 0.0) and np.all(br[:, -1] == 0.0)
    mid, quarter = br[:, 4], br[:, 2]
    var_se = (T / 4) * math.sqrt(2 / (mid.size - 1))
    assert abs(mid.var(ddof=1) - T / 4) <= 3 * var_se
    cov = np.cov(quarter, mid)[0, 1]
    # SE of a sample covariance of jointly Gaussian variables
    cov_se = math.sqrt((quarter.var() * mid.var() + cov**2) / mid.size)
    assert abs(cov - T / 8) <= 3 * cov_se


# -- Karhunen-Loeve --------------------------------------------------------------

def test_kl_basis_examples():
    T = 2.5
    assert P.kl_basis(T, 1, 0.0) == 0.0
    assert abs(P.kl_basis(T, 1, T)) < 1e-16
    assert P.kl_basis(T, 1, T / 2) == pytest.approx(math.sqrt(2) / math.pi, abs=1e-15)
    assert P.kl_basis(T, 2, T / 4) == pytest.approx(math.sqrt(2) / (2 * math.pi), abs=1e-15)
    with pytest.raises(ValueError):
        P.kl_basis(T, 0, 1.0)
    with pytest.raises(ValueError):
        P.kl_basis(T, 1, T + 0.1)


def _synthetic(T, k, z, steps=4096):
    g = P.TimeGrid(0.0, T, steps)
    return P.ScalarPath(g, math.sqrt(T) * z * P.kl_basis(T, k, g.times()))


def test_kl_project_examples():
    T = 4.0
    g = P.TimeGrid(0.0, T, 4096)
    assert P.kl_project(P.ScalarPath(g, np.zeros(4097)), 1) == 0.0
    assert P.kl_project(_synthetic(T, 1, 1.0), 1) == pytest.approx(1.0, abs=1e-4)
    assert P.kl_project(_synthetic(T, 2, 1.0), 1) == pytest.approx(0.0, abs=1e-4)
    assert P.kl_project(_synthetic(T, 3, -0.7), 3) == pytest.approx(-0.7, abs=1e-4)


def test_replace_first_kl_examples():
    T = 2.0
    g = P.TimeGrid(0.0, T, 4096)
    br = P.sample_bridge(g, SEED)
    z1 = P.kl_project(br, 1)
    same = P.replace_first_kl(br, z1)
    assert np.max(np.abs(same.values - br.values)) <= 1e-12
    zero = P.replace_first_kl(P.ScalarPath(g, np.zeros(g.nodes)), 1.0)
    np.testing.assert_allclose(zero.values, math.sqrt(T) * P.kl_basis(T, 1, g.times()), atol=1e-12)
    new = P.replace_first_kl(br, 0.0)
    assert P.kl_project(new, 1) == pytest.approx(0.0, abs=1e-4)
    for k in (2, 3, 5):
        assert P.kl_project(new, k) == pytest.approx(P.kl_project(br, k), abs=1e-4)
    assert new.values[0] == 0.0 and new.values[-1] == 0.0
    twice = P.replace_first_kl(P.replace_first_kl(br, 0.3), 0.3)
    once = P.replace_first_kl(br, 0.3)
    assert np.max(np.abs(twice.values - once.values)) <= 1e-12


def test_assemble_bm_examples():
    g = P.TimeGrid(0.0, 4.0, 8)
    path = P.assemble_bm(P.ScalarPath(g, np.zeros(9)), 3.0, start=1.0)
    np.testing.assert_allclose(path.values, 1.0 + 3.0 * g.times() / 4.0, atol=1e-15)
    assert path.values[-1] == 4.0


def test_assemble_bm_increments_are_gaussian():
    T, n = 2.0, 100_000
    g = P.TimeGrid(0.0, T, 16)
    br = P.sample_bridge(g, SEED, size=n)
    G = SeedSpec(2024, 0, Stream.AUX2).generator(0).standard_normal(n) * math.sqrt(T)
    vals = P.assemble_bm(br, G).values
    for a, b in ((0, 4), (4, 12), (12, 16)):
        dt = (b - a) * g.h
        p = stats.kstest((vals[:, b] - vals[:, a]) / math.sqrt(dt), "norm").pvalue
        assert p > 0.01 / 3


# -- stochastic integrals -----------------------------------------------------------

def test_ito_integral_examples():
    g = grid(T=1.0, steps=1000)
    drv = P.sample_bm(g, 0.7, SEED)
    ones = P.ScalarPath(g, np.ones(g.nodes))
    np.testing.assert_allclose(P.ito_integral(ones, drv).values, drv.values - 0.7, atol=1e-12)
    t = P.ScalarPath(g, g.times())
    assert P.ito_integral(t, t).values[-1] == pytest.approx(0.5, abs=2 * g.h)
    with pytest.raises(P.GridMismatchError):
        P.ito_integral(t, P.ScalarPath(grid(steps=10), np.zeros(11)))


def test_ito_integral_martingale():
    g = grid(T=1.0, steps=64)
    b = P.sample_bm(g, 0.0, SEED, size=100_000)
    v = P.ito_integral(b, b).values[:, -1]
    assert abs(v.mean()) <= 3 * v.std(ddof=1) / math.sqrt(v.size)


def test_ito_integral_first_order_convergence():
    errs = []
    for steps in (100, 200, 400):
        g = grid(T=1.0, steps=steps)
        t = P.ScalarPath(g, g.times())
        sq = P.ScalarPath(g, g.times() ** 2)
        errs.append(abs(P.ito_integral(sq, t).values[-1] - 1 / 3))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 0.9)


def test_levy_area_examples():
    g = grid(T=1.0, steps=256)
    b1 = P.sample_bm(g, 0.3, SEED)
    same = P.levy_area(b1, b1, 2.0)
    np.testing.assert_allclose(same.values, 2.0, atol=1e-12)
    b2 = P.sample_bm(g, -1.0, SEED, interval=1)
    area = P.levy_area(b1, b2, 0.5)
    th = 0.9
    r1 = b1.with_values(math.cos(th) * b1.values - math.sin(th) * b2.values)
    r2 = b2.with_values(math.sin(th) * b1.values + math.cos(th) * b2.values)
    np.testing.assert_allclose(P.levy_area(r1, r2, 0.5).values, area.values, atol=1e-9)
    flipped = P.levy_area(b2, b1, 0.0).values
    np.testing.assert_array_equal(flipped, -P.levy_area(b1, b2, 0.0).values)


def test_levy_area_matches_shifted_ito_form():
    g = grid(T=1.0, steps=128)
    b1 = P.sample_bm(g, 0.4, SEED)
    b2 = P.sample_bm(g, -0.2, SEED, interval=1)
    direct = 1.5 + P.ito_integral(b1, b2).values - P.ito_integral(b2, b1).values
    np.testing.assert_allclose(P.levy_area(b1, b2, 1.5).values, direct, atol=1e-12)


def test_heisenberg_bm_area_law_at_time_one():
    # the third coordinate at time 1 has density (1/2) sech(pi z / 2)
    g = grid(T=1.0, steps=256)
    _, _, x3 = P.heisenberg_bm(g, (0.0, 0.0, 0.0), SEED, size=100_000)
    u = (2 / math.pi) * np.arctan(np.exp(math.pi * x3.values[:, -1] / 2))
    counts = np.histogram(u, np.linspace(0, 1, 51))[0]
    e = u.size / 50
    assert stats.chi2.sf(((counts - e) ** 2 / e).sum(), 49) > 0.01


# -- sine functional ---------------------------------------------------------------

@pytest.mark.parametrize("n", [0, 2, 3])
def test_lambda_functional_deterministic_driver(n):
    g = P.TimeGrid(2.0**n - 1, 2.0 ** (n + 1) - 1, 4096)
    lam = P.lambda_functional(P.ScalarPath(g, g.times()), n).values
    assert lam[0] == 0.0
    exact = (2 / math.pi) * math.sqrt(2) * (2 * 2.0**n / math.pi)
    assert lam[-1] == pytest.approx(exact, abs=10 * g.h)


def test_lambda_functional_grid_span_error():
    g = P.TimeGrid(0.0, 2.0, 16)
    with pytest.raises(ValueError):
        P.lambda_functional(P.ScalarPath(g, np.zeros(17)), 0)


def test_lambda_variance():
    n, N = 2, 100_000
    g = P.TimeGrid(2.0**n - 1, 2.0 ** (n + 1) - 1, 256)
    b = P.sample_bm(g, 0.0, SEED, size=N)
    v = P.lambda_functional(b, n).values[:, -1]
    target = 2.0 ** (n + 2) / math.pi**2
    assert abs(v.var(ddof=1) - target) <= 3 * target * math.sqrt(2 / (N - 1))


# -- first crossing ------------------------------------------------------------------

def test_first_crossing_examples():
    g = grid(T=1.0, steps=100)
    w = P.sample_bm(g, 0.25, SEED)
    assert P.first_crossing(w, 0.25, SEED) == 0.0
    level = w.values.max() + 10.0
    assert P.first_crossing(w, level, refine=False) == math.inf
    up = P.ScalarPath(g, g.times())
    assert P.first_crossing(up, 0.505, refine=False) == pytest.approx(0.505, abs=1e-12)
    with pytest.raises(ValueError):
        P.first_crossing(w, level)


def _hit_times(steps, n, seed, batch=10_000):
    g = grid(T=1.0, steps=steps)
    out = []
    for j in range(0, n, batch):
        s = SeedSpec(seed.master_seed, j, seed.stream_label)
        w = P.sample_bm(g, 0.0, s, size=batch)
        out.append(P.first_crossing(w, 1.0, s.with_stream(Stream.AUX2)))
    return np.concatenate(out)


def test_first_crossing_reflection_principle():
    n = 100_000
    t = _hit_times(64, n, SEED)
    p_hat = np.mean(np.isfinite(t))
    p = 2 * (1 - stats.norm.cdf(1.0))
    assert abs(p_hat - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_first_crossing_refinement_converges():
    n = 100_000
    a = _hit_times(2048, n, SEED)
    b = _hit_times(4096, n, SeedSpec(77, 0, Stream.AUX))
    a, b = np.where(np.isfinite(a), a, 2.0), np.where(np.isfinite(b), b, 2.0)
    assert stats.ks_2samp(a, b).statistic <= 0.01

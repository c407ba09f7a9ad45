"""The acceptance suite as library functions.

Each ``criterion_*`` function runs one check at the sizes of a preset and
returns a :class:`CriterionResult`.  ``run_suite`` runs them all; the
``verify`` CLI subcommand and the acceptance tests both go through here.
Where a stated target uses a normalisation of the area law that differs from
the exact one, the result also carries the value under the exact law as a
companion (it never changes the verdict).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import analysis as AN
from .coupling import CouplingConfig
from .heis_core import IDENTITY, GroupPoint, cc_distance, inverse, multiply, mu, nu, nu_bounds, rho
from .rng import SeedSpec, Stream
from .runner import run_couplings, to_jsonable

__all__ = ["PRESETS", "CriterionResult", "run_suite", "CRITERIA"]


@dataclass(frozen=True)
class Preset:
    n_rate: int
    n_tv: int
    n_lemma: int
    n_lambda: int
    n_marginal: int
    n_exit: int
    n_exit_area: int
    n_geometry: int
    steps_per_interval: int
    exit_steps: int
    marginal_steps: int


PRESETS = {
    "full": Preset(n_rate=200_000, n_tv=1_000_000, n_lemma=100_000, n_lambda=100_000,
                   n_marginal=100_000, n_exit=100_000, n_exit_area=10_000, n_geometry=10_000,
                   steps_per_interval=2048, exit_steps=512, marginal_steps=512),
    "quick": Preset(n_rate=3_000, n_tv=20_000, n_lemma=5_000, n_lambda=5_000,
                    n_marginal=2_000, n_exit=1_000, n_exit_area=500, n_geometry=1_000,
                    steps_per_interval=256, exit_steps=128, marginal_steps=128),
}

RATE_TIMES = [2.0**k - 1 for k in range(2, 13)]
SANDWICH_TIMES = [3.0, 7.0, 15.0, 31.0, 63.0]


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    summary: str
    values: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"criterion {self.number:2d} {'PASS' if self.passed else 'FAIL'}: {self.name}: {self.summary}"

    def to_dict(self) -> dict:
        return asdict(self)


class _Cache:
    """Outcomes shared between criteria that use the same starting pair."""

    def __init__(self):
        self.store = {}

    def get(self, key, make):
        if key not in self.store:
            self.store[key] = make()
        return self.store[key]


def _rate_outcomes(start: GroupPoint, preset: Preset, seed: int, workers, cache: _Cache):
    cfg = CouplingConfig(steps_per_interval=preset.steps_per_interval, horizon=4095.0)
    return cache.get(("rate", tuple(start)), lambda: run_couplings(
        start, IDENTITY, cfg, seed, preset.n_rate, workers=workers))


def criterion_1(preset: Preset, seed: int, workers=None, cache: _Cache | None = None):
    cache = cache or _Cache()
    outs = _rate_outcomes(GroupPoint(0, 0, 1), preset, seed, workers, cache)
    tail = AN.estimate_tail(outs, RATE_TIMES)
    fit = AN.fit_power_law(tail)
    ok = -1.15 <= fit.slope <= -0.85
    return CriterionResult(1, "non-Markovian rate", ok,
                           f"slope {fit.slope:.4f} (stderr {fit.stderr:.4f}), target [-1.15, -0.85]",
                           {"fit": fit.to_dict(), "tail": tail.to_dict()})


def criterion_2(preset: Preset, seed: int, workers=None, cache: _Cache | None = None):
    cache = cache or _Cache()
    outs = _rate_outcomes(GroupPoint(0, 1, 0), preset, seed, workers, cache)
    tail = AN.estimate_tail(outs, RATE_TIMES)
    fit = AN.fit_power_law(tail)
    ok = -0.65 <= fit.slope <= -0.35
    censored = float(np.mean([o.tau_censored for o in outs]))
    return CriterionResult(2, "planar-dominated rate", ok,
                           f"slope {fit.slope:.4f} (stderr {fit.stderr:.4f}), target [-0.65, -0.35]",
                           {"fit": fit.to_dict(), "tail": tail.to_dict(),
                            "censored_fraction": censored})


def criterion_3(preset: Preset, seed: int, workers=None, cache: _Cache | None = None):
    t, a = 2.0, 1.0
    xa = AN.sample_area_marginal(GroupPoint(0, 0, a), t, preset.n_tv,
                                 seed=SeedSpec(seed, 0, Stream.AUX))
    xb = AN.sample_area_marginal(IDENTITY, t, preset.n_tv, seed=SeedSpec(seed, 0, Stream.AUX2))
    emp, noise = AN.empirical_tv_with_noise(xa, xb, 201)
    target = AN.tv_lower_analytic(a, t)
    exact = AN.area_marginal_tv(a, t)
    ok = abs(emp - target) <= 0.01
    return CriterionResult(3, "TV closed form", ok,
                           f"empirical {emp:.4f} vs target {target:.4f} (tol 0.01); "
                           f"exact-law half-L1 {exact:.4f}",
                           {"empirical_tv": emp, "noise_floor": noise, "target": target,
                            "exact_law_tv": exact, "exact_law_error": abs(emp - exact)})


def criterion_4(preset: Preset, seed: int, workers=None, cache: _Cache | None = None):
    cache = cache or _Cache()
    outs = _rate_outcomes(GroupPoint(0, 0, 1), preset, seed, workers, cache)
    tail = AN.estimate_tail(outs, SANDWICH_TIMES)
    n = tail.n_trajectories
    rows, sandwich_ok, exact_ok = [], True, True
    for t, p in zip(SANDWICH_TIMES, tail.survival):
        se = math.sqrt(max(p * (1 - p), 0.0) / n)
        lower = AN.tv_lower_analytic(1.0, t)
        exact = AN.area_marginal_tv(1.0, t)
        sandwich_ok &= p >= lower - 3 * se
        exact_ok &= p >= exact - 3 * se
        rows.append({"t": t, "coupling_upper": float(p), "se": se, "analytic_lower": lower,
                     "exact_law_lower": exact})
    slope_mc = AN.fit_power_law(tail, min_count=1).slope
    lt = np.log(SANDWICH_TIMES)
    slope_an = float(np.polyfit(lt, np.log([r["analytic_lower"] for r in rows]), 1)[0])
    slope_ex = float(np.polyfit(lt, np.log([r["exact_law_lower"] for r in rows]), 1)[0])
    slopes_ok = abs(slope_mc - slope_an) <= 0.2
    ok = bool(sandwich_ok and slopes_ok)
    return CriterionResult(
        4, "sandwich and efficiency", ok,
        f"sandwich {'holds' if sandwich_ok else 'violated'}; slopes {slope_mc:.3f} vs "
        f"{slope_an:.3f} (tol 0.2); exact-law sandwich {'holds' if exact_ok else 'violated'}",
        {"rows": rows, "slope_coupling": slope_mc, "slope_analytic": slope_an,
         "slope_exact_law": slope_ex, "sandwich_holds": bool(sandwich_ok),
         "slopes_agree": bool(slopes_ok), "exact_law_sandwich_holds": bool(exact_ok)})


def criterion_5(preset: Preset, seed: int, workers=None, cache: _Cache | None = None):
    rep = AN.lemma_tail_check(1.0, [1, 4, 16, 64], preset.n_lemma, horizon=1e3, master_seed=seed)
    bound_ok = all(p <= bd + 3 * se for p, bd, se in
                   zip(rep.exceedance, rep.bound, rep.standard_error))
    cens_ok = rep.censored_fraction < 0.02
    # the probability a Brownian motion from 1 avoids 0 up to time 1000
    cens_exact = math.erf(1.0 / math.sqrt(2e3))
    return CriterionResult(
        5, "stochastic-integral tail", bool(bound_ok and cens_ok),
        f"bound {'holds' if bound_ok else 'violated'}; censored {rep.censored_fraction:.4f} "
        f"(target < 0.02, exact survival {cens_exact:.4f})",
        {"report": rep.to_dict(), "bound_holds": bool(bound_ok),
         "censored_below_target": bool(cens_ok), "exact_censoring_probability": cens_exact})


def criterion_6(preset: Preset, seed: int, workers=None, cache: _Cache | None = None):
    rep = AN.lambda_variance_check(range(5), preset.n_lambda, master_seed=seed)
    worst = max(abs(r["z_score"]) for r in rep.rows)
    return CriterionResult(6, "sine functional variance", worst <= 3.0,
                           f"max |z| {worst:.3f} over levels 0..4 (tol 3)", rep.to_dict())


def criterion_7(preset: Preset, seed: int, workers=None, cache: _Cache | None = None):
    rep = AN.marginal_check(GroupPoint(0, 1, 1), IDENTITY, preset.n_marginal,
                            steps_per_interval=preset.marginal_steps, master_seed=seed,
                            workers=workers)
    ks_ok = all(r["passed"] for r in rep.ks)
    chi_ok = all(r["passed"] for r in rep.chi2)
    exact_ok = all(r["passed_exact_law"] for r in rep.chi2)
    min_ks = min(r["p_value"] for r in rep.ks)
    chi_p = ", ".join(f"{r['p_value']:.3g}" for r in rep.chi2)
    chi_px = ", ".join(f"{r['p_value_exact_law']:.3g}" for r in rep.chi2)
    return CriterionResult(
        7, "marginal preservation", bool(ks_ok and chi_ok),
        f"KS min p {min_ks:.3g}; chi2 p [{chi_p}] vs level {rep.level:.3g}; "
        f"exact-law chi2 p [{chi_px}]",
        {"report": rep.to_dict(), "ks_passed": ks_ok, "chi2_passed": chi_ok,
         "exact_law_chi2_passed": exact_ok})


def criterion_8(preset: Preset, seed: int, workers=None, cache: _Cache | None = None):
    offsets = [1 / 256, 1 / 128, 1 / 64]
    planar = AN.exit_experiment(IDENTITY, 1.0, offsets, preset.n_exit, variants=("planar",),
                                steps_per_interval=preset.exit_steps, master_seed=seed,
                                workers=workers)
    area = AN.exit_experiment(IDENTITY, 1.0, offsets, preset.n_exit_area, variants=("area",),
                              steps_per_interval=preset.exit_steps, master_seed=seed,
                              workers=workers)
    spread = planar.ratio_spread["planar"]
    ratios = ", ".join(f"{r['ratio']:.3f}" for r in planar.rows)
    return CriterionResult(8, "exit-probability linearity", spread <= 2.0,
                           f"planar ratios [{ratios}], spread {spread:.3f} (tol 2)",
                           {"planar": planar.to_dict(), "area": area.to_dict()})


def criterion_9(preset: Preset, seed: int, workers=None, cache: _Cache | None = None):
    rng = SeedSpec(seed, 0, Stream.AUX).generator(9)
    n = preset.n_geometry
    pts = rng.uniform(-10, 10, size=(n, 3, 3))
    checks = {}
    worst = {"associativity": 0.0, "identity": 0.0, "inverse": 0.0, "rho_invariance": 0.0,
             "cc_invariance": 0.0, "symmetry": 0.0}
    lo_ratio, hi_ratio = math.inf, 0.0
    for row in pts:
        p, q, g = (GroupPoint(*r) for r in row)
        scale = 1.0 + max(abs(c) for r in row for c in r) ** 2
        a = multiply(multiply(p, q), g)
        b = multiply(p, multiply(q, g))
        worst["associativity"] = max(worst["associativity"],
                                     max(abs(u - v) for u, v in zip(a, b)) / scale)
        worst["identity"] = max(worst["identity"], max(
            abs(u - v) for u, v in zip(multiply(IDENTITY, p), p)))
        worst["inverse"] = max(worst["inverse"], max(abs(c) for c in multiply(p, inverse(p))))
        r0, c0 = rho(p, q), cc_distance(p, q)
        r1, c1 = rho(multiply(g, p), multiply(g, q)), cc_distance(multiply(g, p), multiply(g, q))
        worst["rho_invariance"] = max(worst["rho_invariance"], abs(r1 - r0) / r0)
        worst["cc_invariance"] = max(worst["cc_invariance"], abs(c1 - c0) / c0)
        worst["symmetry"] = max(worst["symmetry"], abs(cc_distance(q, p) - c0) / c0,
                                abs(rho(q, p) - r0) / r0)
        lo_ratio, hi_ratio = min(lo_ratio, c0 / r0), max(hi_ratio, c0 / r0)
    for k, v in worst.items():
        checks[k] = v <= 1e-9
    theta = np.linspace(0.0, math.pi - 1e-6, 10_001)[1:]
    mus = np.array([mu(float(t)) for t in theta])
    checks["mu_increasing"] = bool(np.all(np.diff(mus) > 0))
    checks["nu_zero"] = nu(0.0) == 2.0
    m, M = (math.sqrt(v) for v in nu_bounds())
    checks["equivalence"] = m <= lo_ratio and hi_ratio <= M
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    return CriterionResult(9, "geometry suite", ok,
                           f"{len(checks)} checks, failed: {failed or 'none'}; "
                           f"cc/rho in [{lo_ratio:.4f}, {hi_ratio:.4f}] within [{m:.4f}, {M:.4f}]",
                           {"checks": checks, "worst": worst,
                            "ratio_range": [lo_ratio, hi_ratio], "sqrt_nu_range": [m, M]})


def criterion_10(preset: Preset, seed: int, workers=None, cache: _Cache | None = None):
    cfg = CouplingConfig(steps_per_interval=preset.steps_per_interval, horizon=63.0)
    n = 600
    runs = []
    for w in (1, 2):
        outs = run_couplings(GroupPoint(0, 1, 1), IDENTITY, cfg, seed, n, workers=w)
        runs.append(json.dumps(to_jsonable([o.to_dict() for o in outs]), sort_keys=True))
    ok = runs[0] == runs[1]
    return CriterionResult(10, "determinism", ok,
                           f"{n} trajectories with 1 and 2 workers: "
                           f"{'identical' if ok else 'different'}", {})


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10}


def run_suite(suite: str = "quick", seed: int = 0, workers=None, only=None, echo=None):
    """Run the criteria of ``suite`` in order; ``echo`` receives each result as it completes."""
    if suite not in PRESETS:
        raise ValueError(f"unknown suite {suite!r}; choose from {sorted(PRESETS)}")
    preset = PRESETS[suite]
    cache = _Cache()
    results = []
    for number, fn in CRITERIA.items():
        if only is not None and number not in only:
            continue
        res = fn(preset, seed, workers, cache)
        results.append(res)
        if echo is not None:
            echo(res)
    return results

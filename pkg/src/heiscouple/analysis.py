"""Estimators and Monte Carlo experiments built on the coupling engine.

Survival curves of the coupling time, power-law fits, total-variation lower
bounds for the area coordinate, and experiments checking tail, moment and
exit-probability bounds.  Constants reported by the experiments are fitted
from the simulations and labelled as such.

Two normalisations of the area law appear below.  ``area_density`` is the
density ``(1/t) sech(pi z / t)``; it is the law of *half* the third
coordinate started from the identity.  The third coordinate ``X3(t)`` itself
(with the group law used throughout this package) has density
``x3_density(z, t) = (1/(2t)) sech(pi z / (2t))``.  ``tv_lower_analytic``
follows the first normalisation and is an L1 distance without the factor
one half; ``area_marginal_tv`` is the half-L1 distance between the exact
third-coordinate marginals, which is a genuine lower bound for
``P(tau > t)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import partial
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize, stats

from . import paths as P
from .coupling import (
    CouplingConfig,
    CouplingOutcome,
    PreconditionError,
    area_difference_at_start,
    exit_time,
    simulate_coupling,
)
from .heis_core import IDENTITY, GroupPoint, cc_distance, multiply, rho
from .rng import SeedSpec, Stream
from .runner import parallel_map, run_couplings

__all__ = [
    "InsufficientDataError",
    "TailEstimate",
    "ExponentFit",
    "TVReport",
    "wilson_interval",
    "estimate_tail",
    "fit_power_law",
    "area_density",
    "x3_density",
    "area_cdf",
    "tv_lower_analytic",
    "area_marginal_tv",
    "empirical_tv",
    "empirical_tv_with_noise",
    "sample_area_marginal",
    "tv_report",
    "lemma_tail_check",
    "area_control_check",
    "moment_scaling_check",
    "exit_experiment",
    "liouville_demo",
    "lambda_variance_check",
    "marginal_check",
]

WILSON_Z = float(stats.norm.ppf(0.975))


class InsufficientDataError(ValueError):
    """Too few usable points for a fit."""


def wilson_interval(k, n, z: float = WILSON_Z):
    """Wilson score interval ``(lo, hi)`` for ``k`` successes out of ``n``."""
    k = np.asarray(k, dtype=float)
    p = k / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return centre - half, centre + half


# ----------------------------------------------------------------------------
# survival curves and power-law fits


@dataclass
class TailEstimate:
    times: np.ndarray
    survival: np.ndarray
    ci_half_widths: np.ndarray
    n_trajectories: int
    counts: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.survival = np.asarray(self.survival, dtype=float)
        self.ci_half_widths = np.asarray(self.ci_half_widths, dtype=float)
        self.counts = np.asarray(self.counts)
        order = np.argsort(self.times)
        assert np.all(np.diff(self.survival[order]) <= 0), "survival must be non-increasing"

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "survival": self.survival.tolist(),
            "ci_half_widths": self.ci_half_widths.tolist(),
            "counts": self.counts.tolist(),
            "n_trajectories": self.n_trajectories,
        }

    def rows(self):
        for t, s, c, k in zip(self.times, self.survival, self.ci_half_widths, self.counts):
            yield float(t), float(s), float(c), int(k)


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    intercept: float
    stderr: float
    t_range: tuple
    n_points: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["t_range"] = list(self.t_range)
        return d


def estimate_tail(outcomes: Sequence[CouplingOutcome], times) -> TailEstimate:
    """Empirical ``P(tau > t)`` with Wilson 95% half-widths.

    Censored trajectories count as uncoupled at every time; asking for a time
    past the horizon of a censored trajectory is an error.
    """
    if len(outcomes) == 0:
        raise ValueError("estimate_tail needs at least one outcome")
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a non-empty 1-D sequence")
    tau = np.array([math.inf if o.tau_censored else o.tau for o in outcomes])
    horizons = [o.tau for o in outcomes if o.tau_censored]
    if horizons and times.max() > min(horizons):
        raise ValueError(f"time {times.max()} exceeds the common horizon {min(horizons)}")
    n = tau.size
    counts = (tau[None, :] > times[:, None]).sum(axis=1)
    lo, hi = wilson_interval(counts, n)
    return TailEstimate(times, counts / n, (hi - lo) / 2, n, counts)


def fit_power_law(tail: TailEstimate, min_count: int = 50) -> ExponentFit:
    """Weighted least squares of log survival on log t.

    Points with fewer than ``min_count`` uncoupled trajectories, or with zero
    survival, are dropped.  The weights are the inverse squared relative
    confidence half-widths; when every half-width is zero (exact data) the
    fit is unweighted.
    """
    t, s, ci, k = tail.times, tail.survival, tail.ci_half_widths, tail.counts
    use = (k >= min_count) & (s > 0) & (t > 0)
    if use.sum() < 3:
        raise InsufficientDataError(
            f"need at least 3 points with >= {min_count} uncoupled samples, have {int(use.sum())}"
        )
    x, y = np.log(t[use]), np.log(s[use])
    sigma = ci[use] / s[use] / WILSON_Z
    weighted = bool(np.all(sigma > 0))
    w = 1.0 / sigma**2 if weighted else np.ones_like(x)
    X = np.stack([x, np.ones_like(x)], axis=1)
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    cov = np.linalg.inv(X.T @ (X * w[:, None]))
    if not weighted:
        dof = max(x.size - 2, 1)
        cov = cov * float(np.sum((y - X @ beta) ** 2)) / dof
    return ExponentFit(float(beta[0]), float(beta[1]), float(math.sqrt(cov[0, 0])),
                       (float(t[use].min()), float(t[use].max())), int(use.sum()))


# ----------------------------------------------------------------------------
# area densities and total variation


def _sech(x):
    a = np.abs(np.asarray(x, dtype=float))
    e = np.exp(-a)
    return 2.0 * e / (1.0 + e * e)


def area_density(z, t):
    """``(1/t) sech(pi z / t)``; at ``t = 1`` this is ``1 / cosh(pi z)``."""
    if not t > 0:
        raise ValueError("t must be positive")
    out = _sech(math.pi * np.asarray(z, dtype=float) / t) / t
    return float(out) if np.ndim(out) == 0 else out


def x3_density(z, t):
    """Density of the third coordinate at time ``t`` started from the identity."""
    return area_density(z, 2.0 * t)


def area_cdf(z, t):
    """Distribution function of ``area_density(., t)``."""
    if not t > 0:
        raise ValueError("t must be positive")
    return (2.0 / math.pi) * np.arctan(np.exp(math.pi * np.asarray(z, dtype=float) / t))


def _area_quantile(q, t):
    return t / math.pi * np.log(np.tan(math.pi * np.asarray(q, dtype=float) / 2))


def tv_lower_analytic(a_diff: float, t: float) -> float:
    """``int |f1(z - u) - f1(z)| dz`` with ``u = a_diff / t`` and ``f1 = 1/cosh(pi z)``.

    Evaluated by adaptive quadrature, split at the crossing point ``u/2`` of
    the two densities.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    u = abs(a_diff) / t
    if u == 0.0:
        return 0.0

    def g(z):
        return abs(area_density(z - u, 1.0) - area_density(z, 1.0))

    left, _ = integrate.quad(g, -np.inf, u / 2, epsabs=1e-11, epsrel=1e-11, limit=200)
    right, _ = integrate.quad(g, u / 2, np.inf, epsabs=1e-11, epsrel=1e-11, limit=200)
    return float(left + right)


def area_marginal_tv(a_diff: float, t: float) -> float:
    """Half-L1 distance between the time-``t`` third-coordinate laws of two
    starts with equal planar parts and area gap ``a_diff``.
    """
    return 0.5 * tv_lower_analytic(a_diff / 2.0, t)


def _tv_histograms(samples_a, samples_b, bins: int):
    a = np.asarray(samples_a, dtype=float).ravel()
    b = np.asarray(samples_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("empirical_tv needs non-empty samples")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    pooled = np.concatenate([a, b])
    q1, med, q3 = np.percentile(pooled, [25, 50, 75])
    iqr = q3 - q1
    if iqr <= 0:
        iqr = max(float(np.ptp(pooled)), 1.0)
    lo, hi = med - 8 * iqr, med + 8 * iqr
    edges = np.linspace(lo, hi, bins + 1)
    # out-of-range mass goes to the edge bins so both histograms sum to one
    pa = np.histogram(np.clip(a, lo, hi), edges)[0] / a.size
    pb = np.histogram(np.clip(b, lo, hi), edges)[0] / b.size
    return pa, pb, a.size, b.size


def empirical_tv(samples_a, samples_b, bins: int = 201) -> float:
    """Half the L1 distance between histograms on common bins.

    The bins are ``bins`` equal cells spanning the pooled median plus or
    minus eight pooled interquartile ranges.
    """
    pa, pb, _, _ = _tv_histograms(samples_a, samples_b, bins)
    return float(0.5 * np.abs(pa - pb).sum())


def empirical_tv_with_noise(samples_a, samples_b, bins: int = 201) -> tuple[float, float]:
    """``(tv, noise_floor)``.

    ``noise_floor`` is the expected value of the estimator when both samples
    come from the pooled histogram, a normal approximation to the sampling
    bias.  Binning itself biases the estimate downwards; that part depends
    on the unknown densities and is not estimated.
    """
    pa, pb, na, nb = _tv_histograms(samples_a, samples_b, bins)
    m = (pa * na + pb * nb) / (na + nb)
    noise = 0.5 * np.sqrt(2.0 / math.pi * m * (1.0 / na + 1.0 / nb)).sum()
    return float(0.5 * np.abs(pa - pb).sum()), float(noise)


def sample_area_marginal(start: GroupPoint, t: float, n: int, *, steps: int = 256,
                         seed: SeedSpec = SeedSpec(0, 0, Stream.AUX),
                         batch: int = 50_000) -> np.ndarray:
    """``n`` independent samples of the third coordinate at time ``t``.

    Batch ``j`` uses trajectory index ``j`` of ``seed``'s master seed and
    stream, so two calls with different stream labels are independent.
    """
    grid = P.TimeGrid(0.0, t, steps)
    out = np.empty(n)
    for j, lo in enumerate(range(0, n, batch)):
        m = min(batch, n - lo)
        s = SeedSpec(seed.master_seed, j, seed.stream_label)
        _, _, x3 = P.heisenberg_bm(grid, start, s, size=m)
        out[lo:lo + m] = x3.values[:, -1]
    return out


@dataclass(frozen=True)
class TVReport:
    t: float
    analytic_lower: float
    empirical_tv: float
    coupling_upper: float
    marginal_lower: float = float("nan")

    def to_dict(self) -> dict:
        return asdict(self)


def tv_report(a_diff: float, t: float, *, coupling_upper: float = float("nan"),
              n_empirical: int = 0, bins: int = 201, steps: int = 256,
              master_seed: int = 0) -> TVReport:
    """Analytic and (optionally) empirical TV between starts ``(0,0,a_diff)`` and ``e``."""
    emp = float("nan")
    if n_empirical > 0:
        xa = sample_area_marginal(GroupPoint(0, 0, a_diff), t, n_empirical, steps=steps,
                                  seed=SeedSpec(master_seed, 0, Stream.AUX))
        xb = sample_area_marginal(IDENTITY, t, n_empirical, steps=steps,
                                  seed=SeedSpec(master_seed, 0, Stream.AUX2))
        emp = empirical_tv(xa, xb, bins)
    return TVReport(float(t), tv_lower_analytic(a_diff, t), emp, float(coupling_upper),
                    area_marginal_tv(a_diff, t))


# ----------------------------------------------------------------------------
# stochastic-integral tail


@dataclass
class LemmaTailReport:
    b: float
    y_values: list
    exceedance: list
    exceedance_completed: list
    standard_error: list
    bound: list
    censored_fraction: float
    horizon: float
    n: int
    master_seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def lemma_tail_check(b: float, y_values, n: int, *, horizon: float = 1e3,
                     steps_per_block: int = 1024, master_seed: int = 0,
                     batch: int = 4096) -> LemmaTailReport:
    """Tail of ``I = int_0^{tau0} B2 dB1`` with ``B2`` started at ``b`` and absorbed at 0.

    ``B2`` is simulated on blocks ``[b^2 (2^k - 1), b^2 (2^{k+1} - 1)]`` of
    ``steps_per_block`` steps each, with Brownian-bridge refinement of the
    absorption time.  Given the ``B2`` path, ``I`` is centred Gaussian with
    variance ``int_0^{tau0} B2^2 ds``, which is sampled directly.  Paths
    still alive at ``horizon`` are censored; ``exceedance`` counts them as
    exceeding every level (an upper estimate) and ``exceedance_completed``
    counts them as not exceeding (a lower estimate).
    """
    if not b > 0:
        raise PreconditionError(f"b must be positive: b = {b} <= 0")
    ys = [float(y) for y in y_values]
    for y in ys:
        if y < b * b:
            raise PreconditionError(f"need y >= b^2: {y} < {b * b}")
    integral = np.empty(n)
    censored = np.zeros(n, dtype=bool)
    for j, lo in enumerate(range(0, n, batch)):
        m = min(batch, n - lo)
        rng = SeedSpec(master_seed, j, Stream.AUX).generator(0)
        pos = np.full(m, float(b))
        q = np.zeros(m)
        alive = np.arange(m)
        k = 0
        while alive.size:
            t0 = b * b * (2.0**k - 1)
            if t0 >= horizon:
                break
            t1 = min(b * b * (2.0 ** (k + 1) - 1), horizon)
            h = (t1 - t0) / steps_per_block
            dw = rng.standard_normal((alive.size, steps_per_block)) * math.sqrt(h)
            vals = np.empty((alive.size, steps_per_block + 1))
            vals[:, 0] = pos[alive]
            np.cumsum(dw, axis=1, out=vals[:, 1:])
            vals[:, 1:] += vals[:, :1]
            u = rng.random((alive.size, steps_per_block))
            idx, exact = P.crossing_index(vals, 0.0, h, u)
            sq = np.cumsum(vals[:, :-1] ** 2, axis=1) * h
            hit = idx >= 0
            # full steps before the crossing step, then the fraction of that step
            ii = np.maximum(idx, 0)
            before = np.where(ii > 0, sq[np.arange(alive.size), ii - 1], 0.0)
            v0 = vals[np.arange(alive.size), ii]
            v1 = vals[np.arange(alive.size), ii + 1]
            with np.errstate(divide="ignore", invalid="ignore"):
                frac = np.where(v0 != v1, v0 / (v0 - v1), 0.0)
            frac = np.where(exact, np.clip(frac, 0.0, 1.0), 0.5)
            q[alive[hit]] += (before + v0 * v0 * frac * h)[hit]
            q[alive[~hit]] += sq[~hit, -1]
            pos[alive[~hit]] = vals[~hit, -1]
            alive = alive[~hit]
            k += 1
        z = SeedSpec(master_seed, j, Stream.AUX2).generator(0).standard_normal(m)
        integral[lo:lo + m] = np.sqrt(q) * z
        censored[lo + alive] = True
    exc, exc_done, se, bound = [], [], [], []
    for y in ys:
        done_hit = (integral > y) & ~censored
        p_up = float(np.mean(done_hit | censored))
        exc.append(p_up)
        exc_done.append(float(np.mean(done_hit)))
        se.append(math.sqrt(max(p_up * (1 - p_up), 1e-300) / n))
        bound.append(2 * b / math.sqrt(y))
    return LemmaTailReport(float(b), ys, exc, exc_done, se, bound, float(censored.mean()),
                           float(horizon), n, master_seed)


# ----------------------------------------------------------------------------
# control of the area difference at the planar meeting time


@dataclass
class AreaControlReport:
    t: float
    rows: list
    c1_fitted: float
    c2_fitted: float
    n: int
    master_seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def area_control_check(b_offsets, a_offsets, t: float, n: int, *,
                       steps_per_interval: int = 512, horizon_factor: float = 1e4,
                       master_seed: int = 0, workers: int | None = None) -> AreaControlReport:
    """MC estimate of ``E[|A(T1)|/t ^ 1]`` against ``c1 |db2|/sqrt(t) + c2 |A(0)|/t``.

    Starts are ``x = (0, db2, a0)`` and ``x~ = e`` for every combination of
    offsets, so that ``A(0) = a0``.  Only the reflection phase is run;
    ``c1, c2 >= 0`` are fitted by non-negative least squares over all
    combinations.  A trajectory whose planar meeting is censored contributes
    the cap value 1.
    """
    combos = [(float(d), float(a)) for d in b_offsets for a in a_offsets]
    for d, a in combos:
        if t < max(d * d, 2 * abs(a)):
            raise PreconditionError(
                f"need t >= max(|b2 - b2~|^2, 2|A(0)|): {t} < max({d * d}, {2 * abs(a)})"
            )
    rows = []
    for d, a in combos:
        if d == 0.0 and a == 0.0:
            rows.append({"b_offset": d, "a_offset": a, "mean": 0.0, "se": 0.0,
                         "censored_fraction": 0.0})
            continue
        cfg = CouplingConfig(strategy="reflection_planar", steps_per_interval=steps_per_interval,
                             horizon=horizon_factor * max(t, d * d, 1.0))
        outs = run_couplings(GroupPoint(0, d, a), IDENTITY, cfg, master_seed, n, workers=workers)
        vals = np.array([1.0 if o.t1_censored else min(abs(o.a_at_t1) / t, 1.0) for o in outs])
        rows.append({"b_offset": d, "a_offset": a, "mean": float(vals.mean()),
                     "se": float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
                     "censored_fraction": float(np.mean([o.t1_censored for o in outs]))})
    feats = np.array([[r["b_offset"] / math.sqrt(t), abs(r["a_offset"]) / t] for r in rows])
    target = np.array([r["mean"] for r in rows])
    (c1, c2), _ = optimize.nnls(feats, target)
    for r, f in zip(rows, feats):
        r["b_component"] = float(c1 * f[0])
        r["a_component"] = float(c2 * f[1])
        r["fitted_bound"] = r["b_component"] + r["a_component"]
    return AreaControlReport(float(t), rows, float(c1), float(c2), n, master_seed)


# ----------------------------------------------------------------------------
# moments of the coupling time and of the planar excursions


@dataclass
class MomentReport:
    rows: list
    ratio_spreads: dict
    passed: bool
    n: int
    master_seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def _moment_sample(index: int, a: float, cfg: CouplingConfig, master_seed: int):
    traj = simulate_coupling(GroupPoint(0, 0, a), IDENTITY, cfg, SeedSpec(master_seed, index),
                             extend=False)
    o = traj.outcome
    cap = 1.0 if o.tau_censored else min(o.tau, 1.0)
    t = traj.t
    keep = t <= cap
    b1, b2 = traj.planar(0)
    return cap, float(np.abs(b1[keep]).max()), float(np.abs(b2[keep]).max())


def moment_scaling_check(a_diffs, n: int, *, steps_per_interval: int = 512,
                         master_seed: int = 0, workers: int | None = None,
                         max_spread: float = 10.0) -> MomentReport:
    """``E(tau^1)^2`` and fourth moments of the planar sup up to ``tau ^ 1``.

    Runs the area-only dyadic coupling from ``(0, 0, a)`` and ``e`` for each
    ``a`` in ``a_diffs``.  Reports ``E(tau^1)^2 / (a ^ 1)`` and the sup
    moments divided by ``E(tau^1)^2``; passes when each ratio varies by at
    most ``max_spread`` (max over min) across ``a_diffs``.
    """
    cfg = CouplingConfig(strategy="area_only_dyadic", steps_per_interval=steps_per_interval,
                         horizon=1.0)
    rows = []
    for a in a_diffs:
        a = float(a)
        if a == 0.0:
            rows.append({"a_diff": 0.0, "tau2": 0.0, "sup_b1_4": 0.0, "sup_b2_4": 0.0,
                         "ratio_tau": float("nan"), "ratio_b1": float("nan"),
                         "ratio_b2": float("nan")})
            continue
        fn = partial(_moment_sample, a=a, cfg=cfg, master_seed=master_seed)
        res = np.array(parallel_map(fn, n, workers))
        tau2 = float(np.mean(res[:, 0] ** 2))
        s1 = float(np.mean(res[:, 1] ** 4))
        s2 = float(np.mean(res[:, 2] ** 4))
        rows.append({"a_diff": a, "tau2": tau2, "sup_b1_4": s1, "sup_b2_4": s2,
                     "ratio_tau": tau2 / min(abs(a), 1.0), "ratio_b1": s1 / tau2,
                     "ratio_b2": s2 / tau2})
    spreads = {}
    for key in ("ratio_tau", "ratio_b1", "ratio_b2"):
        v = np.array([r[key] for r in rows if r["a_diff"] != 0.0])
        spreads[key] = float(v.max() / v.min()) if v.size else 1.0
    passed = all(s <= max_spread for s in spreads.values())
    return MomentReport(rows, spreads, passed, n, master_seed)


# ----------------------------------------------------------------------------
# exit probabilities


@dataclass
class ExitReport:
    x: list
    delta: float
    rows: list
    ratio_spread: dict
    n: int
    master_seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def _exit_sample(index: int, x: GroupPoint, x_tilde: GroupPoint, delta: float,
                 cfg: CouplingConfig, master_seed: int):
    traj = simulate_coupling(x, x_tilde, cfg, SeedSpec(master_seed, index), extend=False)
    o = traj.outcome
    first_exit = min(exit_time(traj, x, delta, 0), exit_time(traj, x, delta, 1))
    if math.isinf(first_exit):
        # no exit seen: either coupled first, or censored before any exit
        return (o.tau_censored, o.tau_censored)
    return (o.tau_censored or o.tau > first_exit, False)


def _offset_start(x: GroupPoint, offset: float, variant: str) -> GroupPoint:
    if variant == "planar":
        return multiply(x, GroupPoint(0.0, offset, 0.0))
    if variant == "area":
        return multiply(x, GroupPoint(0.0, 0.0, offset * offset))
    raise ValueError(f"unknown variant {variant!r}; use 'planar' or 'area'")


def exit_experiment(x: GroupPoint, delta: float, rho_offsets, n: int, *,
                    variants=("planar", "area"), horizon: float | None = None,
                    steps_per_interval: int = 512, master_seed: int = 0,
                    workers: int | None = None) -> ExitReport:
    """``P(tau > first exit of either copy from the rho-ball B(x, delta))``.

    For each offset the second start is ``x * (0, offset, 0)`` (planar) or
    ``x * (0, 0, offset^2)`` (area), both at pseudo-distance ``offset`` from
    ``x``.  Exits are detected on the simulation grid.  A run censored
    before any exit is counted as an event (and reported as ambiguous).
    """
    if not delta > 0:
        raise PreconditionError(f"delta must be positive: {delta} <= 0")
    offsets = [float(o) for o in rho_offsets]
    for off in offsets:
        if not 0 <= off < delta / 32:
            raise PreconditionError(f"need 0 <= offset < delta/32: {off} >= {delta / 32}")
    horizon = 16.0 * delta * delta if horizon is None else horizon
    cfg = CouplingConfig(steps_per_interval=steps_per_interval, horizon=horizon)
    rows = []
    for variant in variants:
        for off in offsets:
            xt = _offset_start(x, off, variant)
            planar_gap = math.hypot(x.x - xt.x, x.y - xt.y)
            a0 = area_difference_at_start(x, xt)
            if planar_gap > 1 or abs(a0) > 0.5:
                raise PreconditionError(
                    f"need |b - b~| <= 1 and |A(0)| <= 1/2: {planar_gap}, {abs(a0)}"
                )
            if off == 0.0:
                rows.append({"variant": variant, "offset": 0.0, "rho": 0.0, "probability": 0.0,
                             "ci_low": 0.0, "ci_high": 0.0, "ratio": float("nan"),
                             "ambiguous": 0})
                continue
            fn = partial(_exit_sample, x=x, x_tilde=xt, delta=delta, cfg=cfg,
                         master_seed=master_seed)
            res = np.array(parallel_map(fn, n, workers), dtype=bool)
            k = int(res[:, 0].sum())
            lo, hi = wilson_interval(k, n)
            p = k / n
            rows.append({"variant": variant, "offset": off, "rho": rho(x, xt), "probability": p,
                         "ci_low": float(lo), "ci_high": float(hi), "ratio": p / off,
                         "ambiguous": int(res[:, 1].sum())})
    spread = {}
    for variant in variants:
        r = np.array([row["ratio"] for row in rows
                      if row["variant"] == variant and row["offset"] > 0])
        spread[variant] = float(r.max() / r.min()) if r.size and r.min() > 0 else float("inf")
    return ExitReport(list(x), float(delta), rows, spread, n, master_seed)


# ----------------------------------------------------------------------------
# Liouville-type gradient bound


@dataclass
class LiouvilleReport:
    t: float
    difference: float
    difference_se: float
    tail: float
    sup_norm: float
    coupling_bound: float
    c_fitted: float
    cc_bound: float
    cc_distance: float
    n: int
    master_seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def _liouville_sample(index: int, x: GroupPoint, x_tilde: GroupPoint, t: float,
                      cfg: CouplingConfig, master_seed: int):
    traj = simulate_coupling(x, x_tilde, cfg, SeedSpec(master_seed, index), extend=True)
    o = traj.outcome
    tau = math.inf if o.tau_censored else o.tau
    return tuple(traj.at(t, 0)) + tuple(traj.at(t, 1)) + (tau,)


def liouville_demo(u: Callable[[np.ndarray], np.ndarray], x: GroupPoint, x_tilde: GroupPoint,
                   t: float, n: int, *, sup_norm: float | None = None, fit_times=None,
                   steps_per_interval: int = 512, master_seed: int = 0,
                   workers: int | None = None) -> LiouvilleReport:
    """Coupling estimate of ``|P_t u(x) - P_t u(x~)|`` and two bounds for it.

    ``u`` maps an ``(m, 3)`` array of positions to ``m`` values.  The first
    bound is ``2 ||u|| P(tau > t)``.  The second is ``C ||u|| d_cc(x, x~) /
    sqrt(t)`` with ``C`` fitted as ``max_s 2 P(tau > s) sqrt(s) / d_cc`` over
    ``fit_times`` (default: powers of two from 1 up to ``t``).  When
    ``sup_norm`` is not given it is estimated by the largest ``|u|`` seen.
    """
    planar_sq = (x.x - x_tilde.x) ** 2 + (x.y - x_tilde.y) ** 2
    a0 = area_difference_at_start(x, x_tilde)
    if t < max(planar_sq, 2 * abs(a0), 1.0):
        raise PreconditionError(
            f"need t >= max(|b - b~|^2, 2|A(0)|, 1): {t} < max({planar_sq}, {2 * abs(a0)}, 1)"
        )
    cfg = CouplingConfig(steps_per_interval=steps_per_interval, horizon=float(t))
    fn = partial(_liouville_sample, x=x, x_tilde=x_tilde, t=float(t), cfg=cfg,
                 master_seed=master_seed)
    res = np.array(parallel_map(fn, n, workers))
    ux, uxt = np.asarray(u(res[:, 0:3]), float), np.asarray(u(res[:, 3:6]), float)
    diff = ux - uxt
    tau = res[:, 6]
    norm = float(max(np.abs(ux).max(), np.abs(uxt).max())) if sup_norm is None else float(sup_norm)
    tail = float(np.mean(tau > t))
    d = cc_distance(x, x_tilde)
    if fit_times is None:
        fit_times = [2.0**k for k in range(int(math.floor(math.log2(t))) + 1)]
    c_fit = 0.0
    if d > 0:
        c_fit = max(2 * float(np.mean(tau > s)) * math.sqrt(s) / d for s in fit_times)
    return LiouvilleReport(float(t), float(abs(diff.mean())),
                           float(diff.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
                           tail, norm, 2 * norm * tail, c_fit, c_fit * norm * d / math.sqrt(t),
                           d, n, master_seed)


# ----------------------------------------------------------------------------
# sine functional variance and marginal preservation


@dataclass
class LambdaVarianceReport:
    rows: list
    n: int
    master_seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def lambda_variance_check(levels, n: int, *, steps: int = 1024, master_seed: int = 0,
                          batch: int = 20_000) -> LambdaVarianceReport:
    """Empirical variance of the sine functional at the end of dyadic interval ``level``.

    The target is ``2^(level+2) / pi^2``; the standard error of a Gaussian
    sample variance is ``var sqrt(2/(n-1))``.
    """
    rows = []
    for lvl in levels:
        grid = P.TimeGrid(2.0**lvl - 1, 2.0 ** (lvl + 1) - 1, steps)
        vals = np.empty(n)
        for j, lo in enumerate(range(0, n, batch)):
            m = min(batch, n - lo)
            b1 = P.sample_bm(grid, 0.0, SeedSpec(master_seed, j, Stream.AUX), interval=lvl,
                             size=m)
            vals[lo:lo + m] = P.lambda_functional(b1, lvl).values[:, -1]
        var = float(vals.var(ddof=1))
        target = 2.0 ** (lvl + 2) / math.pi**2
        se = target * math.sqrt(2.0 / (n - 1))
        rows.append({"level": int(lvl), "variance": var, "target": target, "se": se,
                     "z_score": (var - target) / se})
    return LambdaVarianceReport(rows, n, master_seed)


@dataclass
class MarginalReport:
    ks: list
    chi2: list
    level: float
    n: int
    master_seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def _marginal_sample(index: int, x: GroupPoint, x_tilde: GroupPoint, times: tuple,
                     cfg: CouplingConfig, master_seed: int):
    traj = simulate_coupling(x, x_tilde, cfg, SeedSpec(master_seed, index), extend=True)
    out = []
    for copy in (0, 1):
        for s in (0.0,) + times:
            out.extend(traj.at(s, copy))
    return out


def _chi2_equiprobable(samples, cdf, bins: int):
    u = cdf(samples)
    counts = np.histogram(u, np.linspace(0.0, 1.0, bins + 1))[0]
    expected = samples.size / bins
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    return chi2, float(stats.chi2.sf(chi2, bins - 1))


def marginal_check(x: GroupPoint, x_tilde: GroupPoint, n: int, *, times=(1.0, 3.0),
                   bins: int = 50, alpha: float = 0.01, steps_per_interval: int = 512,
                   master_seed: int = 0, workers: int | None = None) -> MarginalReport:
    """Check that each coupled copy is a Heisenberg Brownian motion.

    KS tests compare the standardised increments of every planar coordinate
    of both copies over ``[0, t1], [t1, t2], ...`` with N(0, 1).  For each
    copy started at the identity, ``X3(t)/t`` is compared by a chi-square
    test on ``bins`` equiprobable cells with ``1/cosh(pi z)`` and with the
    exact third-coordinate law ``(1/2) sech(pi z / 2)``.  Every test is
    judged at ``alpha`` divided by the number of tests of the first two
    kinds (Bonferroni); the exact-law tests are reported alongside.
    """
    times = tuple(float(s) for s in times)
    cfg = CouplingConfig(steps_per_interval=steps_per_interval, horizon=max(times))
    fn = partial(_marginal_sample, x=x, x_tilde=x_tilde, times=times, cfg=cfg,
                 master_seed=master_seed)
    res = np.array(parallel_map(fn, n, workers)).reshape(n, 2, len(times) + 1, 3)
    starts = (x, x_tilde)
    from_identity = [c for c in (0, 1) if starts[c] == IDENTITY]
    n_tests = 4 * len(times) + len(from_identity) * len(times)
    level = alpha / n_tests
    ks = []
    grid = (0.0,) + times
    for copy in (0, 1):
        for coord in (0, 1):
            for k in range(len(times)):
                dt = grid[k + 1] - grid[k]
                inc = (res[:, copy, k + 1, coord] - res[:, copy, k, coord]) / math.sqrt(dt)
                p = float(stats.kstest(inc, "norm").pvalue)
                ks.append({"copy": copy, "coordinate": coord, "window": [grid[k], grid[k + 1]],
                           "p_value": p, "passed": p > level})
    chi = []
    for copy in from_identity:
        for k, s in enumerate(times):
            z = res[:, copy, k + 1, 2] / s
            c_st, p_st = _chi2_equiprobable(z, lambda v: area_cdf(v, 1.0), bins)
            c_ex, p_ex = _chi2_equiprobable(z, lambda v: area_cdf(v, 2.0), bins)
            chi.append({"copy": copy, "t": s, "chi2": c_st, "p_value": p_st,
                        "passed": p_st > level, "chi2_exact_law": c_ex,
                        "p_value_exact_law": p_ex, "passed_exact_law": p_ex > level})
    return MarginalReport(ks, chi, level, n, master_seed)

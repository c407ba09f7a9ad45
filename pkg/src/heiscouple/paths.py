"""Grid-based stochastic calculus for scalar processes.

Paths live on uniform :class:`TimeGrid` objects.  ``ScalarPath.values`` may
carry leading batch axes; every operation here acts along the last axis, so
a batch of independent paths is handled by a single call.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import TextIO

import numpy as np

from .rng import SeedSpec

__all__ = [
    "TimeGrid",
    "ScalarPath",
    "GridMismatchError",
    "sample_bm",
    "sample_bridge",
    "kl_basis",
    "kl_project",
    "replace_first_kl",
    "assemble_bm",
    "ito_integral",
    "levy_area",
    "heisenberg_bm",
    "lambda_functional",
    "lambda_weights",
    "first_crossing",
    "crossing_index",
]


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    t_end: float
    steps: int

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.t_end > self.t_start:
            raise ValueError("t_end must exceed t_start")

    @property
    def h(self) -> float:
        return (self.t_end - self.t_start) / self.steps

    @property
    def length(self) -> float:
        return self.t_end - self.t_start

    @property
    def nodes(self) -> int:
        return self.steps + 1

    def times(self) -> np.ndarray:
        t = self.t_start + self.h * np.arange(self.steps + 1)
        t[-1] = self.t_end
        return t


@dataclass(frozen=True)
class ScalarPath:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape[-1] != self.grid.nodes:
            raise ValueError(
                f"path has {vals.shape[-1]} nodes, grid expects {self.grid.nodes}"
            )
        object.__setattr__(self, "values", vals)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times()

    @property
    def start(self):
        return self.values[..., 0]

    @property
    def end(self):
        return self.values[..., -1]

    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=-1)

    def with_values(self, values) -> "ScalarPath":
        return ScalarPath(self.grid, values)

    def to_csv(self, fh: TextIO) -> None:
        """Write ``t,value`` rows (single paths only)."""
        if self.values.ndim != 1:
            raise ValueError("CSV export needs a single path")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "value"])
        for t, v in zip(self.times, self.values):
            writer.writerow([repr(float(t)), repr(float(v))])


def _check_same_grid(a: ScalarPath, b: ScalarPath) -> None:
    if a.grid != b.grid:
        raise GridMismatchError(f"grids differ: {a.grid} vs {b.grid}")


def _cumulative(increments: np.ndarray) -> np.ndarray:
    out = np.zeros(increments.shape[:-1] + (increments.shape[-1] + 1,))
    np.cumsum(increments, axis=-1, out=out[..., 1:])
    return out


def sample_bm(
    grid: TimeGrid, start: float, seed: SeedSpec, *, interval: int = 0, size=None
) -> ScalarPath:
    """Brownian motion on ``grid`` started at ``start``.

    ``size`` adds leading batch axes; all batch members come from one stream.
    """
    rng = seed.generator(interval)
    shape = (grid.steps,) if size is None else tuple(np.atleast_1d(size)) + (grid.steps,)
    dw = rng.standard_normal(shape) * math.sqrt(grid.h)
    return ScalarPath(grid, start + _cumulative(dw))


def bridge_from_bm(values: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Pin a Brownian path (started at 0) to 0 at the right end."""
    frac = (grid.times() - grid.t_start) / grid.length
    out = values - frac * values[..., -1:]
    out[..., 0] = 0.0
    out[..., -1] = 0.0
    return out


def sample_bridge(grid: TimeGrid, seed: SeedSpec, *, interval: int = 0, size=None) -> ScalarPath:
    """Standard Brownian bridge on ``grid``, zero at both ends."""
    bm = sample_bm(grid, 0.0, seed, interval=interval, size=size)
    return ScalarPath(grid, bridge_from_bm(bm.values, grid))


def kl_basis(T: float, k: int, t):
    """Karhunen-Loeve basis function sqrt(2) sin(k pi t / T) / (k pi)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(t_arr > T):
        raise ValueError("t must lie in [0, T]")
    out = math.sqrt(2.0) * np.sin(k * math.pi * t_arr / T) / (k * math.pi)
    return float(out) if out.ndim == 0 else out


def _local_times(grid: TimeGrid) -> np.ndarray:
    s = grid.times() - grid.t_start
    s[-1] = grid.length
    return s


def kl_project(bridge: ScalarPath, k: int):
    """Recover the k-th Karhunen-Loeve coefficient by trapezoid quadrature."""
    T = bridge.grid.length
    s = _local_times(bridge.grid)
    weight = np.sin(k * math.pi * s / T)
    integral = np.trapezoid(bridge.values * weight, dx=bridge.grid.h, axis=-1)
    return (k * math.pi / T**1.5) * math.sqrt(2.0) * integral


def replace_first_kl(bridge: ScalarPath, new_z1) -> ScalarPath:
    """Swap the first KL coefficient of ``bridge`` for ``new_z1``."""
    T = bridge.grid.length
    g1 = kl_basis(T, 1, _local_times(bridge.grid))
    z_hat = np.asarray(kl_project(bridge, 1))
    delta = np.asarray(new_z1, dtype=float) - z_hat
    vals = bridge.values + math.sqrt(T) * delta[..., None] * g1
    vals[..., 0] = 0.0
    vals[..., -1] = 0.0
    return bridge.with_values(vals)


def assemble_bm(bridge: ScalarPath, endpoint_gaussian, start=0.0) -> ScalarPath:
    """B(t) = start + bridge(t) + (t / T) G with ``G`` of variance T."""
    frac = _local_times(bridge.grid) / bridge.grid.length
    g = np.asarray(endpoint_gaussian, dtype=float)[..., None]
    st = np.asarray(start, dtype=float)[..., None]
    vals = st + bridge.values + frac * g
    vals[..., -1] = (st + g)[..., 0]
    return bridge.with_values(vals)


def ito_integral(integrand: ScalarPath, driver: ScalarPath) -> ScalarPath:
    """Left-point sums: out[j] = sum_{i<j} integrand[i] (driver[i+1] - driver[i])."""
    _check_same_grid(integrand, driver)
    inc = integrand.values[..., :-1] * np.diff(driver.values, axis=-1)
    return ScalarPath(integrand.grid, _cumulative(inc))


def levy_area(b1: ScalarPath, b2: ScalarPath, a0=0.0) -> ScalarPath:
    """Third coordinate a0 + int b1 db2 - int b2 db1 along the full paths."""
    _check_same_grid(b1, b2)
    x, y = b1.values, b2.values
    inc = x[..., :-1] * np.diff(y, axis=-1) - y[..., :-1] * np.diff(x, axis=-1)
    return ScalarPath(b1.grid, np.asarray(a0, dtype=float)[..., None] + _cumulative(inc))


def heisenberg_bm(grid: TimeGrid, start, seed: SeedSpec, *, size=None):
    """Brownian motion on the Heisenberg group started at ``start = (x, y, z)``.

    Returns the three coordinate paths ``(b1, b2, x3)``.  The planar parts use
    intervals 0 and 1 of ``seed``'s stream.
    """
    x, y, z = (float(c) for c in start)
    b1 = sample_bm(grid, x, seed, interval=0, size=size)
    b2 = sample_bm(grid, y, seed, interval=1, size=size)
    return b1, b2, levy_area(b1, b2, z)


@lru_cache(maxsize=256)
def _unit_sine_weights(steps: int, rule: str) -> np.ndarray:
    u = np.arange(steps + 1) / steps
    w = (2.0 / math.pi) * math.sqrt(2.0) * np.sin(math.pi * u)
    w[-1] = 0.0
    if rule == "left":
        out = w[:-1]
    elif rule == "average":
        out = 0.5 * (w[:-1] + w[1:])
    else:
        raise ValueError(f"unknown rule {rule!r}")
    out = np.ascontiguousarray(out)
    out.flags.writeable = False
    return out


def lambda_weights(grid: TimeGrid, n: int, rule: str = "left") -> np.ndarray:
    """Per-step integrand weights of the sine functional on dyadic interval n.

    The weights only depend on the position within the interval, so any grid
    of ``steps`` steps covering an interval of length ``2^n`` shares them.
    """
    if abs(grid.length - 2.0**n) > 1e-9 * 2.0**n:
        raise ValueError(f"grid length {grid.length} is not 2^{n}")
    return _unit_sine_weights(grid.steps, rule)


def lambda_functional(b1: ScalarPath, n: int, rule: str = "left") -> ScalarPath:
    """(2/pi) int sqrt(2) sin(pi (s - 2^n + 1) / 2^n) dB1(s) on [2^n - 1, 2^{n+1} - 1].

    ``rule="left"`` gives Ito left-point sums.  ``rule="average"`` averages
    the integrand over each step; the coupling engine uses it because it
    matches the discrete Levy area exactly.
    """
    lo, hi = 2.0**n - 1, 2.0 ** (n + 1) - 1
    g = b1.grid
    tol = 1e-9 * max(1.0, hi)
    if abs(g.t_start - lo) > tol or abs(g.t_end - hi) > tol:
        raise ValueError(f"grid [{g.t_start}, {g.t_end}] does not span [{lo}, {hi}]")
    inc = lambda_weights(g, n, rule) * np.diff(b1.values, axis=-1)
    return ScalarPath(g, _cumulative(inc))


def crossing_index(
    values: np.ndarray, level, h: float, uniforms: np.ndarray | None, diffusivity: float = 1.0
):
    """Index of the first step containing a crossing of ``level``.

    Returns ``(index, exact)`` arrays over the batch axes.  ``index`` is -1
    if no crossing is found and ``steps`` is never returned.  ``exact`` is
    True when a node sits on the far side of (or on) the level, False when
    the crossing was declared from the bridge probability.
    """
    d = values - np.asarray(level, dtype=float)[..., None]
    a, b = d[..., :-1], d[..., 1:]
    sure = a * b <= 0.0
    hit = sure.copy()
    if uniforms is not None:
        with np.errstate(over="ignore"):
            p = np.exp(-2.0 * a * b / (h * diffusivity))
        hit |= uniforms < p
    any_hit = hit.any(axis=-1)
    idx = np.where(any_hit, hit.argmax(axis=-1), -1)
    exact = np.take_along_axis(sure, np.maximum(idx, 0)[..., None], axis=-1)[..., 0]
    return idx, exact & any_hit


def first_crossing_step(values: np.ndarray, level: float, h: float, uniforms=None) -> int:
    """Lean single-path variant of :func:`crossing_index`; -1 when no crossing.

    With ``uniforms`` a straddling step has bridge probability >= 1, so one
    comparison covers sure and refined crossings alike.
    """
    d = values - level
    prod = d[:-1] * d[1:]
    if uniforms is None:
        hit = prod <= 0.0
    else:
        with np.errstate(over="ignore"):
            hit = uniforms < np.exp(prod * (-2.0 / h))
        hit |= prod <= 0.0
    i = int(hit.argmax())
    return i if hit[i] else -1


def _crossing_times(values, level, grid: TimeGrid, idx, exact):
    times = grid.times()
    lvl = np.broadcast_to(np.asarray(level, dtype=float), idx.shape)
    safe = np.maximum(idx, 0)
    v0 = np.take_along_axis(values, safe[..., None], axis=-1)[..., 0]
    v1 = np.take_along_axis(values, safe[..., None] + 1, axis=-1)[..., 0]
    denom = v0 - v1
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(denom != 0, (v0 - lvl) / denom, 0.0)
    frac = np.where(exact, np.clip(frac, 0.0, 1.0), 0.5)
    t = times[safe] + grid.h * frac
    return np.where(idx >= 0, t, np.inf)


def first_crossing(
    w: ScalarPath,
    level,
    seed: SeedSpec | None = None,
    *,
    interval: int = 0,
    refine: bool = True,
    diffusivity: float = 1.0,
    return_step: bool = False,
):
    """First time ``w`` reaches ``level``, or ``inf``.

    A step whose end nodes straddle the level is a sure crossing and its
    time is linearly interpolated.  With ``refine`` a step lying on one side
    is declared a crossing with the Brownian-bridge probability
    ``exp(-2 (w_i - L)(w_{i+1} - L) / (diffusivity h))`` and timed at the
    step midpoint; this needs ``seed``.  With ``return_step`` the index of
    the step holding the crossing (-1 if none) is returned as well.
    """
    vals = w.values
    uniforms = None
    if refine:
        if seed is None:
            raise ValueError("bridge refinement needs a seed")
        uniforms = seed.generator(interval).random(vals.shape[:-1] + (w.grid.steps,))
    idx, exact = crossing_index(vals, level, w.grid.h, uniforms, diffusivity)
    t = _crossing_times(vals, level, w.grid, idx, exact)
    # a start exactly on the level is hit at t_start
    on_level = vals[..., 0] == np.asarray(level, dtype=float)
    t = np.where(on_level, w.grid.t_start, t)
    idx = np.where(on_level, 0, idx)
    if np.ndim(t) == 0:
        t, idx = float(t), int(idx)
    return (t, idx) if return_step else t

"""Couplings of two Heisenberg Brownian motions.

The main entry point is :func:`couple`, which runs the two-step
non-Markovian coupling:

1. rotate the plane so that both starts share their first coordinate;
2. drive ``B1`` synchronously and reflect ``B2`` about the midpoint of the
   two second coordinates until the planar paths meet at ``T1``;
3. couple the remaining area gap ``A(T1)`` on dyadic intervals
   ``[2^n - 1, 2^{n+1} - 1]`` (in time rescaled by ``|A(T1)|``) by coupling
   the first Karhunen-Loeve coefficient of the ``B2`` bridges through a
   mirrored auxiliary Brownian motion.

Both copies share ``B1`` at all times, so all paths are stored in the
rotated frame with a single ``b1`` array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import paths as P
from .heis_core import GroupPoint, PlanarRotation, reduce_to_common_b1
from .rng import SeedSpec, Stream

__all__ = [
    "STRATEGIES",
    "CouplingConfig",
    "CouplingOutcome",
    "CoupledTrajectory",
    "PreconditionError",
    "area_difference_at_start",
    "reflection_phase",
    "dyadic_area_phase",
    "couple",
    "simulate_coupling",
    "synchronous_couple",
    "exit_time",
]

STRATEGIES = ("synchronous", "reflection_planar", "nonmarkovian_two_step", "area_only_dyadic")


class PreconditionError(ValueError):
    """An input violates a documented precondition."""


@dataclass(frozen=True)
class CouplingConfig:
    strategy: str = "nonmarkovian_two_step"
    steps_per_interval: int = 2048
    max_dyadic_index: int = 60
    horizon: float = 4095.0
    crossing_refinement: bool = True

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.steps_per_interval < 16:
            raise ValueError("steps_per_interval must be >= 16")
        if self.max_dyadic_index < 0:
            raise ValueError("max_dyadic_index must be >= 0")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "steps_per_interval": self.steps_per_interval,
            "max_dyadic_index": self.max_dyadic_index,
            "horizon": self.horizon,
            "crossing_refinement": self.crossing_refinement,
        }


@dataclass(frozen=True)
class CouplingOutcome:
    """Summary of one coupled run.

    Censored times carry the horizon and set the matching ``*_censored`` flag.
    """

    tau: float
    t1: float
    a_at_t1: float
    dyadic_intervals_used: int
    seed: SeedSpec
    tau_censored: bool = False
    t1_censored: bool = False
    swapped: bool = False

    def to_dict(self) -> dict:
        return {
            "trajectory": self.seed.trajectory_index,
            "tau": self.tau,
            "tau_censored": self.tau_censored,
            "t1": self.t1,
            "t1_censored": self.t1_censored,
            "a_at_t1": self.a_at_t1,
            "dyadic_intervals_used": self.dyadic_intervals_used,
            "swapped": self.swapped,
            "seed": [self.seed.master_seed, self.seed.trajectory_index, self.seed.stream_label],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CouplingOutcome":
        m, i, s = d["seed"]
        return cls(
            tau=d["tau"],
            t1=d["t1"],
            a_at_t1=d["a_at_t1"],
            dyadic_intervals_used=d["dyadic_intervals_used"],
            seed=SeedSpec(m, i, s),
            tau_censored=d["tau_censored"],
            t1_censored=d["t1_censored"],
            swapped=d.get("swapped", False),
        )


@dataclass
class _Segment:
    phase: str
    t: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    b2t: np.ndarray
    x3: np.ndarray
    x3t: np.ndarray


@dataclass
class CoupledTrajectory:
    """Joint paths of the two copies, stored in the rotated frame.

    In that frame both copies share the first planar coordinate ``b1``; the
    second copy's second coordinate is ``b2t``.  ``planar(copy)`` maps back
    to the caller's frame.
    """

    rotation: PlanarRotation
    outcome: CouplingOutcome
    segments: list = field(default_factory=list)

    def _cat(self, name: str) -> np.ndarray:
        if not self.segments:
            return np.empty(0)
        parts = [getattr(self.segments[0], name)]
        parts += [getattr(s, name)[1:] for s in self.segments[1:]]
        return np.concatenate(parts)

    @property
    def t(self):
        return self._cat("t")

    @property
    def b1(self):
        return self._cat("b1")

    @property
    def b2(self):
        return self._cat("b2")

    @property
    def b2t(self):
        return self._cat("b2t")

    @property
    def x3(self):
        return self._cat("x3")

    @property
    def x3t(self):
        return self._cat("x3t")

    @property
    def phases(self) -> list:
        return [(s.phase, float(s.t[0]), float(s.t[-1])) for s in self.segments]

    def checkpoints(self) -> np.ndarray:
        """Segment boundary times (dyadic checkpoints and phase switches)."""
        return np.array([s.t[-1] for s in self.segments])

    def area_difference(self) -> np.ndarray:
        """Invariant area difference A(t) evaluated along the stored paths."""
        b1, b2, b2t = self.b1, self.b2, self.b2t
        return self.x3 - self.x3t + b1 * b2t - b2 * b1

    def planar(self, copy: int = 0):
        """Planar coordinates of one copy in the caller's frame."""
        b2 = self.b2 if copy == 0 else self.b2t
        return self.rotation.inverse().apply_xy(self.b1, b2)

    def positions(self, copy: int = 0) -> np.ndarray:
        x, y = self.planar(copy)
        z = self.x3 if copy == 0 else self.x3t
        return np.stack([x, y, z], axis=-1)

    def at(self, time: float, copy: int = 0) -> GroupPoint:
        """Position at ``time`` by linear interpolation between grid nodes."""
        t = self.t
        if not t[0] <= time <= t[-1]:
            raise ValueError(f"time {time} outside recorded range [{t[0]}, {t[-1]}]")
        pos = self.positions(copy)
        return GroupPoint(*(float(np.interp(time, t, pos[:, k])) for k in range(3)))


def area_difference_at_start(x: GroupPoint, x_tilde: GroupPoint) -> float:
    """A(0) = a - a~ + b1 b~2 - b2 b~1."""
    return x.z - x_tilde.z + x.x * x_tilde.y - x.y * x_tilde.x


def _area_increments(b1: np.ndarray, b2: np.ndarray) -> np.ndarray:
    return np.cumsum(b1[:-1] * np.diff(b2) - b2[:-1] * np.diff(b1))


def _levy(b1: np.ndarray, b2: np.ndarray, a0: float) -> np.ndarray:
    out = np.empty_like(b1)
    out[0] = a0
    out[1:] = a0 + _area_increments(b1, b2)
    return out


def _normals(seed: SeedSpec, stream: Stream, interval: int, n: int, scale: float) -> np.ndarray:
    return seed.with_stream(stream).generator(interval).standard_normal(n) * scale


def _path(start: float, increments: np.ndarray) -> np.ndarray:
    out = np.empty(increments.size + 1)
    out[0] = start
    np.cumsum(increments, out=out[1:])
    out[1:] += start
    return out


@dataclass
class _State:
    t: float
    b1: float
    b2: float
    b2t: float
    x3: float
    x3t: float


def _sync_blocks(state: _State, t_end: float, scale: float, first_block: int,
                 seed: SeedSpec, cfg: CouplingConfig, segments: list, phase: str) -> _State:
    """Evolve both copies with identical noise on geometric blocks until ``t_end``."""
    S = cfg.steps_per_interval
    k = first_block
    origin = state.t - scale * (2.0**k - 1)
    while state.t < t_end:
        length = scale * 2.0**k
        h = length / S
        db1 = _normals(seed, Stream.SYNC_B1, k, S, math.sqrt(h))
        db2 = _normals(seed, Stream.SYNC_B2, k, S, math.sqrt(h))
        t = state.t + h * np.arange(S + 1)
        t[-1] = origin + scale * (2.0 ** (k + 1) - 1)
        b1 = _path(state.b1, db1)
        b2 = _path(state.b2, db2)
        x3 = _levy(b1, b2, state.x3)
        if state.b2t == state.b2:
            # identical planar paths: the areas differ by a constant offset
            b2t = b2.copy()
            x3t = x3 + (state.x3t - state.x3)
        else:
            b2t = b2 + (state.b2t - state.b2)
            x3t = _levy(b1, b2t, state.x3t)
        segments.append(_Segment(phase, t, b1, b2, b2t, x3, x3t))
        state = _State(float(t[-1]), float(b1[-1]), float(b2[-1]), float(b2t[-1]),
                       float(x3[-1]), float(x3t[-1]))
        k += 1
    return state


def reflection_phase(start: _State, seed: SeedSpec, cfg: CouplingConfig, record: bool = True):
    """Reflection-couple the second coordinates until they meet.

    ``B1`` is shared; ``B2~ = 2m - B2`` with ``m`` the midpoint of the two
    second coordinates.  The meeting time ``T1`` is the first crossing of
    ``m`` by ``B2`` (bridge-refined).  The copies are merged at the grid node
    following ``T1``; since ``B2(T1) = m`` the reflected path equals ``B2``
    there exactly.

    Blocks are ``[s (2^k - 1), s (2^{k+1} - 1)]`` with ``s = |b2 - b2~|^2``,
    each with ``steps_per_interval`` steps.

    Returns ``(t1, state_at_switch, segments, censored)``.  The state is
    taken at the merge node, where both planar coordinates agree.
    """
    segments: list = []
    d = abs(start.b2 - start.b2t)
    if d == 0.0:
        return start.t, start, segments, False
    m = 0.5 * (start.b2 + start.b2t)
    scale = d * d
    S = cfg.steps_per_interval
    state = start
    k = 0
    while True:
        t0 = start.t + scale * (2.0**k - 1)
        if t0 >= cfg.horizon:
            return cfg.horizon, state, segments, True
        length = scale * 2.0**k
        h = length / S
        db1 = _normals(seed, Stream.REFLECT_B1, k, S, math.sqrt(h))
        db2 = _normals(seed, Stream.REFLECT_B2, k, S, math.sqrt(h))
        b2 = _path(state.b2, db2)
        grid = P.TimeGrid(t0, start.t + scale * (2.0 ** (k + 1) - 1), S)
        t_hit, step = P.first_crossing(
            P.ScalarPath(grid, b2), m,
            seed.with_stream(Stream.REFLECT_CROSSING), interval=k,
            refine=cfg.crossing_refinement, return_step=True,
        )
        b1 = _path(state.b1, db1)
        t = grid.times()
        if math.isfinite(t_hit):
            j = step + 1
            t, b1, b2 = t[: j + 1], b1[: j + 1], b2[: j + 1]
            b2t = 2.0 * m - b2
            b2t[j] = b2[j]
        else:
            b2t = 2.0 * m - b2
        x3 = _levy(b1, b2, state.x3)
        x3t = _levy(b1, b2t, state.x3t)
        if record and t.size > 1:
            segments.append(_Segment("reflection", t, b1, b2, b2t, x3, x3t))
        state = _State(float(t[-1]), float(b1[-1]), float(b2[-1]), float(b2t[-1]),
                       float(x3[-1]), float(x3t[-1]))
        if math.isfinite(t_hit):
            if t_hit > cfg.horizon:
                return cfg.horizon, state, segments, True
            return float(t_hit), state, segments, False
        k += 1


@dataclass
class DyadicResult:
    tau: float
    censored: bool
    intervals_used: int
    state: _State
    segments: list
    d_history: list


def dyadic_area_phase(start: _State, d0: float, seed: SeedSpec, cfg: CouplingConfig,
                      record: bool = True, swapped: bool = False,
                      extend: bool = True) -> DyadicResult:
    """Couple the area gap ``d0 = X3_lead - X3_follow > 0`` on dyadic intervals.

    Work happens in time rescaled by ``d0`` (space by ``sqrt(d0)``), so the
    rescaled gap starts at 1.  On interval ``n`` (length ``T = 2^n``):

    * a shared ``B1`` increment path gives ``lam = lambda_n(end)``;
    * an auxiliary Brownian motion ``W`` on ``[0, T]`` is run to its first
      crossing of ``L = D_n / (2 lam)``;
    * the lead copy's first KL coefficient is ``W(T)/sqrt(T)`` and the
      follower's is that of ``W`` mirrored until the crossing;
    * ``D_{n+1} = D_n - 2 W(T ^ sigma) lam``, which is exactly 0 iff ``W``
      crossed ``L`` in time.

    ``lam`` uses step-averaged weights so that this closed form equals the
    change of the discrete area difference.  With ``swapped`` the second
    copy leads.  Planar paths are only built when ``record`` is set; the
    coupling time does not depend on them.  With ``record`` and ``extend``
    the coupled paths are continued synchronously up to the horizon.
    """
    S = cfg.steps_per_interval
    t_origin = start.t
    if d0 == 0.0:
        segs: list = []
        state = start
        if record and extend:
            state = _sync_blocks(start, cfg.horizon, 1.0, 0, seed, cfg, segs, "synchronous")
        return DyadicResult(start.t, False, 0, state, segs, [0.0])
    if d0 < 0:
        raise PreconditionError("d0 must be non-negative; pass |A(T1)| and set swapped")
    r = math.sqrt(d0)
    D = 1.0
    history = [D]
    state = start
    segments: list = []
    refine = cfg.crossing_refinement
    tau = cfg.horizon
    censored = True
    used = 0
    for n in range(cfg.max_dyadic_index + 1):
        c_start = t_origin + d0 * (2.0**n - 1)
        c_end = t_origin + d0 * (2.0 ** (n + 1) - 1)
        if c_start >= cfg.horizon:
            break
        used += 1
        T = 2.0**n
        grid = P.TimeGrid(T - 1, 2 * T - 1, S)
        h = grid.h
        db1 = _normals(seed, Stream.DYADIC_B1, n, S, math.sqrt(h))
        lam = float(np.dot(P.lambda_weights(grid, n, "average"), db1))

        dw = _normals(seed, Stream.DYADIC_W, n, S, math.sqrt(h))
        w = _path(0.0, dw)
        w_end = float(w[-1])
        hit = False
        level = math.inf
        if lam != 0.0:
            level = D / (2.0 * lam)
            u = None
            if refine:
                u = seed.with_stream(Stream.DYADIC_W_CROSSING).generator(n).random(S)
            hit = P.first_crossing_step(w, level, h, u) >= 0
        z_lead = w_end / math.sqrt(T)
        z_follow = (w_end - 2.0 * level) / math.sqrt(T) if hit else -w_end / math.sqrt(T)
        D_next = 0.0 if hit else D - 2.0 * w_end * lam

        if record:
            raw = P.bridge_from_bm(
                _path(0.0, _normals(seed, Stream.DYADIC_BRIDGE, n, S, math.sqrt(h))), grid
            )
            bridge = P.ScalarPath(grid, raw)
            g_end = float(_normals(seed, Stream.DYADIC_ENDPOINT, n, 1, math.sqrt(T))[0])
            lead = P.assemble_bm(P.replace_first_kl(bridge, z_lead), g_end).values
            follow = P.assemble_bm(P.replace_first_kl(bridge, z_follow), g_end).values
            if swapped:
                lead, follow = follow, lead
            t = t_origin + d0 * grid.times()
            b1 = _path(state.b1, r * db1)
            b2 = state.b2 + r * lead
            b2t = state.b2t + r * follow
            x3 = _levy(b1, b2, state.x3)
            x3t = _levy(b1, b2t, state.x3t)
            if hit and c_end <= cfg.horizon:
                # the closed form says the gap is exactly 0; remove round-off
                x3t[-1] = x3[-1]
            b2t[-1] = b2[-1]
            segments.append(_Segment(f"dyadic[{n}]", t, b1, b2, b2t, x3, x3t))
            state = _State(float(t[-1]), float(b1[-1]), float(b2[-1]), float(b2t[-1]),
                           float(x3[-1]), float(x3t[-1]))
        D = D_next
        history.append(D)
        if hit:
            if c_end <= cfg.horizon:
                tau, censored = c_end, False
            break
    if record and extend and not censored:
        k = used
        while t_origin + d0 * (2.0**k - 1) < cfg.horizon and k <= cfg.max_dyadic_index + 64:
            block_state = _sync_blocks(state, t_origin + d0 * (2.0 ** (k + 1) - 1), d0, k,
                                       seed, cfg, segments, "synchronous")
            state = block_state
            k += 1
    return DyadicResult(tau, censored, used, state, segments, history)


def _prepare(x: GroupPoint, x_tilde: GroupPoint):
    rot, xr, xtr = reduce_to_common_b1(x, x_tilde)
    start = _State(0.0, xr.x, xr.y, xtr.y, xr.z, xtr.z)
    return rot, start


def _run(x, x_tilde, cfg, seed, record, extend):
    rot, start = _prepare(x, x_tilde)
    strategy = cfg.strategy
    segments: list = []
    if x == x_tilde:
        out = CouplingOutcome(0.0, 0.0, 0.0, 0, seed)
        if record and extend:
            _sync_blocks(start, cfg.horizon, 1.0, 0, seed, cfg, segments, "synchronous")
        return out, rot, segments

    if strategy == "synchronous":
        out = CouplingOutcome(cfg.horizon, cfg.horizon, area_difference_at_start(x, x_tilde), 0,
                              seed, tau_censored=True, t1_censored=start.b2 != start.b2t)
        if start.b2 == start.b2t:
            out = replace(out, t1=0.0)
        if record:
            _sync_blocks(start, cfg.horizon, 1.0, 0, seed, cfg, segments, "synchronous")
        return out, rot, segments

    if strategy == "area_only_dyadic" and start.b2 != start.b2t:
        raise PreconditionError(
            "area_only_dyadic needs equal planar starts: |b - b~| = "
            f"{math.hypot(x.x - x_tilde.x, x.y - x_tilde.y)} > 0"
        )

    t1, state, refl_segments, t1_cens = reflection_phase(start, seed, cfg, record)
    segments.extend(refl_segments)
    a_t1 = state.x3 - state.x3t
    if t1_cens:
        out = CouplingOutcome(cfg.horizon, cfg.horizon, a_t1, 0, seed,
                              tau_censored=True, t1_censored=True)
        return out, rot, segments

    if strategy == "reflection_planar":
        coupled = a_t1 == 0.0
        out = CouplingOutcome(t1 if coupled else cfg.horizon, t1, a_t1, 0, seed,
                              tau_censored=not coupled)
        if record and extend:
            _sync_blocks(state, cfg.horizon, max(state.t, 1.0), 0, seed, cfg, segments,
                         "synchronous")
        return out, rot, segments

    swapped = a_t1 < 0
    res = dyadic_area_phase(state, abs(a_t1), seed, cfg, record=record, swapped=swapped,
                            extend=extend)
    segments.extend(res.segments)
    out = CouplingOutcome(res.tau, t1, a_t1, res.intervals_used, seed,
                          tau_censored=res.censored, swapped=swapped)
    return out, rot, segments


def couple(x: GroupPoint, x_tilde: GroupPoint, cfg: CouplingConfig = CouplingConfig(),
           seed: SeedSpec = SeedSpec(0)) -> CouplingOutcome:
    """Run one coupling and return its summary (no paths are built)."""
    out, _, _ = _run(x, x_tilde, cfg, seed, record=False, extend=False)
    return out


def simulate_coupling(x: GroupPoint, x_tilde: GroupPoint,
                      cfg: CouplingConfig = CouplingConfig(),
                      seed: SeedSpec = SeedSpec(0), extend: bool = True) -> CoupledTrajectory:
    """Run one coupling and keep the joint paths.

    With ``extend`` the paths continue (synchronously after coupling) up to
    the horizon; otherwise they stop at the coupling time.  The outcome is
    identical to :func:`couple` with the same seed.
    """
    out, rot, segments = _run(x, x_tilde, cfg, seed, record=True, extend=extend)
    return CoupledTrajectory(rot, out, segments)


def synchronous_couple(x: GroupPoint, x_tilde: GroupPoint, cfg: CouplingConfig = CouplingConfig(),
                       seed: SeedSpec = SeedSpec(0)) -> CoupledTrajectory:
    """Both copies driven by identical noise; couples only if ``x == x_tilde``."""
    return simulate_coupling(x, x_tilde, replace(cfg, strategy="synchronous"), seed)


def exit_time(trajectory: CoupledTrajectory, center: GroupPoint, radius: float,
              copy: int = 0) -> float:
    """First recorded time with ``rho(position, center) >= radius``; ``inf`` if none."""
    if not radius > 0:
        raise PreconditionError("radius must be positive")
    t = trajectory.t
    if t.size == 0:
        return math.inf
    pos = trajectory.positions(copy)
    dx = pos[:, 0] - center.x
    dy = pos[:, 1] - center.y
    cross = pos[:, 2] - center.z + pos[:, 0] * center.y - pos[:, 1] * center.x
    dist_sq = dx * dx + dy * dy + np.abs(cross)
    out = np.nonzero(dist_sq >= radius * radius)[0]
    return float(t[out[0]]) if out.size else math.inf

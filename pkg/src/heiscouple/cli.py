"""``heiscouple`` command-line interface.

Every subcommand accepts ``--config FILE.toml``; a table named after the
subcommand supplies defaults, and explicit flags win over it.  Outputs go to
``--out`` (a directory) and each file carries the run configuration and seed
in a metadata header.  The worker count (``--threads``, default from
``HEISCOUPLE_THREADS``) never changes any output.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from . import analysis as AN
from . import paths as P
from .coupling import STRATEGIES, CouplingConfig, PreconditionError, simulate_coupling
from .heis_core import (
    CCSolverConfig,
    cc_distance,
    inverse,
    multiply,
    parse_point,
    reduce_to_common_b1,
    rho,
)
from .rng import SeedSpec, Stream
from .runner import default_workers, run_couplings, write_csv, write_json, write_jsonl

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

__all__ = ["main", "run", "RunConfig", "build_parser"]


@dataclass
class RunConfig:
    """Everything that determines a run's outputs (the worker count does not)."""

    command: str
    params: dict = field(default_factory=dict)
    master_seed: int = 0
    out: str = "."

    def metadata(self) -> dict:
        return {"command": self.command, "params": self.params, "master_seed": self.master_seed,
                "version": __version__}


def _point(text: str):
    try:
        return parse_point(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _common(p: argparse.ArgumentParser, out_default: str) -> None:
    p.add_argument("--seed", type=_seed, default=0, help="master seed (default 0)")
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="worker processes (default: $HEISCOUPLE_THREADS or 1)")
    p.add_argument("--out", default=out_default, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heiscouple", description=__doc__.splitlines()[0])
    parser.add_argument("--config", type=Path, default=None, help="TOML file of defaults")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("group", help="group arithmetic and distances")
    g.add_argument("--from", dest="p", type=_point, required=True, metavar="X,Y,Z")
    g.add_argument("--to", dest="q", type=_point, default=None, metavar="X,Y,Z")
    g.add_argument("--dist", choices=("cc", "rho"), default=None)
    g.add_argument("--op", choices=("multiply", "inverse", "reduce"), default=None)
    g.add_argument("--tolerance", type=float, default=1e-12)

    s = sub.add_parser("simulate", help="dump Heisenberg BM paths (or one coupled run) as CSV")
    s.add_argument("--from", dest="p", type=_point, default=parse_point("0,0,0"))
    s.add_argument("--to", dest="q", type=_point, default=None,
                   help="if given, dump one coupled trajectory of the two starts")
    s.add_argument("--t", type=float, default=1.0)
    s.add_argument("--steps", type=_positive_int, default=1000)
    s.add_argument("--n", type=_positive_int, default=1)
    s.add_argument("--trajectory", type=int, default=0)
    s.add_argument("--steps-per-interval", type=_positive_int, default=512)
    _common(s, "heiscouple_simulate")

    c = sub.add_parser("couple", help="Monte Carlo coupling runs")
    c.add_argument("--from", dest="p", type=_point, required=True)
    c.add_argument("--to", dest="q", type=_point, required=True)
    c.add_argument("--n", type=_positive_int, default=10_000)
    c.add_argument("--horizon", type=float, default=4095.0)
    c.add_argument("--steps-per-interval", type=_positive_int, default=2048)
    c.add_argument("--strategy", choices=STRATEGIES, default="nonmarkovian_two_step")
    c.add_argument("--times", type=_floats, default=None,
                   help="survival times (default 2^k - 1 up to the horizon)")
    c.add_argument("--fit", action="store_true", help="fit a log-log slope to the tail")
    c.add_argument("--min-count", type=_positive_int, default=50)
    _common(c, "heiscouple_couple")

    t = sub.add_parser("tv", help="analytic TV scan with optional empirical comparison")
    t.add_argument("--a-diff", type=float, default=1.0)
    t.add_argument("--t", type=_floats, default=[2.0])
    t.add_argument("--n", type=int, default=0, help="empirical sample size (0 skips it)")
    t.add_argument("--bins", type=_positive_int, default=201)
    t.add_argument("--steps", type=_positive_int, default=256)
    _common(t, "heiscouple_tv")

    lm = sub.add_parser("tail-lemma", help="tail of the stopped stochastic integral")
    lm.add_argument("--b", type=float, default=1.0)
    lm.add_argument("--y", type=_floats, default=[1.0, 4.0, 16.0, 64.0])
    lm.add_argument("--n", type=_positive_int, default=100_000)
    lm.add_argument("--horizon", type=float, default=1e3)
    lm.add_argument("--steps", type=_positive_int, default=1024)
    _common(lm, "heiscouple_tail_lemma")

    e = sub.add_parser("exit", help="probability of exiting a ball before coupling")
    e.add_argument("--from", dest="p", type=_point, default=parse_point("0,0,0"))
    e.add_argument("--delta", type=float, default=1.0)
    e.add_argument("--offsets", type=_floats, default=[1 / 256, 1 / 128, 1 / 64])
    e.add_argument("--variants", default="planar,area")
    e.add_argument("--n", type=_positive_int, default=10_000)
    e.add_argument("--horizon", type=float, default=None)
    e.add_argument("--steps-per-interval", type=_positive_int, default=512)
    _common(e, "heiscouple_exit")

    v = sub.add_parser("verify", help="run the acceptance suite")
    v.add_argument("--suite", choices=("quick", "full"), default="quick")
    v.add_argument("--only", type=_floats, default=None, help="criterion numbers to run")
    _common(v, "heiscouple_verify")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path, default=None)
    known, _ = pre.parse_known_args(argv)
    if known.config is None:
        return
    with open(known.config, "rb") as fh:
        data = tomllib.load(fh)
    subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for name, table in data.items():
        if name not in subs.choices or not isinstance(table, dict):
            raise ValueError(f"config: unknown section [{name}]")
        sp = subs.choices[name]
        dests = {a.dest: a for a in sp._actions}
        flags = {opt.lstrip("-").replace("-", "_"): a for a in sp._actions
                 for opt in a.option_strings}
        defaults = {}
        for key, value in table.items():
            action = flags.get(key.replace("-", "_")) or dests.get(key)
            if action is None:
                raise ValueError(f"config: unknown key {key!r} in [{name}]")
            if action.type is not None and not isinstance(value, list):
                value = action.type(str(value))
            elif isinstance(value, list):
                value = [float(x) for x in value]
            defaults[action.dest] = value
            action.required = False
        sp.set_defaults(**defaults)


def _outdir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_group(args) -> int:
    p, q = args.p, args.q
    if args.dist is None and args.op is None:
        raise ValueError("group: give --dist cc|rho or --op multiply|inverse|reduce")
    if args.dist is not None:
        if q is None:
            raise ValueError("group --dist needs --to")
        if args.dist == "cc":
            print(repr(cc_distance(p, q, CCSolverConfig(tolerance=args.tolerance))))
        else:
            print(repr(rho(p, q)))
    if args.op == "inverse":
        print(",".join(repr(c) for c in inverse(p)))
    elif args.op == "multiply":
        if q is None:
            raise ValueError("group --op multiply needs --to")
        print(",".join(repr(c) for c in multiply(p, q)))
    elif args.op == "reduce":
        if q is None:
            raise ValueError("group --op reduce needs --to")
        rot, p2, q2 = reduce_to_common_b1(p, q)
        print(f"angle={rot.angle!r}")
        print(",".join(repr(c) for c in p2))
        print(",".join(repr(c) for c in q2))
    return 0


def _cmd_simulate(args, cfg: RunConfig) -> int:
    out = _outdir(args.out)
    if args.q is None:
        grid = P.TimeGrid(0.0, args.t, args.steps)
        b1, b2, x3 = P.heisenberg_bm(grid, args.p, SeedSpec(args.seed, 0, Stream.BM), size=args.n)
        times = grid.times()
        rows = ((i, float(times[j]), float(b1.values[i, j]), float(b2.values[i, j]),
                 float(x3.values[i, j])) for i in range(args.n) for j in range(times.size))
        with open(out / "paths.csv", "w") as fh:
            write_csv(fh, ["path", "t", "x", "y", "z"], rows, cfg.metadata())
        print(f"wrote {args.n} path(s) to {out / 'paths.csv'}")
        return 0
    ccfg = CouplingConfig(steps_per_interval=args.steps_per_interval, horizon=args.t)
    traj = simulate_coupling(args.p, args.q, ccfg, SeedSpec(args.seed, args.trajectory))
    p0, p1 = traj.positions(0), traj.positions(1)
    seg_phase = [s.phase for s in traj.segments for _ in range(s.t.size - 1)]
    phases = (seg_phase[:1] or ["start"]) + seg_phase
    rows = ((float(tt), ph, *map(float, a), *map(float, b), float(ad))
            for tt, ph, a, b, ad in zip(traj.t, phases, p0, p1, traj.area_difference()))
    with open(out / "coupled_path.csv", "w") as fh:
        write_csv(fh, ["t", "phase", "x", "y", "z", "x_tilde", "y_tilde", "z_tilde", "A"],
                  rows, {**cfg.metadata(), "outcome": traj.outcome.to_dict()})
    print(f"wrote coupled trajectory to {out / 'coupled_path.csv'}")
    print(f"tau={traj.outcome.tau!r} censored={traj.outcome.tau_censored}")
    return 0


def _cmd_couple(args, cfg: RunConfig) -> int:
    out = _outdir(args.out)
    ccfg = CouplingConfig(strategy=args.strategy, steps_per_interval=args.steps_per_interval,
                          horizon=args.horizon)
    outs = run_couplings(args.p, args.q, ccfg, args.seed, args.n, workers=args.threads)
    meta = {**cfg.metadata(), "coupling": ccfg.to_dict()}
    with open(out / "outcomes.jsonl", "w") as fh:
        write_jsonl(outs, fh, meta)
    times = args.times
    if times is None:
        times = [2.0**k - 1 for k in range(1, 64) if 2.0**k - 1 <= args.horizon]
    tail = AN.estimate_tail(outs, times)
    with open(out / "tail.csv", "w") as fh:
        write_csv(fh, ["t", "survival", "ci_half_width", "uncoupled"], tail.rows(), meta)
    report = {"tail": tail, "censored_fraction": sum(o.tau_censored for o in outs) / len(outs)}
    print(f"{'t':>10} {'P(tau>t)':>10} {'ci':>10} {'count':>8}")
    for t, s, c, k in tail.rows():
        print(f"{t:10.4g} {s:10.5f} {c:10.5f} {k:8d}")
    if args.fit:
        fit = AN.fit_power_law(tail, args.min_count)
        report["fit"] = fit
        print(f"fitted slope {fit.slope:.4f} +/- {fit.stderr:.4f} over t in "
              f"[{fit.t_range[0]:g}, {fit.t_range[1]:g}] ({fit.n_points} points)")
    with open(out / "report.json", "w") as fh:
        write_json(report, fh, meta)
    return 0


def _cmd_tv(args, cfg: RunConfig) -> int:
    out = _outdir(args.out)
    reports = [AN.tv_report(args.a_diff, t, n_empirical=args.n, bins=args.bins, steps=args.steps,
                            master_seed=args.seed) for t in args.t]
    rows = [(r.t, r.analytic_lower, r.marginal_lower, r.empirical_tv) for r in reports]
    with open(out / "tv.csv", "w") as fh:
        write_csv(fh, ["t", "analytic_lower", "marginal_lower", "empirical_tv"], rows,
                  cfg.metadata())
    with open(out / "report.json", "w") as fh:
        write_json({"tv": reports}, fh, cfg.metadata())
    print(f"{'t':>8} {'analytic':>10} {'marginal':>10} {'empirical':>10}")
    for r in rows:
        print(f"{r[0]:8.4g} {r[1]:10.5f} {r[2]:10.5f} {r[3]:10.5f}")
    return 0


def _cmd_tail_lemma(args, cfg: RunConfig) -> int:
    out = _outdir(args.out)
    rep = AN.lemma_tail_check(args.b, args.y, args.n, horizon=args.horizon,
                              steps_per_block=args.steps, master_seed=args.seed)
    with open(out / "report.json", "w") as fh:
        write_json(rep, fh, cfg.metadata())
    print(f"{'y':>8} {'P(I>y)':>10} {'se':>10} {'bound':>10}")
    for y, p, se, bd in zip(rep.y_values, rep.exceedance, rep.standard_error, rep.bound):
        print(f"{y:8.4g} {p:10.5f} {se:10.5f} {bd:10.5f}")
    print(f"censored fraction {rep.censored_fraction:.5f} at horizon {rep.horizon:g}")
    return 0


def _cmd_exit(args, cfg: RunConfig) -> int:
    out = _outdir(args.out)
    variants = tuple(v.strip() for v in args.variants.split(",") if v.strip())
    rep = AN.exit_experiment(args.p, args.delta, args.offsets, args.n, variants=variants,
                             horizon=args.horizon, steps_per_interval=args.steps_per_interval,
                             master_seed=args.seed, workers=args.threads)
    with open(out / "report.json", "w") as fh:
        write_json(rep, fh, cfg.metadata())
    print(f"{'variant':>8} {'offset':>10} {'P':>9} {'ci_low':>9} {'ci_high':>9} {'P/offset':>9}")
    for r in rep.rows:
        print(f"{r['variant']:>8} {r['offset']:10.5g} {r['probability']:9.5f} "
              f"{r['ci_low']:9.5f} {r['ci_high']:9.5f} {r['ratio']:9.4f}")
    return 0


def _cmd_verify(args, cfg: RunConfig) -> int:
    from .verify import run_suite

    out = _outdir(args.out)
    only = None if args.only is None else {int(v) for v in args.only}
    results = run_suite(args.suite, args.seed, args.threads, only=only,
                        echo=lambda r: print(r.line(), flush=True))
    report = {"suite": args.suite, "criteria": results,
              "all_passed": all(r.passed for r in results)}
    with open(out / "verify_report.json", "w") as fh:
        write_json(report, fh, cfg.metadata())
    print(f"{sum(r.passed for r in results)}/{len(results)} criteria passed")
    return 0


_HANDLERS = {"simulate": _cmd_simulate, "couple": _cmd_couple, "tv": _cmd_tv,
             "tail-lemma": _cmd_tail_lemma, "exit": _cmd_exit, "verify": _cmd_verify}

# flags that do not influence outputs and so stay out of the metadata
_NON_OUTPUT = {"threads", "out", "config", "command", "seed"}


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except (OSError, ValueError, tomllib.TOMLDecodeError) as exc:
        print(f"heiscouple: error: {exc}", file=sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if hasattr(args, "threads") and args.threads is None:
            args.threads = default_workers()
        if args.command == "group":
            return _cmd_group(args)
        params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(args).items()
                  if k not in _NON_OUTPUT}
        params = {k: (",".join(repr(c) for c in v) if hasattr(v, "as_array") else v)
                  for k, v in params.items()}
        cfg = RunConfig(args.command, params, args.seed, args.out)
        return _HANDLERS[args.command](args, cfg)
    except (PreconditionError, ValueError) as exc:
        print(f"heiscouple: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report and map to the internal-error code
        print(f"heiscouple: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

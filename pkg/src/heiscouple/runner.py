"""Deterministic batch execution and output writers.

Every trajectory is a pure function of its index (through its
:class:`~heiscouple.rng.SeedSpec`), so running chunks of indices on several
worker processes and concatenating the chunk results in index order gives
the same output as a serial run, whatever the worker count.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from typing import Callable, Iterable, Sequence, TextIO

from .coupling import CouplingConfig, CouplingOutcome, couple
from .heis_core import GroupPoint
from .rng import SeedSpec

__all__ = [
    "THREADS_ENV",
    "default_workers",
    "parallel_map",
    "run_couplings",
    "write_jsonl",
    "read_jsonl",
    "write_csv",
    "write_json",
    "to_jsonable",
]

THREADS_ENV = "HEISCOUPLE_THREADS"


def default_workers() -> int:
    """Worker count from ``HEISCOUPLE_THREADS`` (default 1)."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be >= 1, got {n}")
    return n


def _apply_chunk(fn: Callable, lo: int, hi: int) -> list:
    return [fn(i) for i in range(lo, hi)]


def parallel_map(fn: Callable[[int], object], n: int, workers: int | None = None,
                 chunk_size: int = 1024, start: int = 0) -> list:
    """``[fn(i) for i in range(start, start + n)]``, possibly on worker processes.

    ``fn`` must be picklable when ``workers > 1`` (a module-level function or
    a ``functools.partial`` of one).  Results come back in index order.
    """
    workers = default_workers() if workers is None else int(workers)
    if workers < 1:
        raise ValueError("workers must be >= 1")
    bounds = [(lo, min(lo + chunk_size, start + n)) for lo in range(start, start + n, chunk_size)]
    if workers == 1 or len(bounds) <= 1:
        return _apply_chunk(fn, start, start + n)
    out: list = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for part in pool.map(_apply_chunk, [fn] * len(bounds), *zip(*bounds)):
            out.extend(part)
    return out


def _couple_one(index: int, x: GroupPoint, x_tilde: GroupPoint, cfg: CouplingConfig,
                master_seed: int) -> CouplingOutcome:
    return couple(x, x_tilde, cfg, SeedSpec(master_seed, index))


def run_couplings(x: GroupPoint, x_tilde: GroupPoint, cfg: CouplingConfig, master_seed: int,
                  n: int, *, workers: int | None = None, start_index: int = 0) -> list[CouplingOutcome]:
    """Run trajectories ``start_index .. start_index + n - 1`` of a coupling experiment."""
    if n < 1:
        raise ValueError("n must be >= 1")
    fn = partial(_couple_one, x=x, x_tilde=x_tilde, cfg=cfg, master_seed=master_seed)
    return parallel_map(fn, n, workers, start=start_index)


def to_jsonable(obj):
    """Recursively convert dataclass reports, numpy scalars and arrays for ``json``."""
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if hasattr(obj, "tolist"):
        return to_jsonable(obj.tolist())
    if isinstance(obj, float) and not math.isfinite(obj):
        # JSON has no infinities; keep them readable and unambiguous
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    return obj


def _dumps(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, separators=(",", ":"))


def write_jsonl(outcomes: Iterable[CouplingOutcome], fh: TextIO, metadata: dict) -> None:
    """One metadata line ``{"metadata": ...}`` followed by one outcome per line."""
    fh.write(_dumps({"metadata": metadata}) + "\n")
    for o in outcomes:
        fh.write(_dumps(o.to_dict()) + "\n")


def read_jsonl(fh: TextIO) -> tuple[dict, list[CouplingOutcome]]:
    lines = [ln for ln in fh if ln.strip()]
    meta = json.loads(lines[0]).get("metadata", {}) if lines else {}

    def _num(v):
        return float(v) if isinstance(v, str) else v

    outs = []
    for ln in lines[1:]:
        d = json.loads(ln)
        for key in ("tau", "t1", "a_at_t1"):
            d[key] = _num(d[key])
        outs.append(CouplingOutcome.from_dict(d))
    return meta, outs


def write_csv(fh: TextIO, header: Sequence[str], rows: Iterable[Sequence], metadata: dict) -> None:
    """CSV with a leading ``# {json metadata}`` comment line."""
    fh.write("# " + _dumps(metadata) + "\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_json(obj, fh: TextIO, metadata: dict) -> None:
    payload = {"metadata": metadata, "report": obj}
    fh.write(json.dumps(to_jsonable(payload), sort_keys=True, indent=2) + "\n")

"""Acceptance suite at full scale.

Each test runs one criterion with the ``full`` preset, prints a single
``criterion N PASS/FAIL`` line and asserts the verdict.  Run on its own with

    pytest -m acceptance -s tests/test_acceptance.py

Expect tens of minutes on one core; ``HEISCOUPLE_THREADS`` spreads the
Monte Carlo work over processes without changing any number.
"""

import subprocess
import sys

import pytest

from heiscouple.runner import default_workers
from heiscouple.verify import CRITERIA, PRESETS, _Cache

pytestmark = pytest.mark.acceptance

SEED = 0


@pytest.fixture(scope="module")
def cache():
    # criteria 1 and 4 share the outcomes from (0, 0, 1) vs e
    return _Cache()


@pytest.mark.parametrize("number", range(1, 10))
def test_criterion(number, cache, report_line):
    res = CRITERIA[number](PRESETS["full"], SEED, default_workers(), cache)
    print()
    print(res.line())
    report_line(res.line())
    assert res.passed, res.line()


def test_criterion_10_cli_determinism(tmp_path, report_line):
    outs = []
    for threads in ("1", "2"):
        out = tmp_path / f"threads{threads}"
        cmd = [sys.executable, "-m", "heiscouple.cli", "verify", "--suite", "quick",
               "--seed", "7", "--threads", threads, "--out", str(out)]
        subprocess.run(cmd, check=True, capture_output=True)
        outs.append((out / "verify_report.json").read_bytes())
    ok = outs[0] == outs[1]
    line = (f"criterion 10 {'PASS' if ok else 'FAIL'}: determinism: "
            f"verify --suite quick with 1 and 2 threads {'byte-identical' if ok else 'differ'}")
    print()
    print(line)
    report_line(line)
    assert ok

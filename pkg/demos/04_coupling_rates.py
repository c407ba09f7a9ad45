"""
How fast do the copies couple?
==============================

Starting points that differ only in the third coordinate couple at rate
1/t; a planar offset costs a slower 1/sqrt(t).  Fit both exponents from
Monte Carlo survival curves.
"""

from heiscouple import analysis as an
from heiscouple.coupling import CouplingConfig
from heiscouple.heis_core import IDENTITY, GroupPoint
from heiscouple.runner import default_workers, run_couplings

cfg = CouplingConfig(steps_per_interval=256, horizon=1023.0)
times = [2.0**k - 1 for k in range(2, 11)]
for start in (GroupPoint(0, 0, 1), GroupPoint(0, 1, 0)):
    outs = run_couplings(start, IDENTITY, cfg, master_seed=0, n=20_000, workers=default_workers())
    tail = an.estimate_tail(outs, times)
    fit = an.fit_power_law(tail)
    print(f"start {tuple(start)} vs e: slope {fit.slope:.3f} +/- {fit.stderr:.3f}")
    for t, s, c, _ in tail.rows():
        print(f"   P(tau > {t:6g}) = {s:.4f} +/- {c:.4f}")

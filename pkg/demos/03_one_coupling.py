"""
Anatomy of one coupled run
==========================

Follow a single two-phase coupling: a reflection phase brings the planar
parts together, then a dyadic phase drives the area gap A to zero.
"""

from heiscouple.coupling import CouplingConfig, simulate_coupling
from heiscouple.heis_core import IDENTITY, GroupPoint
from heiscouple.rng import SeedSpec

x, x_tilde = GroupPoint(0, 1, 0.5), IDENTITY
cfg = CouplingConfig(steps_per_interval=512, horizon=4095.0)
traj = simulate_coupling(x, x_tilde, cfg, SeedSpec(master_seed=4), extend=False)
out = traj.outcome
print(f"planar parts met at T1 = {out.t1:.4f} with A(T1) = {out.a_at_t1:.4f}")
print(f"coupled at tau = {out.tau:.4f} after {out.dyadic_intervals_used} dyadic interval(s)")

# phase by phase, at the end of each recorded segment
a = traj.area_difference()
for seg in traj.segments:
    i = traj.t.searchsorted(seg.t[-1])
    p, q = traj.at(seg.t[-1], 0), traj.at(seg.t[-1], 1)
    print(f"{seg.phase:>12}  t={seg.t[-1]:9.4f}  |x - x~| = "
          f"({abs(p.x - q.x):.1e}, {abs(p.y - q.y):.1e}, {abs(p.z - q.z):.3e})  A={a[i]: .4f}")

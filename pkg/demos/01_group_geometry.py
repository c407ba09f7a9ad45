"""
Geometry of the Heisenberg group
================================

Group law, the homogeneous pseudo-metric rho and the Carnot-Caratheodory
distance, and how the two compare.
"""

import math

import numpy as np

from heiscouple.heis_core import (IDENTITY, GroupPoint, cc_distance, dilate, inverse,
                                  multiply, nu_bounds, reduce_to_common_b1, rho)

# the product picks up the signed area x1 y2 - x2 y1
p, q = GroupPoint(1, 0, 0), GroupPoint(0, 1, 0)
print("p * q =", multiply(p, q))
print("q * p =", multiply(q, p))
print("p^-1  =", inverse(p))

# distances from the identity: moving "vertically" costs a square root
for z in (0.01, 1.0, 100.0):
    v = GroupPoint(0, 0, z)
    print(f"z={z:7g}  rho={rho(IDENTITY, v):.5f}  d_cc={cc_distance(IDENTITY, v):.5f}"
          f"  sqrt(pi z)={math.sqrt(math.pi * z):.5f}")

# both distances are homogeneous under the dilation (x, y, z) -> (r x, r y, r^2 z)
v = GroupPoint(0.3, -0.2, 0.7)
for r in (0.5, 2.0, 10.0):
    print(f"r={r:5g}  d_cc ratio {cc_distance(IDENTITY, dilate(v, r)) / cc_distance(IDENTITY, v):.6f}")

# so their ratio is bounded; the bounds come from a one-dimensional search
lo, hi = nu_bounds()
rng = np.random.default_rng(0)
ratios = []
for _ in range(2000):
    a, b = (GroupPoint(*rng.normal(size=3)) for _ in range(2))
    ratios.append(cc_distance(a, b) / rho(a, b))
print(f"d_cc/rho on random pairs in [{min(ratios):.4f}, {max(ratios):.4f}]"
      f" within [{math.sqrt(lo):.4f}, {math.sqrt(hi):.4f}]")

# a rotation about the vertical axis aligns the first coordinates of two points
rot, a, b = reduce_to_common_b1(GroupPoint(1, 2, 0), GroupPoint(-1, 0.5, 3))
print(f"rotation {rot.angle:.4f} rad gives {a} and {b}")

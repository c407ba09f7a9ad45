"""
Heisenberg Brownian motion and Levy area
========================================

Simulate the planar Brownian motion together with its third coordinate and
compare the law of the area with its closed form.
"""

import numpy as np

from heiscouple import analysis as an
from heiscouple import paths
from heiscouple.heis_core import IDENTITY
from heiscouple.rng import SeedSpec

grid = paths.TimeGrid(0.0, 1.0, 512)
b1, b2, x3 = paths.heisenberg_bm(grid, IDENTITY, SeedSpec(1), size=50_000)
z = x3.values[:, -1]
print("mean and variance of X3(1):", z.mean().round(4), z.var().round(4))

# X3(t) = int B1 dB2 - int B2 dB1 has density (1/(2t)) sech(pi z / (2t)), variance t^2
edges = np.linspace(-4, 4, 17)
counts, _ = np.histogram(z, edges)
expected = np.diff(an.area_cdf(edges, 2.0)) * z.size
print(" bin centre   observed   expected")
for c, o, e in zip(0.5 * (edges[1:] + edges[:-1]), counts, expected):
    print(f"{c:10.2f} {o:10d} {e:10.1f}")

# the area is antisymmetric in the two drivers
w1, w2 = paths.sample_bm(grid, 0.0, SeedSpec(2)), paths.sample_bm(grid, 0.0, SeedSpec(3))
a = paths.levy_area(w1, w2, 0.0).values[-1]
b = paths.levy_area(w2, w1, 0.0).values[-1]
print("area(w1, w2) + area(w2, w1) =", a + b)

"""Covering numbers of synthetic space-time sets.

A segment in time is two-and-a-half dimensional for parabolic cylinders at
alpha = 5/4 but one dimensional for Euclidean balls.
"""

from fractions import Fraction

import numpy as np

from hypns import covering as cv

t = np.linspace(0.0, 1.0, 2001)
segment = np.column_stack([np.zeros((t.size, 3)), t])
deltas = [0.4, 0.2, 0.1, 0.05]

for gauge in ("parabolic", "euclidean"):
    est = cv.box_counting_estimate(segment, deltas, alpha=1.25, gauge=gauge)
    print(f"{gauge:>9}: counts {[int(n) for n in est['counts']]}, slope {est['slope']:.3f}")

print("box-dimension bound at alpha = 1, 5/4:",
      cv.box_dimension_bound(Fraction(1)), cv.box_dimension_bound(Fraction(5, 4)))

# %% Vitali selection on random cylinders
rng = np.random.default_rng(0)
fam = [cv.ParabolicCylinder(tuple(rng.uniform(0, 2, 3)), rng.uniform(0, 1), rng.uniform(0.05, 0.3), 1.25)
       for _ in range(200)]
sel = cv.vitali_select(fam).selected
pts_x = np.array([c.center_x for c in fam])
pts_t = np.array([c.centroid_t for c in fam])
print(f"kept {len(sel)} of {len(fam)} cylinders; 5x dilations cover all centroids:",
      bool(cv.covered_by(pts_x, pts_t, [cv.dilate(c, 5) for c in sel]).all()))

# %% premeasure bounds for P^beta_delta of a random point cloud
cloud = np.column_stack([rng.uniform(0, 1, (300, 3)), rng.uniform(0, 1, 300)])
for beta in (0.0, 1.0, 2.0):
    res = cv.parabolic_premeasure(cloud, beta, 0.2)
    print(f"beta={beta}: {res.count} cylinders, sum r^beta = {res.premeasure:.3f}")

import math
import time

import numpy as np

from boussiter._kernels import HAVE_KERNELS, bind_temperature_amp, bind_velocity_amp
from boussiter.fields import GridAmplitude
from boussiter.localization import box_plateau, partition_value

print("kernels:", HAVE_KERNELS)
rng = np.random.default_rng(0)

box = np.array([[-2.1, 2.1]] * 3)
data = rng.normal(size=(25, 25, 25)) * 0.05
grid = GridAmplitude(box, data, method="cubic")

mu, site = 0.25, (1, 0, -1)
r_in, r_out = 1.5, 2.0
scale = math.sqrt(2.0) / math.sqrt(2.0)

t0 = time.time()
kfn = bind_velocity_amp(mu, site, r_in, r_out, scale, grid)
pts = rng.uniform(-2.2, 2.2, size=(5000, 3))
kv = kfn(pts)
print(f"first call (compile) {time.time()-t0:.2f}s")

lsite = np.array(site, dtype=float)
pv = (scale * box_plateau(pts, r_in, r_out)
      * (grid.value(pts).real + 1.0)
      * partition_value(mu * pts, lsite))
err = np.abs(kv - pv)
den = np.maximum(np.abs(pv), 1e-30)
print(f"vel amp: max abs diff {err.max():.3e}, max rel {np.nanmax(err/den):.3e}")

# plateau-interior exactness: partition==1 near the site, plateau==1, grid off
kfn0 = bind_velocity_amp(1.0, site, r_in, r_out, -5.0, None)
p0 = lsite + rng.uniform(-0.01, 0.01, size=(50, 3))
kv0 = kfn0(p0)
assert np.all(kv0 == -5.0), kv0
print("plateau point-exactness: OK (all exactly -5.0)")

cdata = np.zeros((25, 25, 25))
cdata[8:17, 8:17, 8:17] = rng.normal(size=(9, 9, 9)) * 0.1
cgrid = GridAmplitude(box, cdata, method="cubic")
ktf = bind_temperature_amp(mu, site, r_in, r_out, 2.0, cgrid, grid)
ktv = ktf(pts)
c = cgrid.value(pts).real
plat = box_plateau(pts, r_in, r_out)
e = 2.0 * plat * plat
g = grid.value(pts).real + 1.0
live = c != 0.0
ref = np.zeros(len(pts))
ref[live] = c[live] / (np.sqrt(2.0 * e[live]) * g[live]) * partition_value(
    mu * pts[live], lsite)
err = np.abs(ktv - ref)
print(f"temp amp: max abs diff {err.max():.3e}  (live pts: {live.sum()})")

t0 = time.time()
for _ in range(200):
    kfn(pts[:40])
print(f"200 kernel calls at 40 pts: {time.time()-t0:.3f}s")

# %% [markdown]
# # DSC and HD95
#
# HD95 takes surface voxels (face-connected to background or the grid edge),
# measures each one's distance to the other surface in millimetres, and keeps
# the larger of the two directed 95th percentiles.

# %%
import numpy as np

from femseg.metrics import dice_coefficient, hd95, surface_voxels

z, y, x = np.indices((24, 24, 24))
ball = lambda r, c=11.5: ((z - c) ** 2 + (y - c) ** 2 + (x - c) ** 2 <= r * r).astype(np.uint8)

# %%
for r in (6, 7, 8):
    print(f"r=6 vs r={r}: DSC {dice_coefficient(ball(6), ball(r)):.3f}  HD95 {hd95(ball(6), ball(r), (1, 1, 1)):.2f} mm")

# %% [markdown]
# Anisotropic spacing changes the answer: a 2 mm slice thickness stretches z distances.

# %%
print(hd95(ball(6), ball(8), (2.0, 1.0, 1.0)))
print("surface voxels of r=6:", len(surface_voxels(ball(6))))

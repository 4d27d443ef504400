# %% [markdown]
# # On-the-fly augmentation
#
# Each transform is gated independently with probability 0.35. A plan records
# what fired; applying it to an image and its mask uses one shared geometry.

# %%
import numpy as np

from femseg.augment import AugmentConfig, apply_plan, derive_rng, sample_plan
from femseg.io.phantom import PhantomSpec, generate_phantom
from femseg.metrics import dice_coefficient

image, mask = generate_phantom(PhantomSpec(seed=1))
cfg = AugmentConfig()

# %%
plans = [sample_plan(cfg, derive_rng(0, i)) for i in range(2000)]
for name in ("scale", "rotation_deg", "elastic", "brightness"):
    print(name, np.mean([getattr(p, name) is not None for p in plans]))

# %% [markdown]
# Everything at once, to see how far a mask can move.

# %%
every = AugmentConfig(probability_per_transform=1.0)
for i in range(5):
    plan = sample_plan(every, derive_rng(7, i))
    img, lab = apply_plan(plan, image, mask)
    print(f"scale {plan.scale:.3f} rot {plan.rotation_deg:+.2f} alpha {plan.elastic[0]:5.1f} "
          f"sigma {plan.elastic[1]:.1f} gain {plan.brightness:.2f}  DSC vs original {dice_coefficient(lab, mask):.3f}")

# %%
plan = sample_plan(AugmentConfig(probability_per_transform=0.0), derive_rng(0))
img, lab = apply_plan(plan, image, mask)
print("empty plan is identity:", np.array_equal(img.data, image.data), np.array_equal(lab.data, mask.data))

# %% [markdown]
# # Training a tiny u-net on phantoms
#
# A depth-2, 8-channel net on 32^3 patches. A few epochs here are enough to see
# the loss fall; the acceptance run uses 60 epochs (about 6 minutes on one core).

# %%
import logging

from femseg.io.phantom import PhantomSpec, phantom_series
from femseg.metrics import aggregate
from femseg.patching import PatchSpec
from femseg.pipeline import Case, Dataset, TrainConfig, predict, score_case, train
from femseg.unet import UNet, UNetConfig

logging.basicConfig(level=logging.INFO)

phantoms = phantom_series(14, PhantomSpec(), seed=2024)
cases = [Case(f"p{i:02d}", v, m) for i, (v, m) in enumerate(phantoms)]
data = Dataset(train=cases[:10], val=cases[10:12], test=cases[12:])

cfg = TrainConfig(
    epochs=6,
    unet=UNetConfig(depth=2, base_channels=8),
    patch=PatchSpec((32, 32, 32), (16, 16, 16)),
    validation_every=3,
)
print("parameters:", UNet.create(cfg.unet, 0).num_parameters())

# %%
ckpt, log = train(data, cfg)
print("epoch losses", [round(x, 3) for x in log.epoch_losses()])
print("validations", log.validations, "best epoch", log.best_epoch)

# %%
scores = [score_case(c.case_id, predict(ckpt, c.image), c.mask) for c in data.test]
print(aggregate(scores).summary())

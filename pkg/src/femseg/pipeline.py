"""Training loop and the full inference chain.

Inference: normalize -> Otsu crop -> pad -> patch grid -> eval-mode forward ->
overlap-averaged stitch -> threshold -> uncrop to the input frame.
"""
from __future__ import annotations

import copy
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol, Sequence

import numpy as np

from femseg.augment import AugmentConfig, apply_plan, derive_rng, sample_plan
from femseg.errors import ConfigError, DataError, EmptyMask
from femseg.io.checkpoint import Checkpoint
from femseg.metrics import CaseMetrics, MetricsReport, aggregate, dice_coefficient, hd95
from femseg.nn.functional import soft_dice_loss
from femseg.nn.optim import Adam, OptimizerConfig
from femseg.patching import PatchSpec, extract, make_grid, pad_to, sample_random_patch, stitch
from femseg.unet import UNet, UNetConfig, binarize, trainable_names
from femseg.volume import (
    CropRecord,
    LabelMask,
    PreprocessConfig,
    Volume,
    check_aligned,
    crop_like,
    preprocess,
    uncrop,
)

log = logging.getLogger(__name__)


class ProbabilityModel(Protocol):
    def predict_proba(self, batch: np.ndarray) -> np.ndarray:
        """(n, 1, z, y, x) normalized intensities -> (n, z, y, x) foreground probability."""


@dataclass(frozen=True)
class Case:
    case_id: str
    image: Volume
    mask: LabelMask | None = None


@dataclass
class Dataset:
    train: list[Case]
    val: list[Case] = field(default_factory=list)
    test: list[Case] = field(default_factory=list)


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_images: int = 2
    patches_per_image: int = 1
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    patch: PatchSpec = field(default_factory=PatchSpec)
    unet: UNetConfig = field(default_factory=UNetConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    seed: int = 0
    validation_every: int = 1
    foreground_biased: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_images < 1 or self.patches_per_image < 1:
            raise ConfigError("epochs, batch_images and patches_per_image must be >= 1")
        if self.validation_every < 1:
            raise ConfigError("validation_every must be >= 1")
        self.unet.check_patch(self.patch.patch_dims)


@dataclass
class TrainLog:
    iterations: list[dict] = field(default_factory=list)  # epoch, iteration, loss
    validations: list[dict] = field(default_factory=list)  # epoch, iteration, val_dsc
    wall_clock: list[float] = field(default_factory=list)  # seconds since start, per epoch
    best_epoch: int | None = None
    best_val_dsc: float | None = None

    def epoch_losses(self) -> list[float]:
        by_epoch: dict[int, list[float]] = {}
        for rec in self.iterations:
            by_epoch.setdefault(rec["epoch"], []).append(rec["loss"])
        return [float(np.mean(v)) for _, v in sorted(by_epoch.items())]


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        threads = int(os.environ.get("FEMSEG_THREADS", "1") or 1)
    return max(1, int(threads))


def _as_model(model) -> tuple[ProbabilityModel, PatchSpec | None, PreprocessConfig | None]:
    if isinstance(model, Checkpoint):
        return UNet(model.unet, model.params), model.patch, model.preprocess
    return model, None, None


def predict_probability(
    model,
    v: Volume,
    patch: PatchSpec | None = None,
    preprocess_cfg: PreprocessConfig | None = None,
    threads: int | None = None,
) -> tuple[np.ndarray, CropRecord]:
    """Stitched foreground probability over the cropped region, plus its CropRecord."""
    net, ck_patch, ck_pre = _as_model(model)
    patch = patch or ck_patch
    pre = preprocess_cfg or ck_pre or PreprocessConfig()
    if patch is None:
        raise ConfigError("a PatchSpec is required when predicting with a bare model")
    cropped, rec = preprocess(v, pre)
    grid = make_grid(cropped.dims, patch)
    patches = extract(cropped.data.astype(np.float32), grid)[:, None]
    threads = resolve_threads(threads)

    def run(i):
        return net.predict_proba(patches[i : i + 1])[0]

    if threads > 1 and len(grid) > 1:
        with ThreadPoolExecutor(threads) as pool:
            probs = list(pool.map(run, range(len(grid))))
    else:
        probs = [run(i) for i in range(len(grid))]
    return stitch(probs, grid), rec


def predict(model, v: Volume, patch: PatchSpec | None = None, preprocess_cfg: PreprocessConfig | None = None,
            threads: int | None = None) -> LabelMask:
    """Segment ``v``; the mask has the input's dims and spacing."""
    pre = preprocess_cfg or _as_model(model)[2] or PreprocessConfig()
    prob, rec = predict_probability(model, v, patch, pre, threads)
    mask = binarize(prob, pre.threshold, v.spacing)
    return uncrop(mask, rec)


def _prepare(case: Case, pre: PreprocessConfig) -> Case:
    if case.mask is None:
        raise DataError(f"case {case.case_id!r} has no mask")
    try:
        check_aligned(case.image, case.mask)
    except Exception as exc:
        raise DataError(f"case {case.case_id!r}: {exc}") from exc
    img, rec = preprocess(case.image, pre)
    img = replace(img, data=img.data.astype(np.float32))
    return Case(case.case_id, img, crop_like(case.mask, rec, img.dims))


def _draw_patch(img: np.ndarray, lab: np.ndarray, spec: PatchSpec, rng, foreground_biased: bool):
    img = pad_to(img, spec.patch_dims)
    lab = pad_to(lab, spec.patch_dims)
    if foreground_biased and lab.any() and rng.random() < 0.5:
        # centre the patch on a random foreground voxel, clamped to the volume
        fg = np.argwhere(lab)
        c = fg[rng.integers(len(fg))]
        corner = tuple(
            int(np.clip(ci - p // 2, 0, d - p)) for ci, p, d in zip(c, spec.patch_dims, img.shape)
        )
    else:
        corner = sample_random_patch(img.shape, spec, rng)
    sl = tuple(slice(o, o + p) for o, p in zip(corner, spec.patch_dims))
    return img[sl], lab[sl]


def validation_dsc(net: ProbabilityModel, cases: Sequence[Case], cfg: TrainConfig) -> float:
    scores = []
    for c in cases:
        pred = predict(net, c.image, cfg.patch, cfg.preprocess, cfg.threads)
        scores.append(dice_coefficient(pred, c.mask))
    return float(np.mean(scores))


def train(
    dataset: Dataset,
    cfg: TrainConfig,
    on_iteration: Callable[[dict], None] | None = None,
) -> tuple[Checkpoint, TrainLog]:
    """Patch-based training with on-the-fly augmentation and Adam.

    Each epoch shuffles the training cases and runs ceil(n / batch_images)
    iterations; a short final batch wraps around to the start of the
    permutation. The returned checkpoint holds the parameters with the best
    validation DSC (earliest on ties), or the final ones if there is no
    validation set.
    """
    if len(dataset.train) < cfg.batch_images:
        raise DataError(f"{len(dataset.train)} training cases for a batch of {cfg.batch_images}")
    train_cases = [_prepare(c, cfg.preprocess) for c in dataset.train]
    for c in dataset.val:
        if c.mask is None:
            raise DataError(f"validation case {c.case_id!r} has no mask")
    net = UNet.create(cfg.unet, derive_rng(cfg.seed, 0))
    names = trainable_names(net.params)
    adam = Adam(cfg.optimizer)
    log_ = TrainLog()
    best_params = None
    n, b = len(train_cases), cfg.batch_images
    iters = math.ceil(n / b)
    start = time.perf_counter()
    it_global = 0
    for epoch in range(cfg.epochs):
        perm = derive_rng(cfg.seed, 1, epoch).permutation(n)
        for it in range(iters):
            xs, ys = [], []
            for slot in range(b):
                case = train_cases[perm[(it * b + slot) % n]]
                rng = derive_rng(cfg.seed, 2, epoch, it, slot)
                plan = sample_plan(cfg.augment, rng)
                img, lab = apply_plan(plan, case.image, case.mask)
                for _ in range(cfg.patches_per_image):
                    x, y = _draw_patch(img.data, lab.data, cfg.patch, rng, cfg.foreground_biased)
                    xs.append(x)
                    ys.append(y)
            batch = np.stack(xs)[:, None].astype(np.float32)
            truth = np.stack(ys)
            leaves: dict = {}
            prob = net.forward(batch, training=True, leaves=leaves)
            loss = soft_dice_loss(prob, truth)
            loss.backward()
            adam.step(net.params, {k: leaves[k].grad for k in names if leaves[k].grad is not None})
            rec = {"epoch": epoch, "iteration": it_global, "loss": float(loss.data)}
            log_.iterations.append(rec)
            if on_iteration is not None:
                on_iteration(rec)
            it_global += 1
        last = epoch == cfg.epochs - 1
        if dataset.val and ((epoch + 1) % cfg.validation_every == 0 or last):
            dsc = validation_dsc(net, dataset.val, cfg)
            log_.validations.append({"epoch": epoch, "iteration": it_global - 1, "val_dsc": dsc})
            if log_.best_val_dsc is None or dsc > log_.best_val_dsc:
                log_.best_val_dsc, log_.best_epoch = dsc, epoch
                best_params = copy.deepcopy(net.params)
            log.info("epoch %d  loss %.4f  val dsc %.4f", epoch, log_.epoch_losses()[-1], dsc)
        log_.wall_clock.append(time.perf_counter() - start)
    if best_params is None:
        best_params, log_.best_epoch = copy.deepcopy(net.params), cfg.epochs - 1
    extra = {"best_epoch": log_.best_epoch, "best_val_dsc": log_.best_val_dsc, "seed": cfg.seed}
    return Checkpoint(best_params, cfg.unet, cfg.patch, cfg.preprocess, extra), log_


def score_case(case_id: str, pred: LabelMask, truth: LabelMask) -> CaseMetrics:
    """DSC and HD95 (mm, truth spacing). HD95 is +inf when either mask is empty."""
    dsc = dice_coefficient(pred, truth)
    try:
        h = hd95(pred, truth, truth.spacing)
    except EmptyMask:
        h = float("inf")
    return CaseMetrics(case_id, dsc, h)


def evaluate(model, cases: Sequence[Case], threads: int | None = None) -> MetricsReport:
    """Predict every case and score it against its ground-truth mask."""
    out = []
    for c in cases:
        if c.mask is None:
            raise DataError(f"case {c.case_id!r} has no ground-truth mask")
        pred = predict(model, c.image, threads=threads) if isinstance(model, Checkpoint) else model(c.image)
        out.append(score_case(c.case_id, pred, c.mask))
    return aggregate(out)

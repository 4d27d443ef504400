"""``femseg`` command line: phantom, preprocess, augment-preview, train, predict, evaluate.

Data directories hold native-format pairs ``<id>_image.fvh`` / ``<id>_mask.fvh``
and, for training, a ``split.json`` listing case ids under ``train``, ``val``
and ``test``. Every failure prints one line ``error[<Reason>]: <message>`` to
stderr and exits nonzero.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from femseg.augment import AugmentConfig, apply_plan, derive_rng, sample_plan
from femseg.errors import ConfigError, DataError, FemsegError
from femseg.io.checkpoint import load_checkpoint, save_checkpoint
from femseg.io.native import read_native, write_native
from femseg.io.nifti import read_nifti1
from femseg.io.phantom import PhantomSpec, phantom_series
from femseg.metrics import aggregate
from femseg.nn.optim import OptimizerConfig
from femseg.patching import PatchSpec
from femseg.pipeline import Case, Dataset, TrainConfig, predict, resolve_threads, score_case, train
from femseg.unet import UNetConfig
from femseg.volume import LabelMask, PreprocessConfig, Volume, crop_like, preprocess, split_and_mirror

IMAGE_SUFFIX = "_image.fvh"
MASK_SUFFIX = "_mask.fvh"

_SECTIONS = {
    "optimizer": OptimizerConfig,
    "augment": AugmentConfig,
    "patch": PatchSpec,
    "unet": UNetConfig,
    "preprocess": PreprocessConfig,
}
_TUPLE_FIELDS = {"patch_dims", "overlap_dims"}


# config files

def _build(cls, doc: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"unknown config key '{where}{unknown[0]}'")
    kw = {}
    for k, v in doc.items():
        if isinstance(v, list):
            v = tuple(v) if k in _TUPLE_FIELDS or all(not isinstance(x, list) for x in v) else v
        kw[k] = v
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(f"{where.rstrip('.') or 'config'}: {exc}") from exc


def config_from_dict(doc: dict) -> TrainConfig:
    """TrainConfig from a nested mapping; unknown keys raise ConfigError, missing keys keep defaults."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    top = {}
    for k, v in doc.items():
        if k in _SECTIONS:
            if not isinstance(v, dict):
                raise ConfigError(f"config section {k!r} must be an object")
            top[k] = _build(_SECTIONS[k], v, f"{k}.")
        else:
            top[k] = v
    return _build(TrainConfig, top, "")


def config_to_dict(cfg: TrainConfig) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc


# data directories

def _case_ids(directory: Path, suffix: str) -> list[str]:
    return sorted(p.name[: -len(suffix)] for p in directory.glob("*" + suffix))


def read_volume(path) -> Volume:
    p = Path(path)
    if p.suffix in (".nii",) or p.name.endswith(".nii.gz"):
        return read_nifti1(p)
    obj = read_native(p)
    if isinstance(obj, LabelMask):
        raise DataError(f"{p} holds a mask, expected an image")
    return obj


def read_mask(path) -> LabelMask:
    obj = read_native(path)
    if not isinstance(obj, LabelMask):
        raise DataError(f"{path} holds an image, expected a mask")
    return obj


def load_case(directory: Path, case_id: str, need_mask: bool = True) -> Case:
    img_path = directory / (case_id + IMAGE_SUFFIX)
    mask_path = directory / (case_id + MASK_SUFFIX)
    if not img_path.exists():
        raise DataError(f"missing image for case {case_id!r} in {directory}")
    if need_mask and not mask_path.exists():
        raise DataError(f"missing mask for case {case_id!r} in {directory}")
    mask = read_mask(mask_path) if mask_path.exists() else None
    return Case(case_id, read_volume(img_path), mask)


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    split_path = directory / "split.json"
    if not split_path.exists():
        raise DataError(f"{directory} has no split.json")
    split = json.loads(split_path.read_text())
    unknown = sorted(set(split) - {"train", "val", "test"})
    if unknown:
        raise DataError(f"split.json has unknown set {unknown[0]!r}")
    sets = {k: list(split.get(k, [])) for k in ("train", "val", "test")}
    seen: dict[str, str] = {}
    for name, ids in sets.items():
        for cid in ids:
            if cid in seen:
                raise DataError(f"case {cid!r} appears in both {seen[cid]} and {name}")
            seen[cid] = name
    return Dataset(*[[load_case(directory, cid) for cid in sets[k]] for k in ("train", "val", "test")])


# commands

def cmd_phantom(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = PhantomSpec()
    if args.size is not None:
        # keep the physical proportions of the default 64^3 phantom
        f = args.size / 64
        spec = dataclasses.replace(
            spec,
            grid=(args.size,) * 3,
            head_radius=spec.head_radius * f,
            head_centre_jitter=spec.head_centre_jitter * f,
            shaft_radius=spec.shaft_radius * f,
            shaft_length=spec.shaft_length * f,
            shell_thickness=max(spec.shell_thickness * f, min(spec.spacing)),
        )
    ids = [f"phantom{i:03d}" for i in range(args.n)]
    for cid, (v, m) in zip(ids, phantom_series(args.n, spec, seed=args.seed)):
        write_native(out / (cid + IMAGE_SUFFIX), v)
        write_native(out / (cid + MASK_SUFFIX), m)
    n_val = max(1, round(0.1 * args.n)) if args.n >= 3 else 0
    n_test = max(1, round(0.2 * args.n)) if args.n >= 3 else 0
    n_train = args.n - n_val - n_test
    split = {"train": ids[:n_train], "val": ids[n_train : n_train + n_val], "test": ids[n_train + n_val :]}
    (out / "split.json").write_text(json.dumps(split, indent=1) + "\n")
    print(f"wrote {args.n} phantoms to {out}")
    return 0


def cmd_preprocess(args) -> int:
    v = read_volume(args.input)
    cfg = PreprocessConfig()
    cropped, rec = preprocess(v, cfg)
    cropped = dataclasses.replace(cropped, data=cropped.data.astype(np.float32), frame=rec)
    mask = read_mask(args.mask) if args.mask else None
    cmask = crop_like(mask, rec, cropped.dims) if mask is not None else None
    out = Path(args.out)
    if not args.split_mirror:
        write_native(out, cropped)
        if cmask is not None:
            write_native(_sibling(out, "_mask"), dataclasses.replace(cmask, frame=rec))
        print(f"cropped {v.dims} -> {cropped.dims} at offset {rec.offset}")
        return 0
    halves = split_and_mirror(cropped, cmask)
    for tag, (img, lab) in zip(("right", "left"), halves):
        write_native(_sibling(out, "_" + tag), img)
        if lab is not None:
            write_native(_sibling(out, f"_{tag}_mask"), lab)
    print(f"cropped {v.dims} -> {cropped.dims}, split into {halves[0][0].dims} and {halves[1][0].dims}")
    return 0


def _sibling(path: Path, tag: str) -> Path:
    stem = path.name[:-4] if path.suffix == ".fvh" else path.name
    return path.with_name(stem + tag + ".fvh")


def cmd_augment_preview(args) -> int:
    v = read_volume(args.input)
    m = read_mask(args.mask)
    p = AugmentConfig().probability_per_transform if args.probability is None else args.probability
    plan = sample_plan(AugmentConfig(probability_per_transform=p), derive_rng(args.seed, 3))
    img, lab = apply_plan(plan, v, m)
    out = Path(args.out)
    write_native(out, dataclasses.replace(img, data=np.asarray(img.data, dtype=np.float32)))
    write_native(_sibling(out, "_mask"), lab)
    print(json.dumps({"plan": dataclasses.asdict(plan)}))
    return 0


def cmd_train(args) -> int:
    doc = load_config(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.threads is not None:
        doc["threads"] = args.threads
    elif "threads" not in doc:
        doc["threads"] = resolve_threads(None)
    cfg = config_from_dict(doc)
    data = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config_to_dict(cfg), indent=1, sort_keys=True) + "\n")
    ckpt, log = train(data, cfg)
    val_at = {rec["iteration"]: rec["val_dsc"] for rec in log.validations}
    with (out / "train_log.jsonl").open("w") as fh:
        for rec in log.iterations:
            fh.write(json.dumps({**rec, "val_dsc": val_at.get(rec["iteration"])}) + "\n")
    save_checkpoint(out / "model.ckpt", ckpt)
    print(f"best epoch {log.best_epoch} val dsc {log.best_val_dsc}; checkpoint {out / 'model.ckpt'}")
    return 0


def cmd_predict(args) -> int:
    if not Path(args.ckpt).exists():
        raise DataError(f"checkpoint not found: {args.ckpt}")
    ckpt = load_checkpoint(args.ckpt)
    v = read_volume(args.input)
    t0 = time.perf_counter()
    mask = predict(ckpt, v, threads=args.threads)
    elapsed = time.perf_counter() - t0
    write_native(args.out, mask)
    print(f"predicted {v.dims} in {elapsed:.2f} s")
    return 0


def _json_number(x: float):
    return x if math.isfinite(x) else None


def cmd_evaluate(args) -> int:
    truth_dir = Path(args.truth_dir)
    truth_ids = _case_ids(truth_dir, MASK_SUFFIX)
    if args.pred_dir:
        pred_dir = Path(args.pred_dir)
        pred_ids = _case_ids(pred_dir, MASK_SUFFIX)
        unpaired = sorted(set(pred_ids) ^ set(truth_ids))
        if unpaired:
            raise DataError("unpaired cases: " + ", ".join(unpaired))
        preds = {cid: read_mask(pred_dir / (cid + MASK_SUFFIX)) for cid in truth_ids}
    else:
        if not (args.ckpt and args.data):
            raise ConfigError("evaluate needs --pred-dir or both --ckpt and --data")
        data_dir = Path(args.data)
        image_ids = _case_ids(data_dir, IMAGE_SUFFIX)
        unpaired = sorted(set(image_ids) ^ set(truth_ids))
        if unpaired:
            raise DataError("unpaired cases: " + ", ".join(unpaired))
        ckpt = load_checkpoint(args.ckpt)
        preds = {cid: predict(ckpt, read_volume(data_dir / (cid + IMAGE_SUFFIX)), threads=args.threads)
                 for cid in truth_ids}
    if not truth_ids:
        raise DataError(f"no masks in {truth_dir}")
    cases = [score_case(cid, preds[cid], read_mask(truth_dir / (cid + MASK_SUFFIX))) for cid in truth_ids]
    rep = aggregate(cases)
    lines = [json.dumps({"case": c.case_id, "dsc": c.dsc, "hd95_mm": _json_number(c.hd95)}) for c in rep.cases]
    summary = {
        "summary": True,
        "n": rep.n,
        "dsc_mean": rep.dsc_mean,
        "dsc_std": rep.dsc_std,
        "hd95_mean_mm": _json_number(rep.hd95_mean),
        "hd95_std_mm": _json_number(rep.hd95_std),
        "std_defined": rep.std_defined,
    }
    lines.append(json.dumps(summary))
    text = "\n".join(lines) + "\n"
    if args.out_report:
        Path(args.out_report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out_report).write_text(text)
    print(rep.summary())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="femseg", description="Proximal-femur segmentation with a 3-D u-net.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train a model from a data directory")
    s.add_argument("--config", help="JSON run config; missing keys take defaults")
    s.add_argument("--data", required=True, help="directory with image/mask pairs and split.json")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="segment one volume")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="input", required=True, help="native .fvh or NIfTI-1 .nii image")
    s.add_argument("--out", required=True, help="output mask (.fvh)")
    s.add_argument("--threads", type=int)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="score predictions against ground truth")
    s.add_argument("--pred-dir")
    s.add_argument("--ckpt")
    s.add_argument("--data")
    s.add_argument("--truth-dir", required=True)
    s.add_argument("--out-report")
    s.add_argument("--threads", type=int)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("phantom", help="generate synthetic femur phantoms")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--size", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("preprocess", help="normalize and Otsu-crop a volume")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--mask", help="optional mask cropped alongside")
    s.add_argument("--split-mirror", action="store_true", help="also split at mid-x and mirror the left half")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("augment-preview", help="write one augmented image/mask pair")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--probability", type=float, help="gate probability (default 0.35)")
    s.set_defaults(func=cmd_augment_preview)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FemsegError as exc:
        print(f"error[{exc.reason}]: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error[IOError]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

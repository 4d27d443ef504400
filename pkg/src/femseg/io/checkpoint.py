"""Checkpoint file: versioned JSON manifest followed by a float32 tensor blob.

Layout (all integers little-endian)::

    8 bytes   magic  b"FEMSEGCK"
    u32       format version
    u32       manifest length in bytes
    u32       CRC-32 of the manifest bytes
    ...       manifest (UTF-8 JSON)
    ...       blob: tensors back to back as little-endian float32

The manifest carries the model/patch/preprocessing configuration, a tensor
directory (name -> shape, byte offset, byte length) and the CRC-32 of the blob.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from femseg.errors import ChecksumMismatch, FormatError, MissingTensor, VersionMismatch
from femseg.patching import PatchSpec
from femseg.unet import UNetConfig, build_shapes
from femseg.volume import PreprocessConfig

MAGIC = b"FEMSEGCK"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIII")


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    unet: UNetConfig
    patch: PatchSpec
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    extra: dict = field(default_factory=dict)


def _manifest(ckpt: Checkpoint, directory: list, blob_crc: int) -> bytes:
    doc = {
        "format_version": FORMAT_VERSION,
        "unet": ckpt.unet.to_dict(),
        "patch": {"patch_dims": list(ckpt.patch.patch_dims), "overlap_dims": list(ckpt.patch.overlap_dims)},
        "preprocess": {
            "otsu_bins": ckpt.preprocess.otsu_bins,
            "crop_margin": ckpt.preprocess.crop_margin,
            "otsu_on_normalized": ckpt.preprocess.otsu_on_normalized,
            "threshold": ckpt.preprocess.threshold,
        },
        "extra": ckpt.extra,
        "tensors": directory,
        "blob_crc32": blob_crc,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


def to_bytes(ckpt: Checkpoint) -> bytes:
    chunks, directory, offset = [], [], 0
    for name, arr in ckpt.params.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset, "length": len(data)})
        chunks.append(data)
        offset += len(data)
    blob = b"".join(chunks)
    manifest = _manifest(ckpt, directory, zlib.crc32(blob))
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(manifest), zlib.crc32(manifest)) + manifest + blob


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)
    return path


def from_bytes(raw: bytes) -> Checkpoint:
    if len(raw) < _PREFIX.size:
        raise FormatError("checkpoint truncated")
    magic, version, mlen, mcrc = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint format {version}, this build reads {FORMAT_VERSION}")
    manifest = raw[_PREFIX.size : _PREFIX.size + mlen]
    if len(manifest) != mlen or zlib.crc32(manifest) != mcrc:
        raise ChecksumMismatch("manifest checksum mismatch")
    doc = json.loads(manifest)
    if doc.get("format_version") != FORMAT_VERSION:
        raise VersionMismatch(f"manifest format {doc.get('format_version')}")
    blob = raw[_PREFIX.size + mlen :]
    if zlib.crc32(blob) != doc["blob_crc32"]:
        raise ChecksumMismatch("tensor blob checksum mismatch")
    unet = UNetConfig(**doc["unet"])
    patch = PatchSpec(tuple(doc["patch"]["patch_dims"]), tuple(doc["patch"]["overlap_dims"]))
    pre = PreprocessConfig(**doc["preprocess"])
    params = {}
    for entry in doc["tensors"]:
        start, length = entry["offset"], entry["length"]
        shape = tuple(entry["shape"])
        if start + length > len(blob) or length != 4 * int(np.prod(shape)):
            raise FormatError(f"tensor {entry['name']!r} lies outside the blob")
        params[entry["name"]] = np.frombuffer(blob, dtype="<f4", count=length // 4, offset=start).astype(np.float32).reshape(shape)
    expected = build_shapes(unet)
    missing = [k for k in expected if k not in params]
    if missing:
        raise MissingTensor(f"checkpoint lacks tensors: {', '.join(missing)}")
    for k, shape in expected.items():
        if params[k].shape != shape:
            raise FormatError(f"tensor {k!r} has shape {params[k].shape}, config implies {shape}")
    unexpected = [k for k in params if k not in expected]
    if unexpected:
        raise FormatError(f"checkpoint holds unknown tensors: {', '.join(unexpected)}")
    ordered = {k: params[k] for k in expected}
    return Checkpoint(ordered, unet, patch, pre, doc.get("extra", {}))


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())

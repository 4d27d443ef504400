"""Native volume format: a text header next to a raw little-endian payload.

``case.fvh`` (header)::

    FEMSEG-VOLUME 1
    kind image
    dims 48 64 64
    spacing 1 0.977 0.977
    dtype f32
    byteorder little
    data case.raw

plus optional ``crop_offset``, ``original_dims`` and ``mirrored`` lines that
record a CropRecord. Dims and spacing are listed in (z, y, x) order and the
payload is row-major with x fastest.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from femseg.errors import FormatError, LengthMismatch, UnsupportedDtype
from femseg.volume import CropRecord, LabelMask, Volume

MAGIC = "FEMSEG-VOLUME"
VERSION = 1
DTYPES = {"f32": np.dtype("<f4"), "i16": np.dtype("<i2"), "u8": np.dtype("u1")}


def header_path(path) -> Path:
    p = Path(path)
    return p if p.suffix == ".fvh" else p.with_suffix(".fvh")


def _fmt_float(x: float) -> str:
    return repr(float(x))


def write_native(path, obj: Volume | LabelMask, dtype: str | None = None) -> Path:
    """Write ``obj``; images default to f32, masks to u8. Returns the header path."""
    hdr = header_path(path)
    is_mask = isinstance(obj, LabelMask)
    dtype = dtype or ("u8" if is_mask else "f32")
    if dtype not in DTYPES:
        raise UnsupportedDtype(f"dtype {dtype!r} (supported: {', '.join(DTYPES)})")
    raw = hdr.with_suffix(".raw")
    lines = [
        f"{MAGIC} {VERSION}",
        f"kind {'mask' if is_mask else 'image'}",
        "dims " + " ".join(str(d) for d in obj.dims),
        "spacing " + " ".join(_fmt_float(s) for s in obj.spacing),
        f"dtype {dtype}",
        "byteorder little",
        f"data {raw.name}",
    ]
    if obj.frame is not None:
        f = obj.frame
        lines += [
            "crop_offset " + " ".join(str(o) for o in f.offset),
            "original_dims " + " ".join(str(d) for d in f.original_dims),
            f"mirrored {int(f.mirrored)}",
        ]
    hdr.parent.mkdir(parents=True, exist_ok=True)
    payload = np.ascontiguousarray(obj.data, dtype=DTYPES[dtype])
    raw.write_bytes(payload.tobytes())
    hdr.write_text("\n".join(lines) + "\n")
    return hdr


def read_header(path) -> dict:
    hdr = header_path(path)
    try:
        text = hdr.read_text()
    except UnicodeDecodeError as exc:
        raise FormatError(f"{hdr}: header is not text") from exc
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{hdr}: empty header")
    first = lines[0].split()
    if len(first) != 2 or first[0] != MAGIC:
        raise FormatError(f"{hdr}: bad magic {lines[0]!r}")
    if first[1] != str(VERSION):
        raise FormatError(f"{hdr}: unsupported version {first[1]}")
    fields = {}
    for ln in lines[1:]:
        key, _, value = ln.partition(" ")
        fields[key] = value.split()
    for key in ("kind", "dims", "spacing", "dtype", "data"):
        if key not in fields:
            raise FormatError(f"{hdr}: missing {key!r}")
    if fields.get("byteorder", ["little"]) != ["little"]:
        raise FormatError(f"{hdr}: only little-endian payloads are supported")
    out = {
        "kind": fields["kind"][0],
        "dims": tuple(int(d) for d in fields["dims"]),
        "spacing": tuple(float(s) for s in fields["spacing"]),
        "dtype": fields["dtype"][0],
        "data": hdr.parent / fields["data"][0],
        "frame": None,
    }
    if out["kind"] not in ("image", "mask"):
        raise FormatError(f"{hdr}: unknown kind {out['kind']!r}")
    if out["dtype"] not in DTYPES:
        raise UnsupportedDtype(f"{hdr}: dtype {out['dtype']!r}")
    if len(out["dims"]) != 3 or len(out["spacing"]) != 3:
        raise FormatError(f"{hdr}: dims and spacing need three values")
    if "crop_offset" in fields:
        out["frame"] = CropRecord(
            tuple(int(v) for v in fields["crop_offset"]),
            tuple(int(v) for v in fields["original_dims"]),
            bool(int(fields.get("mirrored", ["0"])[0])),
        )
    return out


def read_native(path) -> Volume | LabelMask:
    h = read_header(path)
    dt = DTYPES[h["dtype"]]
    expected = int(np.prod(h["dims"])) * dt.itemsize
    size = os.path.getsize(h["data"])
    if size != expected:
        raise LengthMismatch(f"{h['data']}: {size} bytes, header implies {expected}")
    data = np.fromfile(h["data"], dtype=dt).reshape(h["dims"])
    if h["kind"] == "mask":
        return LabelMask(data.astype(np.uint8, copy=False), h["spacing"], h["frame"])
    return Volume(data.astype(dt.newbyteorder("="), copy=False), h["spacing"], h["frame"])

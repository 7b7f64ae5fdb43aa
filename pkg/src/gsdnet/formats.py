"""On-disk formats: 8-bit PGM images, a small float-grid container, and
tab-separated dataset manifests.

PGM files are binary P5 with maxval fixed at 255.  Label images store
class ids directly as pixel values.  Float grids use a little-endian
container: magic ``GSDT``, a version byte, a dtype code byte (0 = f32,
1 = f64), a rank byte, rank u32 dims, then the row-major payload.
Readers are strict: wrong magic, truncation, or trailing bytes raise
:class:`FormatError` naming expected versus actual sizes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

GRID_MAGIC = b"GSDT"
GRID_VERSION = 1
_GRID_DTYPES = {0: "<f4", 1: "<f8"}
_GRID_CODES = {"f32": 0, "f64": 1}


class FormatError(ValueError):
    """A file does not parse as the format it claims to be."""


def write_pgm(path, array):
    a = np.asarray(array)
    if a.ndim != 2:
        raise ValueError(f"pgm payload must be 2-D, got shape {a.shape}")
    if a.dtype != np.uint8:
        if a.size and (a.min() < 0 or a.max() > 255):
            raise ValueError(f"pgm values outside [0, 255]: min {a.min()}, max {a.max()}")
        a = a.astype(np.uint8)
    h, w = a.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(a.tobytes())


def read_pgm(path):
    data = Path(path).read_bytes()
    pos = 0

    def token():
        nonlocal pos
        while pos < len(data):
            ch = data[pos : pos + 1]
            if ch == b"#":
                nl = data.find(b"\n", pos)
                pos = len(data) if nl < 0 else nl + 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated header")
        return data[start:pos]

    if token() != b"P5":
        raise FormatError(f"{path}: not a binary P5 file")
    try:
        w, h, maxval = int(token()), int(token()), int(token())
    except ValueError as exc:
        raise FormatError(f"{path}: malformed header") from exc
    if maxval != 255:
        raise FormatError(f"{path}: maxval must be 255, got {maxval}")
    if w < 1 or h < 1:
        raise FormatError(f"{path}: bad dimensions {w}x{h}")
    pos += 1  # exactly one whitespace byte separates header and payload
    need = w * h
    payload = data[pos:]
    if len(payload) != need:
        raise FormatError(f"{path}: expected {need} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).copy()


def write_image(path, image):
    """Quantize a [0, 1] float image to 8 bits and write it."""
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"image must be 2-D grayscale, got shape {x.shape}")
    write_pgm(path, np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8))


def read_image(path):
    """Read an 8-bit image as float64 in [0, 1]."""
    return read_pgm(path).astype(np.float64) / 255.0


def write_labels(path, labels):
    y = np.asarray(labels)
    if y.size and (y.min() < 0 or y.max() > 255):
        raise ValueError("label ids must fit in one byte")
    write_pgm(path, y.astype(np.uint8))


def read_labels(path, num_classes=None):
    y = read_pgm(path).astype(np.int64)
    if num_classes is not None and y.size and y.max() >= num_classes:
        raise FormatError(f"{path}: label id {y.max()} >= num_classes {num_classes}")
    return y


def write_grid(path, array, dtype="f32"):
    if dtype not in _GRID_CODES:
        raise ValueError(f"dtype must be f32 or f64, got {dtype!r}")
    a = np.asarray(array, dtype=np.float64)
    code = _GRID_CODES[dtype]
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<BBB", GRID_VERSION, code, a.ndim))
        fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
        fh.write(np.ascontiguousarray(a, dtype=_GRID_DTYPES[code]).tobytes())


def read_grid(path, with_dtype=False):
    """Read a float grid; returns float64 (optionally also the stored dtype)."""
    data = Path(path).read_bytes()
    if data[:4] != GRID_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    try:
        version, code, rank = struct.unpack_from("<BBB", data, 4)
        dims = struct.unpack_from(f"<{rank}I", data, 7)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated header") from exc
    if version != GRID_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if code not in _GRID_DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    np_dtype = np.dtype(_GRID_DTYPES[code])
    off = 7 + 4 * rank
    need = off + int(np.prod(dims, dtype=np.int64)) * np_dtype.itemsize
    if len(data) != need:
        raise FormatError(f"{path}: expected {need} bytes, found {len(data)}")
    arr = np.frombuffer(data, dtype=np_dtype, offset=off).reshape(dims).astype(np.float64)
    name = {v: k for k, v in _GRID_CODES.items()}[code]
    return (arr, name) if with_dtype else arr


@dataclass
class ManifestEntry:
    """One image of a dataset: split name plus image/clean/noisy paths."""

    split: str
    image: str
    clean: str
    noisy: str


def write_manifest(path, entries):
    lines = []
    for e in entries:
        for fieldname in ("split", "image", "clean", "noisy"):
            value = getattr(e, fieldname)
            if "\t" in value or "\n" in value:
                raise ValueError(f"manifest {fieldname} contains a separator: {value!r}")
        lines.append(f"{e.split}\t{e.image}\t{e.clean}\t{e.noisy}\n")
    Path(path).write_text("".join(lines))


def read_manifest(path, validate=True):
    """Parse a manifest; with ``validate`` also check that files exist and
    no image is claimed by two splits.  Relative paths resolve against the
    manifest's directory."""
    base = Path(path).parent
    entries = []
    seen = {}
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise FormatError(f"{path}:{ln}: expected 4 tab-separated fields, got {len(parts)}")
        e = ManifestEntry(*parts)
        if validate:
            if e.image in seen and seen[e.image] != e.split:
                raise FormatError(f"{path}:{ln}: image {e.image} appears in two splits")
            seen[e.image] = e.split
            for p in (e.image, e.clean, e.noisy):
                if not (base / p).exists():
                    raise FormatError(f"{path}:{ln}: missing file {p}")
        entries.append(e)
    return entries


def resolve(manifest_path, relpath):
    """Resolve a manifest-relative path."""
    return Path(manifest_path).parent / relpath

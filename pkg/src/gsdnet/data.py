"""Synthetic grayscale shape datasets with exact reference masks.

Each sample is a single bright region (ellipse or smooth blob) on a
darker background, with blurred edges and additive noise.  Background
level and contrast vary per image, so absolute intensity alone does not
separate the classes everywhere.
Labels are the exact rasterized masks before any blurring, so the
reference annotation is geometrically clean by construction.  The same
seed always produces byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .formats import ManifestEntry, read_labels, resolve, write_image, write_labels, write_manifest
from .noise import NoiseSpec, simulate
from .validation import make_rng, spawn_seed


@dataclass
class ShapesSpec:
    n_train: int = 60
    n_test: int = 40
    image_size: int = 64
    fg_min: float = 0.05
    fg_max: float = 0.30
    gap_min: float = 0.25
    gap_max: float = 0.50
    edge_blur: float = 1.0
    noise_sigma: float = 0.04
    seed: int = 0

    def __post_init__(self):
        if self.n_train < 1 or self.n_test < 0:
            raise ValueError("need at least one training image and a non-negative test count")
        if self.image_size < 8 or self.image_size % 2:
            raise ValueError(f"image_size must be even and >= 8, got {self.image_size}")
        if not 0.0 < self.fg_min <= self.fg_max < 1.0:
            raise ValueError(f"invalid foreground range [{self.fg_min}, {self.fg_max}]")
        if not 0.0 < self.gap_min <= self.gap_max <= 1.0:
            raise ValueError(f"invalid contrast range [{self.gap_min}, {self.gap_max}]")


def _blur(x, sigma):
    if sigma <= 0:
        return x
    radius = max(1, int(np.ceil(3.0 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    k /= k.sum()
    pad = np.pad(x, radius, mode="edge")
    rows = np.apply_along_axis(lambda r: np.convolve(r, k, mode="valid"), 1, pad)
    return np.apply_along_axis(lambda c: np.convolve(c, k, mode="valid"), 0, rows)


def _rasterize(size, rng, fg_target):
    """Binary mask of one random shape, rescaled toward the target area."""
    n = size
    ii, jj = np.mgrid[0:n, 0:n].astype(np.float64)
    ci = n / 2 + rng.uniform(-0.08, 0.08) * n
    cj = n / 2 + rng.uniform(-0.08, 0.08) * n
    kind = rng.integers(0, 2)  # 0 ellipse, 1 smooth blob
    phi = rng.uniform(0.0, np.pi)
    ratio = rng.uniform(0.55, 1.0)
    if kind == 1:
        m = np.arange(2, 6)
        amp_c = rng.normal(0.0, 1.0, size=m.size) / m
        amp_s = rng.normal(0.0, 1.0, size=m.size) / m
        norm = np.sqrt((amp_c**2 + amp_s**2).sum()) or 1.0
        amp_c, amp_s = 0.30 * amp_c / norm, 0.30 * amp_s / norm
    di, dj = ii - ci, jj - cj
    ri = np.cos(phi) * di + np.sin(phi) * dj
    rj = -np.sin(phi) * di + np.cos(phi) * dj
    theta = np.arctan2(rj, ri)
    scale = np.sqrt(fg_target * n * n / np.pi)
    for _ in range(12):
        if kind == 0:
            a = scale / np.sqrt(ratio)
            b = scale * np.sqrt(ratio)
            mask = (ri / a) ** 2 + (rj / b) ** 2 <= 1.0
        else:
            wobble = 1.0
            for k, mm in enumerate(np.arange(2, 6)):
                wobble = wobble + amp_c[k] * np.cos(mm * theta) + amp_s[k] * np.sin(mm * theta)
            rad = scale * np.maximum(wobble, 0.2)
            mask = di * di + dj * dj <= rad * rad
        frac = mask.mean()
        if frac == 0.0:
            scale *= 1.5
            continue
        if abs(frac - fg_target) / fg_target < 0.05:
            break
        scale *= np.sqrt(fg_target / frac)
    return mask


def make_sample(spec, index, split_tag):
    """One (image, label) pair; deterministic in (seed, index, split)."""
    rng = make_rng(spec.seed, split_tag, index)
    n = spec.image_size
    margin = 0.08 * (spec.fg_max - spec.fg_min)
    for _ in range(5):  # quantization at small sizes can miss the range
        fg_target = rng.uniform(spec.fg_min + margin, spec.fg_max - margin)
        mask = _rasterize(n, rng, fg_target)
        if spec.fg_min <= mask.mean() <= spec.fg_max:
            break
    gap = rng.uniform(spec.gap_min, spec.gap_max)
    bg = rng.uniform(0.05, min(0.40, 0.95 - gap))
    fg = bg + gap
    mean = bg + (fg - bg) * mask.astype(np.float64)
    mean = _blur(mean, spec.edge_blur)
    img = np.clip(mean + spec.noise_sigma * rng.standard_normal((n, n)), 0.0, 1.0)
    return img, mask.astype(np.int64)


_SPLITS = (("train", 0), ("test", 1))


def generate_dataset(spec, out_dir):
    """Write images, labels, and a manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for split, tag in _SPLITS:
        count = spec.n_train if split == "train" else spec.n_test
        for i in range(count):
            img, lab = make_sample(spec, i, tag)
            stem = f"{split}_{i:03d}"
            write_image(out / f"{stem}_img.pgm", img)
            write_labels(out / f"{stem}_gt.pgm", lab)
            entries.append(ManifestEntry(split, f"{stem}_img.pgm",
                                         f"{stem}_gt.pgm", f"{stem}_gt.pgm"))
    manifest = out / "manifest.tsv"
    write_manifest(manifest, entries)
    return manifest


def corrupt_manifest(manifest_path, entries, kind, strength, seed, **noise_kwargs):
    """Apply annotation noise to every train entry; returns new entries.

    Each image gets its own child seed derived from (seed, index), so the
    result is order-independent and reproducible.  Noisy label files are
    written next to the clean ones.
    """
    out_entries = []
    train_index = 0
    for e in entries:
        if e.split != "train":
            out_entries.append(e)
            continue
        gt = read_labels(resolve(manifest_path, e.clean), num_classes=2)
        spec = NoiseSpec(kind=kind, strength=strength,
                         seed=spawn_seed(seed, train_index), **noise_kwargs)
        noisy, _ = simulate(gt, spec)
        name = f"{Path(e.clean).stem}_noisy_{kind}.pgm"
        write_labels(resolve(manifest_path, name), noisy)
        out_entries.append(ManifestEntry(e.split, e.image, e.clean, name))
        train_index += 1
    return out_entries


def spec_from_mapping(mapping):
    """Build a ShapesSpec from string key/value pairs (config files)."""
    kwargs = {}
    valid = {f.name: f.type for f in fields(ShapesSpec)}
    for key, raw in mapping.items():
        if key not in valid:
            raise ValueError(f"unknown dataset key {key!r}; valid: {sorted(valid)}")
        kwargs[key] = int(raw) if valid[key] == "int" else float(raw)
    return ShapesSpec(**kwargs)

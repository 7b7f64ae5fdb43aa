"""Command-line interface.

Subcommands cover the full pipeline: generate a synthetic dataset,
corrupt its annotations, inspect boundary weights, refine labels from
saved predictions, train, summarize metrics, and run the
finite-difference gradient check.  Human-readable progress goes to
stderr; files and exit codes are the machine interface (0 success,
1 runtime failure, 2 usage errors).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import trainer as trainer_mod
from .formats import (FormatError, read_grid, read_labels, read_manifest, write_grid,
                      write_labels, write_manifest, write_pgm)
from .geometry import BoundaryWeightConfig, distance_to_boundary, schedule_weights
from .gradcheck import TERMS, run_grad_check
from .metrics import final_report, read_metrics
from .noise import KINDS
from .refine import POOLING_MODES, RefineConfig, refine_labels
from .superpixel import SlicConfig, slic
from .validation import make_rng


def _log(msg):
    print(msg, file=sys.stderr)


def _cmd_gen_data(args):
    mapping = trainer_mod.parse_kv(Path(args.spec).read_text()) if args.spec else {}
    if args.seed is not None:
        mapping["seed"] = str(args.seed)
    spec = data_mod.spec_from_mapping(mapping)
    manifest = data_mod.generate_dataset(spec, args.out)
    _log(f"wrote {spec.n_train} train / {spec.n_test} test images under {args.out}")
    print(manifest)
    return 0


def _cmd_add_noise(args):
    entries = read_manifest(args.manifest)
    new_entries = data_mod.corrupt_manifest(
        args.manifest, entries, args.kind, args.strength, args.seed,
        structuring_radius=args.radius, walk_step=args.walk_step,
        walk_length=args.walk_length)
    out = args.out or args.manifest
    write_manifest(out, new_entries)
    rates = []
    for e in new_entries:
        if e.split != "train":
            continue
        from .formats import resolve
        from .noise import measure_noise

        gt = read_labels(resolve(out, e.clean), num_classes=2)
        noisy = read_labels(resolve(out, e.noisy), num_classes=2)
        rates.append(measure_noise(gt, noisy).realized_rate)
    _log(f"corrupted {len(rates)} train annotations with {args.kind}; "
         f"mean realized rate {float(np.mean(rates)):.4f} (target {args.strength})")
    print(out)
    return 0


def _cmd_weights(args):
    labels = read_labels(args.labels)
    cfg = BoundaryWeightConfig(cap=args.T, max_epochs=args.E, connectivity=args.connectivity)
    raw = distance_to_boundary(labels, connectivity=cfg.connectivity, empty_value=cfg.cap)
    w = schedule_weights(raw, args.epoch, cfg)
    write_grid(args.out, w, dtype="f32")
    preview = args.preview or str(Path(args.out).with_suffix(".pgm"))
    scaled = np.clip(np.rint((w - 1.0) / max(cfg.cap - 1.0, 1e-9) * 255.0), 0, 255)
    write_pgm(preview, scaled.astype(np.uint8))
    _log(f"weights in [{w.min():.3f}, {w.max():.3f}] at epoch {args.epoch}/{args.E}; "
         f"grid -> {args.out}, preview -> {preview}")
    return 0


def _cmd_refine(args):
    p1 = read_grid(args.p1)
    p2 = read_grid(args.p2)
    noisy = read_labels(args.noisy)
    from .losses import SelectionSchedule, retention_rate, select_clean, sup_loss, sym_kl_pixelwise

    stat = sup_loss(p1, p2, noisy) + sym_kl_pixelwise(p1, p2)
    clean = select_clean(stat, args.tau_rate)
    segments = None
    if args.pooling == "superpixel-mean":
        if args.image is None:
            raise ValueError("pooled refinement needs --image for the superpixel map")
        from .formats import read_image

        image = read_image(args.image)
        segments = slic(image, SlicConfig(n_segments=args.segments or None))
        if args.dump_superpixels:
            write_grid(args.dump_superpixels, segments.astype(np.float64), dtype="f32")
    labels, alpha = refine_labels(p1, p2, segments, noisy, clean,
                                  rng=make_rng(args.seed, 20), cfg=RefineConfig(args.pooling),
                                  alpha=args.alpha)
    write_labels(args.out, labels)
    changed = int((labels != noisy).sum())
    _log(f"refined {changed} pixels (alpha {alpha:.4f}, kept {int(clean.sum())} clean) "
         f"-> {args.out}")
    return 0


def _cmd_train(args):
    cfg = trainer_mod.load_config(args.config)
    if args.manifest:
        manifest = args.manifest
    else:
        raise ValueError("--manifest is required")
    dataset = trainer_mod.load_dataset(manifest)
    result = trainer_mod.train(dataset, cfg, out_dir=args.out_dir,
                               resume=args.resume, log=_log)
    if result.metrics_path is not None:
        print(result.metrics_path)
    return 0


def _cmd_eval(args):
    rows = read_metrics(args.metrics)
    report = final_report(rows, last=args.last)
    flag = " (fewer epochs than requested)" if report.truncated else ""
    print(f"dice {report.mean:.2f} +- {report.std:.2f} over final {report.n_epochs} "
          f"epochs{flag}")
    return 0


def _cmd_grad_check(args):
    failed = False
    for seed in range(args.seeds):
        results = run_grad_check(seed=seed, step=args.step)
        for term in TERMS:
            med, mx = results[term]
            ok = med < 1e-4 and mx < 1e-3
            failed |= not ok
            _log(f"seed {seed} {term:12s} median {med:.3e} max {mx:.3e} "
                 f"{'ok' if ok else 'FAIL'}")
    print("FAIL" if failed else "PASS")
    return 1 if failed else 0


def build_parser():
    p = argparse.ArgumentParser(prog="gsdnet",
                                description="noise-robust segmentation training toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic shapes dataset")
    g.add_argument("--spec", help="key=value dataset spec file")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, default=None, help="override the spec seed")
    g.set_defaults(fn=_cmd_gen_data)

    a = sub.add_parser("add-noise", help="corrupt train annotations in a manifest")
    a.add_argument("--manifest", required=True)
    a.add_argument("--kind", required=True, choices=KINDS)
    a.add_argument("--strength", required=True, type=float)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--radius", type=int, default=2, help="structuring radius (S_DE)")
    a.add_argument("--walk-step", type=int, default=4, help="walk clamp (S_R/S_E)")
    a.add_argument("--walk-length", type=int, default=1, help="walk substeps per move")
    a.add_argument("--out", help="write the updated manifest here instead of in place")
    a.set_defaults(fn=_cmd_add_noise)

    w = sub.add_parser("weights", help="boundary-distance weight map for a label image")
    w.add_argument("--labels", required=True)
    w.add_argument("--T", type=float, default=10.0, help="weight cap")
    w.add_argument("--epoch", type=int, default=0)
    w.add_argument("--E", type=int, default=100, help="total epochs for the decay")
    w.add_argument("--connectivity", type=int, default=4, choices=(4, 8))
    w.add_argument("--out", required=True, help="output float grid path")
    w.add_argument("--preview", help="preview image path (default: out with .pgm)")
    w.set_defaults(fn=_cmd_weights)

    r = sub.add_parser("refine", help="refine labels from two saved probability grids")
    r.add_argument("--p1", required=True, help="first predictor probabilities (float grid)")
    r.add_argument("--p2", required=True, help="second predictor probabilities")
    r.add_argument("--noisy", required=True, help="labels to refine")
    r.add_argument("--tau-rate", required=True, type=float,
                   help="fraction of pixels to keep as clean")
    r.add_argument("--image", help="image for the superpixel map (pooled mode)")
    r.add_argument("--segments", type=int, default=0, help="superpixel count (0 auto)")
    r.add_argument("--pooling", choices=POOLING_MODES, default="superpixel-mean")
    r.add_argument("--alpha", type=float, default=None, help="fixed blend instead of a draw")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--dump-superpixels", help="also save the segment grid here")
    r.add_argument("--out", required=True)
    r.set_defaults(fn=_cmd_refine)

    t = sub.add_parser("train", help="train a mode from a config file")
    t.add_argument("--config", required=True, help="key=value training config")
    t.add_argument("--manifest", required=True, help="dataset manifest")
    t.add_argument("--out-dir", required=True)
    t.add_argument("--resume", help="checkpoint directory to continue from")
    t.set_defaults(fn=_cmd_train)

    e = sub.add_parser("eval", help="summarize a metrics csv")
    e.add_argument("--metrics", required=True)
    e.add_argument("--last", type=int, default=10)
    e.set_defaults(fn=_cmd_eval)

    c = sub.add_parser("grad-check", help="finite-difference the loss gradients")
    c.add_argument("--step", type=float, default=1e-3)
    c.add_argument("--seeds", type=int, default=1)
    c.set_defaults(fn=_cmd_grad_check)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (ValueError, FormatError, OSError) as exc:
        _log(f"error: {exc}")
        return 1


def entrypoint():
    sys.exit(main())

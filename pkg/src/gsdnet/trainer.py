"""End-to-end training of two co-regularized segmentation networks.

Modes build on each other:

* ``ce_baseline``   one network, plain cross-entropy on the given labels.
* ``jocor``         two networks, small-loss selection, agreement loss.
* ``ablation-2``    adds boundary-distance weighting of the selected loss.
* ``ablation-3``    adds per-pixel label refinement; refined labels
                    supervise the rejected pixels (weighted CE).
* ``ablation-4``    as ablation-3 with superpixel-pooled refinement.
* ``ablation-5``    adds cross-image region transfer on per-pixel
                    refined labels instead of the complement term.
* ``gsd``           the full method: weighting, pooled refinement, and
                    region transfer with the consistency term.

Each iteration first freezes a :class:`BatchPlan` (selection masks,
refined labels, sampled regions, fused tensors), then evaluates the
objective and its gradients as a pure function of the two parameter
sets.  That split keeps the backward pass honest: everything discrete is
a constant of the plan, and the remaining computation is differentiable,
so finite differences of :func:`loss_and_grads` validate the analytic
gradients directly.

The random stream is consumed in a fixed documented order (per batch:
augmentation draws per image, refinement blends per image, then region
rectangles per pair), so a seed pins the whole trajectory bit-for-bit.
"""

from __future__ import annotations

import json
import os
import shutil
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import model as net
from .formats import read_image, read_labels, read_manifest, resolve
from .geometry import BoundaryWeightConfig, distance_to_boundary, schedule_weights
from .grids import argmax_pixelwise, clamp_probs, one_hot, softmax_pixelwise, take_class_prob
from .losses import LossReport, SelectionSchedule, retention_rate, select_clean
from .metrics import MetricRow, dice_score, read_metrics, write_metrics
from .refine import RefineConfig, refine_labels
from .superpixel import SlicConfig, slic
from .transfer import RegionConfig, fuse_pair, paste, sample_region_mask
from .utils import map_indexed
from .validation import make_rng

MODES = ("ce_baseline", "jocor", "gsd", "ablation-2", "ablation-3", "ablation-4", "ablation-5")
TAU_SOURCES = ("foreground", "measured", "fixed")
EVAL_MODES = ("net1", "ensemble")

_WEIGHTED = {"gsd", "ablation-2", "ablation-3", "ablation-4", "ablation-5"}
_REFINED = {"gsd": "superpixel-mean", "ablation-3": "per-pixel",
            "ablation-4": "superpixel-mean", "ablation-5": "per-pixel"}
_COMPLEMENT = {"ablation-3", "ablation-4"}
_TRANSFER = {"gsd", "ablation-5"}


@dataclass
class TrainConfig:
    mode: str = "gsd"
    epochs: int = 100
    batch_size: int = 8
    learning_rate: float = 5e-3
    weight_decay: float = 1e-5
    momentum: float = 0.0
    kl_weight: float = 1.0
    tau_source: str = "foreground"
    tau: float = 0.05
    tau_fg_scale: float = 0.15
    warmup_epochs: int = 10
    features: int = 8
    num_classes: int = 2
    weight_cap: float = 10.0
    weight_connectivity: int = 4
    slic_segments: int = 0  # 0 picks one region per 64 pixels
    slic_compactness: float = 10.0
    slic_iters: int = 10
    slic_connectivity: bool = True
    refine_pooling: str = "superpixel-mean"
    kt_area_min: float = 0.1
    kt_area_max: float = 0.4
    kt_aspect_min: float = 0.5
    kt_aspect_max: float = 2.0
    kt_foreground_bias: bool = True
    aug_jitter: float = 0.08
    aug_noise: float = 0.02
    eval_with: str = "net1"
    eval_last: int = 10
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.tau_source not in TAU_SOURCES:
            raise ValueError(f"tau_source must be one of {TAU_SOURCES}, got {self.tau_source!r}")
        if self.eval_with not in EVAL_MODES:
            raise ValueError(f"eval_with must be one of {EVAL_MODES}, got {self.eval_with!r}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.num_classes != 2:
            raise ValueError("only binary segmentation is supported")
        if not 0.0 <= self.tau < 1.0:
            raise ValueError(f"tau must be in [0, 1), got {self.tau}")

    def to_mapping(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = str(int(v)) if isinstance(v, bool) else str(v)
        return out

    @classmethod
    def from_mapping(cls, mapping):
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in mapping.items():
            if key not in types:
                raise ValueError(f"unknown config key {key!r}; valid keys: {sorted(types)}")
            t = types[key]
            if t == "bool":
                low = str(raw).strip().lower()
                if low in ("1", "true", "yes"):
                    kwargs[key] = True
                elif low in ("0", "false", "no"):
                    kwargs[key] = False
                else:
                    raise ValueError(f"config key {key!r}: expected a boolean, got {raw!r}")
            elif t == "int":
                kwargs[key] = int(raw)
            elif t == "float":
                kwargs[key] = float(raw)
            else:
                kwargs[key] = str(raw)
        return cls(**kwargs)


def parse_kv(text):
    """Parse ``key = value`` lines; '#' starts a comment."""
    out = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ValueError(f"line {ln}: expected key=value, got {line!r}")
        key, value = body.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path):
    return TrainConfig.from_mapping(parse_kv(Path(path).read_text()))


@dataclass
class Dataset:
    train_images: list
    train_noisy: list
    train_clean: list
    test_images: list
    test_labels: list


def load_dataset(manifest_path):
    entries = read_manifest(manifest_path)
    d = Dataset([], [], [], [], [])
    for e in entries:
        img = read_image(resolve(manifest_path, e.image))
        if e.split == "train":
            d.train_images.append(img)
            d.train_noisy.append(read_labels(resolve(manifest_path, e.noisy), num_classes=2))
            d.train_clean.append(read_labels(resolve(manifest_path, e.clean), num_classes=2))
        elif e.split == "test":
            d.test_images.append(img)
            d.test_labels.append(read_labels(resolve(manifest_path, e.clean), num_classes=2))
        else:
            raise ValueError(f"unknown split {e.split!r}")
    if not d.train_images:
        raise ValueError("manifest has no train images")
    return d


@dataclass
class TrainState:
    params1: net.ModelParams
    params2: net.ModelParams
    vel1: dict | None
    vel2: dict | None
    rng: np.random.Generator
    epoch: int
    tau: float
    rows: list
    raw_weights: list | None
    segments: list | None


@dataclass
class BatchPlan:
    """Everything discrete about one iteration, frozen.

    Given the plan, the objective is a smooth function of the two
    parameter sets (up to relu/pool subgradient conventions).
    """

    mode: str
    kl_weight: float
    x: np.ndarray
    x_aug: np.ndarray | None
    ngt: np.ndarray
    weights: np.ndarray | None
    clean: np.ndarray
    rate: float
    y: np.ndarray | None
    fused_x: np.ndarray | None
    fused_x_aug: np.ndarray | None
    fused_y: np.ndarray | None
    fused_w: np.ndarray | None


def resolve_tau(dataset, cfg):
    """Asymptotic drop fraction for small-loss selection."""
    if cfg.tau_source == "fixed":
        return cfg.tau
    if cfg.tau_source == "measured":
        rates = [float((n != c).mean()) for n, c in zip(dataset.train_noisy, dataset.train_clean)]
        return min(0.9, float(np.mean(rates)))
    fg = [float((n != 0).mean()) for n in dataset.train_noisy]
    return min(0.9, cfg.tau_fg_scale * float(np.mean(fg)))


def _weight_cfg(cfg):
    return BoundaryWeightConfig(cap=cfg.weight_cap, max_epochs=cfg.epochs,
                                connectivity=cfg.weight_connectivity)


def _slic_cfg(cfg):
    return SlicConfig(n_segments=cfg.slic_segments or None,
                      compactness=cfg.slic_compactness,
                      max_iters=cfg.slic_iters,
                      enforce_connectivity=cfg.slic_connectivity)


def _region_cfg(cfg):
    return RegionConfig(area_min=cfg.kt_area_min, area_max=cfg.kt_area_max,
                        aspect_min=cfg.kt_aspect_min, aspect_max=cfg.kt_aspect_max,
                        foreground_bias=cfg.kt_foreground_bias)


def _refine_cfg(cfg):
    pooling = _REFINED[cfg.mode]
    if cfg.mode == "gsd":
        pooling = cfg.refine_pooling
    return RefineConfig(pooling=pooling)


def init_state(dataset, cfg):
    """Fresh training state with per-image geometry caches."""
    params1 = net.init_params(make_rng(cfg.seed, 10), 1, cfg.num_classes, cfg.features)
    params2 = net.init_params(make_rng(cfg.seed, 11), 1, cfg.num_classes, cfg.features)
    raw_w = None
    if cfg.mode in _WEIGHTED:
        wcfg = _weight_cfg(cfg)
        raw_w = map_indexed(
            lambda y: distance_to_boundary(y, connectivity=wcfg.connectivity,
                                           empty_value=wcfg.cap),
            dataset.train_noisy)
    segments = None
    if _REFINED.get(cfg.mode) is not None and _refine_cfg(cfg).pooling == "superpixel-mean":
        scfg = _slic_cfg(cfg)
        segments = map_indexed(lambda x: slic(x, scfg), dataset.train_images)
    return TrainState(params1=params1, params2=params2, vel1=None, vel2=None,
                      rng=make_rng(cfg.seed, 12), epoch=0,
                      tau=resolve_tau(dataset, cfg), rows=[],
                      raw_weights=raw_w, segments=segments)


def _augment(x, cfg, rng):
    """Per-image photometric jitter plus pixel noise, clipped back to range."""
    out = np.empty_like(x)
    for b in range(x.shape[0]):
        shift = rng.uniform(-cfg.aug_jitter, cfg.aug_jitter)
        noise = rng.standard_normal(x.shape[1:]) * cfg.aug_noise
        out[b] = np.clip(x[b] + shift + noise, 0.0, 1.0)
    return out


def build_plan(params1, params2, x, ngt, cfg, epoch, tau, rng,
               raw_weights=None, segments=None):
    """Freeze one iteration's discrete structure.

    ``x`` is (B, H, W, 1) float64, ``ngt`` (B, H, W) int64; ``raw_weights``
    and ``segments`` are per-image lists aligned with the batch.
    """
    mode = cfg.mode
    if mode == "ce_baseline":
        b, h, w = ngt.shape
        return BatchPlan(mode=mode, kl_weight=cfg.kl_weight, x=x, x_aug=None, ngt=ngt,
                         weights=None, clean=np.ones((b, h, w), dtype=bool), rate=1.0,
                         y=None, fused_x=None, fused_x_aug=None, fused_y=None, fused_w=None)

    x_aug = _augment(x, cfg, rng)
    logits1, _ = net.forward(params1, x)
    logits2, _ = net.forward(params2, x_aug)
    p1 = softmax_pixelwise(logits1)
    p2 = softmax_pixelwise(logits2)
    ce1 = -np.log(clamp_probs(take_class_prob(p1, ngt)))
    ce2 = -np.log(clamp_probs(take_class_prob(p2, ngt)))
    la = np.log(clamp_probs(p1))
    lb = np.log(clamp_probs(p2))
    kl = ((p1 - p2) * (la - lb)).sum(axis=-1)
    stat = ce1 + ce2 + cfg.kl_weight * kl
    rate = retention_rate(epoch, SelectionSchedule(tau, cfg.warmup_epochs))
    clean = np.stack([select_clean(stat[b], rate) for b in range(stat.shape[0])])

    weights = None
    if mode in _WEIGHTED:
        wcfg = _weight_cfg(cfg)
        weights = np.stack([schedule_weights(rw, epoch, wcfg) for rw in raw_weights])

    y = None
    if mode in _REFINED:
        rcfg = _refine_cfg(cfg)
        ys = []
        for b in range(ngt.shape[0]):
            seg = None if segments is None else segments[b]
            lab, _ = refine_labels(p1[b], p2[b], seg, ngt[b], clean[b], rng=rng, cfg=rcfg)
            ys.append(lab)
        y = np.stack(ys)

    fused_x = fused_x_aug = fused_y = fused_w = None
    if mode in _TRANSFER:
        kcfg = _region_cfg(cfg)
        bsz = ngt.shape[0]
        if bsz % 2:
            raise ValueError(f"region transfer needs an even batch, got {bsz}")
        fused_x = np.empty_like(x)
        fused_x_aug = np.empty_like(x)
        fused_y = np.empty_like(y)
        fused_w = np.empty_like(weights)
        for t in range(0, bsz, 2):
            i, j = t, t + 1
            m_i = sample_region_mask(y[i], kcfg, rng)
            m_j = sample_region_mask(y[j], kcfg, rng)
            fp = fuse_pair(x[i], x[j], y[i], y[j], weights[i], weights[j], m_i, m_j)
            fused_x[i], fused_x[j] = fp.x_1to2, fp.x_2to1
            fused_y[i], fused_y[j] = fp.y_1to2, fp.y_2to1
            fused_w[i], fused_w[j] = fp.w_1to2, fp.w_2to1
            fused_x_aug[i] = paste(x_aug[i], x_aug[j], m_i[:, :, None])
            fused_x_aug[j] = paste(x_aug[j], x_aug[i], m_j[:, :, None])

    return BatchPlan(mode=mode, kl_weight=cfg.kl_weight, x=x, x_aug=x_aug, ngt=ngt,
                     weights=weights, clean=clean, rate=rate, y=y,
                     fused_x=fused_x, fused_x_aug=fused_x_aug,
                     fused_y=fused_y, fused_w=fused_w)


def loss_and_grads(params1, params2, plan, want_grads=True):
    """Objective value (decomposed) and parameter gradients for one plan.

    Pure in (params1, params2) given the plan; finite differences of the
    returned ``l_total`` against the returned gradients is the primary
    correctness check for the whole pipeline.
    """
    mode = plan.mode
    b, h, w = plan.ngt.shape
    npx = h * w

    logits1, tape1 = net.forward(params1, plan.x)
    p1 = softmax_pixelwise(logits1)

    if mode == "ce_baseline":
        ce1 = -np.log(clamp_probs(take_class_prob(p1, plan.ngt)))
        report = LossReport.build(l_gda=ce1.mean(), clean_fraction=1.0)
        if not want_grads:
            return report, None, None
        d1 = net.ce_grad_at_logits(p1, plan.ngt, np.full((b, h, w), 1.0 / (b * npx)))
        return report, net.backward(params1, tape1, d1), None

    logits2, tape2 = net.forward(params2, plan.x_aug)
    p2 = softmax_pixelwise(logits2)
    ce1 = -np.log(clamp_probs(take_class_prob(p1, plan.ngt)))
    ce2 = -np.log(clamp_probs(take_class_prob(p2, plan.ngt)))
    la = np.log(clamp_probs(p1))
    lb = np.log(clamp_probs(p2))
    kl = ((p1 - p2) * (la - lb)).sum(axis=-1)

    counts = plan.clean.reshape(b, -1).sum(axis=1).astype(np.float64)
    if (counts == 0).any():
        raise ValueError("empty selection mask in plan")
    if mode == "jocor":
        per = (plan.clean * (ce1 + ce2 + plan.kl_weight * kl)).reshape(b, -1).sum(axis=1)
        l_gda = float((per / counts).mean())
        coeff = plan.clean / counts[:, None, None] / b
        kl_coeff = plan.kl_weight * coeff
    else:
        wsel = plan.clean * plan.weights
        per = (wsel * (ce1 + ce2 + kl)).reshape(b, -1).sum(axis=1)
        l_gda = float((per / counts).mean())
        coeff = wsel / counts[:, None, None] / b
        kl_coeff = coeff

    d1 = d2 = None
    if want_grads:
        d1 = net.ce_grad_at_logits(p1, plan.ngt, coeff)
        d1 += net.symkl_grad_at_logits(p1, p2, kl_coeff)
        d2 = net.ce_grad_at_logits(p2, plan.ngt, coeff)
        d2 += net.symkl_grad_at_logits(p2, p1, kl_coeff)

    if mode in _COMPLEMENT:
        comp = ~plan.clean
        ccounts = comp.reshape(b, -1).sum(axis=1).astype(np.float64)
        live = ccounts > 0
        cey1 = -np.log(clamp_probs(take_class_prob(p1, plan.y)))
        cey2 = -np.log(clamp_probs(take_class_prob(p2, plan.y)))
        wcomp = comp * plan.weights
        per = (wcomp * (cey1 + cey2)).reshape(b, -1).sum(axis=1)
        safe = np.where(live, ccounts, 1.0)
        l_gda += float(np.where(live, per / safe, 0.0).mean())
        if want_grads:
            ccoeff = wcomp * (live / safe)[:, None, None] / b
            d1 += net.ce_grad_at_logits(p1, plan.y, ccoeff)
            d2 += net.ce_grad_at_logits(p2, plan.y, ccoeff)

    l_kt = 0.0
    l_cor = 0.0
    g1 = g2 = None
    if mode in _TRANSFER:
        pairs = b // 2
        logits_f1, tape_f1 = net.forward(params1, plan.fused_x)
        logits_f2, tape_f2 = net.forward(params2, plan.fused_x_aug)
        q1 = softmax_pixelwise(logits_f1)
        q2 = softmax_pixelwise(logits_f2)
        df1 = np.zeros_like(logits_f1) if want_grads else None
        df2 = np.zeros_like(logits_f2) if want_grads else None
        for f in range(b):
            yf, wf = plan.fused_y[f], plan.fused_w[f]
            for q, df in ((q1, df1), (q2, df2)):
                pf = q[f]
                cef = -np.log(clamp_probs(take_class_prob(pf, yf)))
                yb = (yf == 1).astype(np.float64)
                fgp = pf[..., 1]
                num = 2.0 * (fgp * yb).sum() + 1e-5
                den = fgp.sum() + yb.sum() + 1e-5
                l_kt += float((cef * wf).mean()) + float(1.0 - num / den)
                if want_grads:
                    df[f] += net.ce_grad_at_logits(pf, yf, wf / (npx * pairs))
                    df[f] += net.dice_grad_at_logits(pf, yf, scale=1.0 / pairs)
            klf = ((q1[f] - q2[f]) * (np.log(clamp_probs(q1[f])) - np.log(clamp_probs(q2[f])))
                   ).sum(axis=-1)
            l_cor += float((klf * wf).mean())
            if want_grads:
                df1[f] += net.symkl_grad_at_logits(q1[f], q2[f], wf / (npx * pairs))
                df2[f] += net.symkl_grad_at_logits(q2[f], q1[f], wf / (npx * pairs))
        l_kt /= pairs
        l_cor /= pairs
        if want_grads:
            g1 = net.backward(params1, tape_f1, df1)
            g2 = net.backward(params2, tape_f2, df2)

    report = LossReport.build(l_gda=l_gda, l_kt=l_kt, l_cor=l_cor,
                              clean_fraction=plan.rate)
    if not want_grads:
        return report, None, None
    grads1 = net.backward(params1, tape1, d1)
    grads2 = net.backward(params2, tape2, d2)
    if g1 is not None:
        net.accumulate(grads1, g1)
        net.accumulate(grads2, g2)
    return report, grads1, grads2


def sgd_step(params, grads, cfg, velocity=None):
    """In-place SGD with decoupled weight decay and optional momentum."""
    if velocity is None and cfg.momentum > 0:
        velocity = {k: np.zeros_like(v) for k, v in params.layers.items()}
    for name, wv in params.layers.items():
        g = grads[name]
        if not np.isfinite(g).all():
            raise ValueError(f"non-finite gradient in layer {name}")
        g = g + cfg.weight_decay * wv
        if cfg.momentum > 0:
            velocity[name] = cfg.momentum * velocity[name] + g
            g = velocity[name]
        params.layers[name] = wv - cfg.learning_rate * g
    return velocity


def train_epoch(state, dataset, cfg):
    """One pass over the training set; returns the mean loss report."""
    n = len(dataset.train_images)
    bs = min(cfg.batch_size, n)
    if cfg.mode in _TRANSFER:
        bs -= bs % 2
        if bs < 2:
            raise ValueError("region transfer needs batches of at least 2 images")
    order = state.rng.permutation(n)
    reports = []
    for start in range(0, n - bs + 1, bs):
        idx = order[start : start + bs]
        x = np.stack([dataset.train_images[i] for i in idx])[..., None]
        ngt = np.stack([dataset.train_noisy[i] for i in idx])
        raw_w = [state.raw_weights[i] for i in idx] if state.raw_weights is not None else None
        segs = [state.segments[i] for i in idx] if state.segments is not None else None
        plan = build_plan(state.params1, state.params2, x, ngt, cfg, state.epoch,
                          state.tau, state.rng, raw_weights=raw_w, segments=segs)
        report, g1, g2 = loss_and_grads(state.params1, state.params2, plan)
        state.vel1 = sgd_step(state.params1, g1, cfg, state.vel1)
        if g2 is not None:
            state.vel2 = sgd_step(state.params2, g2, cfg, state.vel2)
        reports.append(report)
    state.epoch += 1
    if not reports:
        raise ValueError("training set smaller than one batch")
    return LossReport(
        l_gda=float(np.mean([r.l_gda for r in reports])),
        l_kt=float(np.mean([r.l_kt for r in reports])),
        l_cor=float(np.mean([r.l_cor for r in reports])),
        l_total=float(np.mean([r.l_total for r in reports])),
        clean_fraction=float(np.mean([r.clean_fraction for r in reports])),
    )


def predict_probs(params1, params2, images, eval_with="net1", chunk=16):
    """Class probabilities for a list of (H, W) images."""
    idx_chunks = [list(range(i, min(i + chunk, len(images)))) for i in
                  range(0, len(images), chunk)]

    def run(ids):
        x = np.stack([images[i] for i in ids])[..., None]
        logits1, _ = net.forward(params1, x)
        p = softmax_pixelwise(logits1)
        if eval_with == "ensemble":
            logits2, _ = net.forward(params2, x)
            p = 0.5 * (p + softmax_pixelwise(logits2))
        return p

    outs = map_indexed(run, idx_chunks)
    return np.concatenate(outs, axis=0) if outs else np.zeros((0,))


def evaluate(state, dataset, cfg):
    """Mean test Dice in percent (nan without a test split)."""
    if not dataset.test_images:
        return float("nan")
    probs = predict_probs(state.params1, state.params2, dataset.test_images,
                          eval_with=cfg.eval_with)
    scores = [dice_score(argmax_pixelwise(probs[i]), dataset.test_labels[i])
              for i in range(len(dataset.test_images))]
    return float(np.mean(scores))


def save_checkpoint(state, cfg, path):
    """Atomically write everything needed to resume bit-exactly."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    net.save_model(state.params1, tmp / "net1.gsdm", dtype="f64")
    net.save_model(state.params2, tmp / "net2.gsdm", dtype="f64")
    for name, vel in (("vel1", state.vel1), ("vel2", state.vel2)):
        if vel is not None:
            holder = net.ModelParams(state.params1.c_in, state.params1.num_classes,
                                     state.params1.features, vel)
            net.save_model(holder, tmp / f"{name}.gsdm", dtype="f64")
    meta = {
        "epoch": state.epoch,
        "tau": state.tau,
        "rng_state": state.rng.bit_generator.state,
        "config": cfg.to_mapping(),
    }
    (tmp / "state.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    write_metrics(tmp / "rows.csv", state.rows)
    if path.exists():
        shutil.rmtree(path)
    os.replace(tmp, path)


def load_checkpoint(path, dataset, cfg):
    """Restore a checkpoint; geometry caches are rebuilt from the dataset."""
    path = Path(path)
    meta = json.loads((path / "state.json").read_text())
    stored = TrainConfig.from_mapping(meta["config"])
    for key in ("mode", "seed", "features", "epochs", "batch_size"):
        if getattr(stored, key) != getattr(cfg, key):
            raise ValueError(f"checkpoint {key}={getattr(stored, key)!r} does not match "
                             f"config {key}={getattr(cfg, key)!r}")
    state = init_state(dataset, cfg)
    state.params1 = net.load_model(path / "net1.gsdm")
    state.params2 = net.load_model(path / "net2.gsdm")
    for name in ("vel1", "vel2"):
        f = path / f"{name}.gsdm"
        if f.exists():
            setattr(state, name, net.load_model(f).layers)
    state.rng.bit_generator.state = meta["rng_state"]
    state.epoch = int(meta["epoch"])
    state.tau = float(meta["tau"])
    state.rows = read_metrics(path / "rows.csv")
    return state


@dataclass
class TrainResult:
    state: TrainState
    rows: list
    metrics_path: Path | None
    checkpoint_path: Path | None


def train(dataset, cfg, out_dir=None, resume=None, log=None):
    """Run the configured mode to completion.

    With ``out_dir`` the per-epoch metrics CSV and a final checkpoint are
    written there; ``resume`` restores a checkpoint directory first and
    continues, reproducing the uninterrupted run bit-for-bit.
    """
    if resume is not None:
        state = load_checkpoint(resume, dataset, cfg)
    else:
        state = init_state(dataset, cfg)
    out = Path(out_dir) if out_dir is not None else None
    csv_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "metrics.csv"
    while state.epoch < cfg.epochs:
        report = train_epoch(state, dataset, cfg)
        dice = evaluate(state, dataset, cfg)
        row = MetricRow(epoch=state.epoch - 1, mode=cfg.mode, seed=cfg.seed,
                        l_gda=report.l_gda, l_kt=report.l_kt, l_cor=report.l_cor,
                        l_total=report.l_total, clean_fraction=report.clean_fraction,
                        test_dice=dice)
        state.rows.append(row)
        if csv_path is not None:
            write_metrics(csv_path, state.rows)
        if log is not None:
            log(f"epoch {row.epoch:3d} mode {cfg.mode} loss {report.l_total:.4f} "
                f"dice {dice:.2f}")
        if (out is not None and cfg.checkpoint_every > 0
                and state.epoch % cfg.checkpoint_every == 0 and state.epoch < cfg.epochs):
            save_checkpoint(state, cfg, out / f"ckpt_e{state.epoch}")
    ckpt = None
    if out is not None:
        ckpt = out / "ckpt_final"
        save_checkpoint(state, cfg, ckpt)
    return TrainResult(state=state, rows=state.rows, metrics_path=csv_path,
                       checkpoint_path=ckpt)

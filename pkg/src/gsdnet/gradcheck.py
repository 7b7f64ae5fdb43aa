"""Finite-difference validation of every analytic gradient path.

Central differences with a configurable step are compared against
backprop for the weighted cross-entropy, Dice, and symmetric KL terms in
isolation, and for the full composite objective through a frozen batch
plan (selection, refinement, and region transfer included).  Relative
error uses max(|fd|, |analytic|, 1e-6) as the denominator so that
negligible gradients do not divide by zero.

The network is piecewise smooth in its relu and pooling units, so a
perturbed coordinate can land the two central-difference evaluations on
different smooth pieces (bias coordinates shift a whole layer's
pre-activations by the full step), and across such a fold a central
difference does not estimate a derivative.  Fold crossings are detected
exactly: each probe compares the relu sign patterns and pooling argmax
choices of every forward pass at the two evaluation points and is
replaced by a fresh coordinate when they differ.  Equality at the
pattern is constant on the whole segment, because each pre-activation is
linear in the probed coordinate once every upstream pattern is fixed,
and a linear function changes sign at most once.  The decision never
looks at the analytic gradient, so a wrong backprop cannot influence
which probes survive; it is caught by the survivors.
"""

from __future__ import annotations

import numpy as np

from . import model as net
from .geometry import distance_to_boundary
from .grids import clamp_probs, softmax_pixelwise, take_class_prob
from .losses import dice_loss
from .trainer import TrainConfig, build_plan, loss_and_grads
from .validation import make_rng

TERMS = ("weighted_ce", "dice", "sym_kl", "total")
_FLOOR = 1e-6


def _rel_err(fd, an):
    return abs(fd - an) / max(abs(fd), abs(an), _FLOOR)


def _pattern(tapes):
    """Byte string identifying the linear piece each forward pass is on."""
    parts = []
    for tape in tapes:
        for name in sorted(tape.masks):
            parts.append(np.packbits(tape.masks[name].reshape(-1)).tobytes())
        parts.append(np.ascontiguousarray(tape.pool_idx).tobytes())
    return b"".join(parts)


_OVERSAMPLE = 3


def _candidate_coords(params, rng, per_layer):
    """Per layer, an oversampled coordinate pool to draw probes from.

    Probes lost to fold crossings are replaced from the same pool so
    every layer keeps its intended probe count.
    """
    out = []
    for name, arr in params.layers.items():
        want = min(per_layer, arr.size)
        n = min(arr.size, _OVERSAMPLE * want)
        pool = [int(f) for f in rng.choice(arr.size, size=n, replace=False)]
        out.append((name, want, pool))
    return out


def _fd_check(case, params_list, step, rng, per_layer):
    """Compare central differences against analytic gradients.

    ``case(want_grads)`` returns (scalar, [grads dict per params] | None,
    pattern bytes).  Returns the list of relative errors over sampled
    coordinates; probes whose two evaluations land on different linear
    pieces are discarded and replaced from the oversampled pool.
    """
    _, grads_list, _ = case(True)
    errs = []
    wanted = 0
    for params, grads in zip(params_list, grads_list):
        for name, want, pool in _candidate_coords(params, rng, per_layer):
            arr = params.layers[name]
            wanted += want
            got = 0
            for flat in pool:
                if got == want:
                    break
                orig = arr.flat[flat]
                arr.flat[flat] = orig + step
                hi, _, pat_hi = case(False)
                arr.flat[flat] = orig - step
                lo, _, pat_lo = case(False)
                arr.flat[flat] = orig
                if pat_hi != pat_lo:
                    continue
                fd = (hi - lo) / (2.0 * step)
                errs.append(_rel_err(fd, grads[name].flat[flat]))
                got += 1
    if len(errs) * 2 < wanted:
        raise RuntimeError(
            "most finite-difference probes straddled activation folds; "
            "the evaluation point is degenerate")
    return errs


def _toy_labels(rng, h, w):
    """A random blob-ish binary label grid with both classes present."""
    y = (rng.standard_normal((h, w)) + 1.2 * rng.standard_normal() > 0.6).astype(np.int64)
    if y.min() == y.max():
        y[h // 2, w // 2] = 1 - y[0, 0]
    return y


def run_grad_check(seed=0, step=1e-3, image_size=8, features=4, per_layer=12):
    """Finite-difference all loss terms; returns {term: (median, max)}."""
    rng = make_rng(seed, 700)
    h = w = image_size
    x = rng.uniform(0.0, 1.0, size=(h, w))
    y = _toy_labels(rng, h, w)
    wgt = rng.uniform(0.5, 3.0, size=(h, w))
    params1 = net.init_params(make_rng(seed, 701), 1, 2, features)
    params2 = net.init_params(make_rng(seed, 702), 1, 2, features)
    results = {}

    def ce_case(want_grads):
        logits, tape = net.forward(params1, x)
        p = softmax_pixelwise(logits)
        value = float((-np.log(clamp_probs(take_class_prob(p, y))) * wgt).mean())
        if not want_grads:
            return value, None, _pattern([tape])
        d = net.ce_grad_at_logits(p, y, wgt / (h * w))
        return value, [net.backward(params1, tape, d)], _pattern([tape])

    def dice_case(want_grads):
        logits, tape = net.forward(params1, x)
        p = softmax_pixelwise(logits)
        value = dice_loss(p, y)
        if not want_grads:
            return value, None, _pattern([tape])
        d = net.dice_grad_at_logits(p, y)
        return value, [net.backward(params1, tape, d)], _pattern([tape])

    def kl_case(want_grads):
        logits1, tape1 = net.forward(params1, x)
        logits2, tape2 = net.forward(params2, x)
        p = softmax_pixelwise(logits1)
        q = softmax_pixelwise(logits2)
        lp, lq = np.log(clamp_probs(p)), np.log(clamp_probs(q))
        value = float((((p - q) * (lp - lq)).sum(axis=-1) * wgt).mean())
        pat = _pattern([tape1, tape2])
        if not want_grads:
            return value, None, pat
        d1 = net.symkl_grad_at_logits(p, q, wgt / (h * w))
        d2 = net.symkl_grad_at_logits(q, p, wgt / (h * w))
        return value, [net.backward(params1, tape1, d1), net.backward(params2, tape2, d2)], pat

    check_rng = make_rng(seed, 703)
    results["weighted_ce"] = _fd_check(ce_case, [params1], step, check_rng, per_layer)
    results["dice"] = _fd_check(dice_case, [params1], step, check_rng, per_layer)
    results["sym_kl"] = _fd_check(kl_case, [params1, params2], step, check_rng, per_layer)

    # Composite objective through a frozen plan: two images, one pair.
    cfg = TrainConfig(mode="gsd", epochs=10, batch_size=2, features=features,
                      slic_segments=4, tau_source="fixed", tau=0.2, seed=seed)
    xb = np.stack([x, rng.uniform(0.0, 1.0, size=(h, w))])[..., None]
    yb = np.stack([y, _toy_labels(rng, h, w)])
    raw_w = [distance_to_boundary(yb[i], empty_value=cfg.weight_cap) for i in range(2)]
    from .superpixel import SlicConfig, slic

    segs = [slic(xb[i, :, :, 0], SlicConfig(n_segments=4)) for i in range(2)]
    plan = build_plan(params1, params2, xb, yb, cfg, epoch=3, tau=cfg.tau,
                      rng=make_rng(seed, 704), raw_weights=raw_w, segments=segs)

    def total_case(want_grads):
        report, g1, g2 = loss_and_grads(params1, params2, plan, want_grads=want_grads)
        tapes = [net.forward(params1, plan.x)[1], net.forward(params2, plan.x_aug)[1]]
        if plan.fused_x is not None:
            tapes.append(net.forward(params1, plan.fused_x)[1])
            tapes.append(net.forward(params2, plan.fused_x_aug)[1])
        return report.l_total, [g1, g2] if want_grads else None, _pattern(tapes)

    results["total"] = _fd_check(total_case, [params1, params2], step, check_rng, per_layer)
    return {term: (float(np.median(errs)), float(np.max(errs)))
            for term, errs in results.items()}

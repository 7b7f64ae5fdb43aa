"""Synthetic annotation-noise simulators for binary masks.

Three corruption kinds, addressed by the codes used on the command line:

* ``S_DE``  one round of morphological dilation or erosion (picked
            uniformly at random) with a disk structuring element.
* ``S_R``   foreground-reducing boundary carving: a clamped random walk
            along the outer contour sets a local carving radius, and disks
            of that radius remove foreground.  Output is a subset of gt.
* ``S_E``   the same walk construction adding background pixels instead.
            Output is a superset of gt.

For the walk kinds the walk amplitude is calibrated by bisection so that
the realized fraction of changed pixels lands near the requested
strength; when the target is geometrically unreachable the report flags
the best effort instead of failing.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .geometry import squared_distance_transform
from .validation import check_binary, make_rng

KINDS = ("S_DE", "S_R", "S_E")

_CALIBRATION_ITERS = 20
_RATE_TOLERANCE = 0.25


@dataclass
class NoiseSpec:
    """Parameters of one corruption draw."""

    kind: str
    strength: float
    structuring_radius: int = 2
    walk_step: int = 4
    walk_length: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not 0.0 <= self.strength < 1.0:
            raise ValueError(f"strength must be in [0, 1), got {self.strength}")
        if self.structuring_radius < 1:
            raise ValueError(f"structuring_radius must be >= 1, got {self.structuring_radius}")
        if self.walk_step < 1:
            raise ValueError(f"walk_step must be >= 1, got {self.walk_step}")
        if self.walk_length < 1:
            raise ValueError(f"walk_length must be >= 1, got {self.walk_length}")


@dataclass
class NoiseReport:
    """Realized corruption summary returned next to every noisy mask."""

    realized_rate: float
    changed_pixels: int
    target_met: bool = True


def dilate(mask, radius):
    """Binary dilation by a closed Euclidean disk of the given radius."""
    m = np.asarray(mask).astype(bool)
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    if not m.any():
        return m.copy()
    return squared_distance_transform(m) <= float(radius) ** 2


def erode(mask, radius):
    """Binary erosion by a closed disk; the image border acts as foreground."""
    m = np.asarray(mask).astype(bool)
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    if m.all():
        return m.copy()
    return m & ~(squared_distance_transform(~m) <= float(radius) ** 2)


def measure_noise(gt, noisy):
    """Fraction of pixels whose label changed between gt and noisy."""
    a = check_binary(gt, "gt")
    b = check_binary(noisy, "noisy")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: gt {a.shape} vs noisy {b.shape}")
    changed = int((a != b).sum())
    return NoiseReport(realized_rate=changed / a.size, changed_pixels=changed)


_MOORE = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))
_MOORE_INDEX = {d: i for i, d in enumerate(_MOORE)}


def _trace_component(fg, start):
    """Outer contour of one 8-connected component by Moore neighbor tracing.

    ``start`` must be the raster-first pixel of the component, whose west
    neighbor is then guaranteed to be background.  Stops when the start
    pixel is re-entered from the same direction.
    """
    h, w = fg.shape
    si, sj = start

    def neighbors_from(ci, cj, back):
        for k in range(1, 9):
            d = (back + k) % 8
            ni, nj = ci + _MOORE[d][0], cj + _MOORE[d][1]
            if 0 <= ni < h and 0 <= nj < w and fg[ni, nj]:
                return d
        return -1

    first_dir = neighbors_from(si, sj, 6)
    if first_dir < 0:
        return np.array([[si, sj]], dtype=np.int64)
    contour = []
    ci, cj = si, sj
    back = 6  # direction from current pixel toward the backtrack position
    initial = None
    for _ in range(8 * h * w):
        d = neighbors_from(ci, cj, back)
        state = (ci, cj, d)
        if initial is None:
            initial = state
        elif state == initial:
            break
        contour.append((ci, cj))
        prev = (back + (d - back - 1) % 8) % 8  # last background direction scanned
        bi, bj = ci + _MOORE[prev][0], cj + _MOORE[prev][1]
        ci, cj = ci + _MOORE[d][0], cj + _MOORE[d][1]
        back = _MOORE_INDEX[(bi - ci, bj - cj)]
    return np.asarray(contour, dtype=np.int64)


def trace_contours(mask):
    """Outer contours of all 8-connected foreground components.

    Returns a list of (L, 2) int64 arrays ordered by component discovery
    (raster order of their first pixels).
    """
    fg = np.asarray(mask).astype(bool)
    h, w = fg.shape
    seen = np.zeros_like(fg)
    contours = []
    for i, j in np.argwhere(fg):
        if seen[i, j]:
            continue
        queue = deque([(i, j)])
        seen[i, j] = True
        while queue:
            ci, cj = queue.popleft()
            for di, dj in _MOORE:
                ni, nj = ci + di, cj + dj
                if 0 <= ni < h and 0 <= nj < w and fg[ni, nj] and not seen[ni, nj]:
                    seen[ni, nj] = True
                    queue.append((ni, nj))
        contours.append(_trace_component(fg, (i, j)))
    return contours


def simulate_morphological(gt, spec):
    """Dilate or erode the foreground, chosen uniformly at random."""
    y = check_binary(gt, "gt")
    if spec.kind != "S_DE":
        raise ValueError(f"spec.kind must be S_DE, got {spec.kind!r}")
    rng = make_rng(spec.seed)
    fg = y == 1
    grow = bool(rng.integers(0, 2))
    out = dilate(fg, spec.structuring_radius) if grow else erode(fg, spec.structuring_radius)
    noisy = out.astype(np.int64)
    return noisy, measure_noise(y, noisy)


def _paint_disks(shape, points, radii):
    """Union of closed disks centered at integer points; radii < 0.5 are inert."""
    band = np.zeros(shape, dtype=bool)
    h, w = shape
    for (pi, pj), r in zip(points, radii):
        if r < 0.5:
            continue
        ri = int(r)
        i0, i1 = max(0, pi - ri), min(h, pi + ri + 1)
        j0, j1 = max(0, pj - ri), min(w, pj + ri + 1)
        ii = np.arange(i0, i1)[:, None] - pi
        jj = np.arange(j0, j1)[None, :] - pj
        band[i0:i1, j0:j1] |= ii * ii + jj * jj <= r * r
    return band


def simulate_contour_walk(gt, spec):
    """Carve (S_R) or append (S_E) boundary disks driven by a clamped walk.

    The walk state is an integer offset in [0, walk_step], advanced by
    ``walk_length`` +-1 steps between consecutive contour pixels and
    started uniformly at random per contour.  Offsets scale into carving
    radii through an amplitude found by bisection against the target
    changed-pixel fraction.
    """
    y = check_binary(gt, "gt")
    if spec.kind not in ("S_R", "S_E"):
        raise ValueError(f"spec.kind must be S_R or S_E, got {spec.kind!r}")
    fg = y == 1
    if not fg.any() or spec.strength == 0.0:
        noisy = y.copy()
        report = measure_noise(y, noisy)
        report.target_met = spec.strength == 0.0
        return noisy, report

    rng = make_rng(spec.seed)
    points = []
    offsets = []
    for contour in trace_contours(fg):
        o = int(rng.integers(0, spec.walk_step + 1))
        for p in contour:
            for _ in range(spec.walk_length):
                o = min(max(o + (1 if rng.integers(0, 2) else -1), 0), spec.walk_step)
            points.append((int(p[0]), int(p[1])))
            offsets.append(o)
    offsets = np.asarray(offsets, dtype=np.float64)
    target = spec.strength * y.size

    def changed_mask(amplitude):
        band = _paint_disks(y.shape, points, offsets * amplitude)
        return (band & fg) if spec.kind == "S_R" else (band & ~fg)

    # Bracket the target, then bisect; changed count grows with amplitude.
    cap = (y.shape[0] + y.shape[1]) / max(1.0, offsets.max() or 1.0)
    hi = 1.0
    while changed_mask(hi).sum() < target and hi < cap:
        hi = min(hi * 2.0, cap)
    lo = 0.0
    best_a, best_err = hi, abs(int(changed_mask(hi).sum()) - target)
    for _ in range(_CALIBRATION_ITERS):
        mid = 0.5 * (lo + hi)
        n = int(changed_mask(mid).sum())
        if abs(n - target) < best_err:
            best_a, best_err = mid, abs(n - target)
        if n < target:
            lo = mid
        else:
            hi = mid

    band = changed_mask(best_a)
    noisy = y.copy()
    noisy[band] = 0 if spec.kind == "S_R" else 1
    report = measure_noise(y, noisy)
    report.target_met = (
        abs(report.realized_rate - spec.strength) <= _RATE_TOLERANCE * spec.strength
    )
    return noisy, report


def simulate(gt, spec):
    """Dispatch on the corruption kind."""
    if spec.kind == "S_DE":
        return simulate_morphological(gt, spec)
    return simulate_contour_walk(gt, spec)

"""Independent reference implementations used by the tests.

Each oracle is written from first principles and shares no code with the
package beyond its public data types.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
from scipy.stats import qmc


def ray_rectangle_distance(w: float, l: float, box_heading: float, ray_angle: float) -> float:
    """Distance from a rectangle's center to its boundary along a ray.

    The rectangle has length ``l`` along ``box_heading`` and width ``w``
    across it. The ray leaves the center at polar angle ``ray_angle``. The
    four edges are intersected as explicit segments.
    """
    hx, hz = math.cos(box_heading), math.sin(box_heading)
    px, pz = -hz, hx
    corners = [
        (sl * l / 2 * hx + sw * w / 2 * px, sl * l / 2 * hz + sw * w / 2 * pz)
        for sl, sw in ((1, 1), (1, -1), (-1, -1), (-1, 1))
    ]
    dx, dz = math.cos(ray_angle), math.sin(ray_angle)
    best = math.inf
    for (ax, az), (bx, bz) in zip(corners, corners[1:] + corners[:1]):
        ex, ez = bx - ax, bz - az
        # solve t * d = a + s * e for (t, s)
        det = dx * (-ez) - dz * (-ex)
        if abs(det) < 1e-15:
            continue
        t = (ax * (-ez) - az * (-ex)) / det
        s = (dx * az - dz * ax) / det
        if t > 0 and -1e-12 <= s <= 1 + 1e-12:
            best = min(best, t)
    return best


_SOBOL_CACHE: dict[int, np.ndarray] = {}


def sobol_unit_square(log2_n: int = 20, seed: int = 1234) -> np.ndarray:
    """Scrambled Sobol points in [0, 1)^2 (cached)."""
    if log2_n not in _SOBOL_CACHE:
        _SOBOL_CACHE[log2_n] = qmc.Sobol(d=2, scramble=True, seed=seed).random_base2(log2_n)
    return _SOBOL_CACHE[log2_n]


def _footprint_frame(box):
    """Center, unit length axis and unit width axis of a box footprint in (x, z)."""
    c = np.array([box.center[0], box.center[2]])
    a = np.array([math.cos(box.yaw), -math.sin(box.yaw)])
    b = np.array([math.sin(box.yaw), math.cos(box.yaw)])
    return c, a, b


def monte_carlo_bev_iou(box_a, box_b, log2_n: int = 20) -> float:
    """BEV IoU by quasi-random sampling of box A's footprint.

    Points fill A's rectangle uniformly, so the intersection area is A's
    area times the fraction of points that fall inside B.
    """
    w_a, l_a = box_a.size[0], box_a.size[2]
    w_b, l_b = box_b.size[0], box_b.size[2]
    unit = sobol_unit_square(log2_n)
    ca, aa, ba = _footprint_frame(box_a)
    cb, ab, bb = _footprint_frame(box_b)
    s = (unit[:, 0] - 0.5) * l_a
    t = (unit[:, 1] - 0.5) * w_a
    # coordinates of the samples in B's frame, computed without forming world points
    off = ca - cb
    along = s * (aa @ ab) + t * (ba @ ab) + off @ ab
    across = s * (aa @ bb) + t * (ba @ bb) + off @ bb
    inside = (np.abs(along) <= l_b / 2) & (np.abs(across) <= w_b / 2)
    area_a, area_b = w_a * l_a, w_b * l_b
    inter = area_a * np.count_nonzero(inside) / len(unit)
    return inter / (area_a + area_b - inter)


def brute_force_ap40(scores, is_tp, gt_count: int) -> float:
    """AP40 from first principles with exact rational arithmetic.

    For every distinct score threshold the detections at or above it form
    one operating point. The precision at recall ``i / 40`` is the best
    precision among operating points reaching that recall.
    """
    points = []
    for thr in sorted(set(scores), reverse=True):
        tp = sum(1 for s, t in zip(scores, is_tp) if s >= thr and t)
        fp = sum(1 for s, t in zip(scores, is_tp) if s >= thr and not t)
        points.append((Fraction(tp, gt_count), Fraction(tp, tp + fp)))
    total = Fraction(0)
    for i in range(1, 41):
        r = Fraction(i, 40)
        total += max((p for rec, p in points if rec >= r), default=Fraction(0))
    return float(total / 40)


def greedy_center_match(gts, dets, scores, threshold):
    """TP flags of a plain greedy matcher on BEV center distance (single category)."""
    order = sorted(range(len(dets)), key=lambda i: (-scores[i], i))
    used = set()
    flags = {}
    for i in order:
        cands = []
        for j, g in enumerate(gts):
            if j in used:
                continue
            d = math.dist((g.center[0], g.center[2]), (dets[i].center[0], dets[i].center[2]))
            if d <= threshold:
                cands.append((d, j))
        if cands:
            _, j = min(cands)
            used.add(j)
            flags[i] = True
        else:
            flags[i] = False
    return [flags[i] for i in range(len(dets))]


def axis_aligned_iou(a, b) -> float:
    """IoU of two ``(x0, y0, x1, y1)`` rectangles."""
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    area = lambda r: (r[2] - r[0]) * (r[3] - r[1])  # noqa: E731
    return inter / (area(a) + area(b) - inter)


def corner_displacement_ious(w: float, h: float, r: float) -> list[float]:
    """2D IoU of a ``w x h`` box with the three corner-perturbed variants at radius ``r``."""
    gt = (0.0, 0.0, w, h)
    shifted = (r, r, w + r, h + r)  # both corners move the same way
    shrunk = (r, r, w - r, h - r)  # both corners move inward
    grown = (-r, -r, w + r, h + r)  # both corners move outward
    return [axis_aligned_iou(gt, shifted), axis_aligned_iou(gt, shrunk), axis_aligned_iou(gt, grown)]


def brute_force_depth_map(points, cam, shape, stride: int = 1, d_max: float = 80.0):
    """Per-pixel minimum depth by looping over every point."""
    h, w = shape
    out = np.full((h, w), np.inf)
    for x, y, z in points:
        if z <= 0 or z > d_max:
            continue
        u = cam.fu * x / z + cam.cx
        v = cam.fv * y / z + cam.cy
        c, r = math.floor(u / stride), math.floor(v / stride)
        if 0 <= c < w and 0 <= r < h:
            out[r, c] = min(out[r, c], z)
    return out

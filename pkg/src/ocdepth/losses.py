"""Keypoint heatmaps, focal loss and uncertainty-aware depth losses.

Every loss returns its value together with the exact analytic gradient with
respect to its inputs, so a caller can chain them into a model without an
autodiff framework.

Heatmaps are ``(C, H, W)`` arrays. Depth predictions carry the raw
pre-activation ``depth_raw`` (decoded as ``1 / sigmoid(raw) - 1``) and the
log variance ``log_var``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .geometry import Box3D, CameraIntrinsics, GeometryError, project, surface_to_center, viewing_angle

EPS = 1e-7
FOCAL_ALPHA = 2.0
FOCAL_BETA = 4.0
FG_WEIGHT = 0.7


# ---------------------------------------------------------------------------
# depth transform


def decode_depth(raw):
    """``1 / sigmoid(raw) - 1``, which simplifies to ``exp(-raw)``."""
    return np.exp(-np.asarray(raw, dtype=float)) if np.ndim(raw) else math.exp(-raw)


def encode_depth(d):
    """Inverse of :func:`decode_depth`: ``-log(d)``."""
    arr = np.asarray(d, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError("depth must be positive to encode")
    return -np.log(arr) if np.ndim(d) else -math.log(d)


# ---------------------------------------------------------------------------
# keypoint heatmap


def gaussian_radius(box_w: float, box_h: float, min_overlap: float = 0.7) -> float:
    """Largest corner displacement keeping 2D IoU >= ``min_overlap``.

    Takes the tightest of the three corner configurations: one corner inside
    and one outside the ground-truth box, both inside, both outside. Each
    gives a quadratic in the radius whose admissible root is the bound.
    """
    w, h, o = float(box_w), float(box_h), float(min_overlap)
    if o >= 1.0:
        return 0.0
    # one corner in, one out: (w-r)(h-r) / (2wh - (w-r)(h-r)) >= o
    b1, c1 = w + h, w * h * (1 - o) / (1 + o)
    r1 = (b1 - math.sqrt(max(b1 * b1 - 4 * c1, 0.0))) / 2
    # both inside: (w-2r)(h-2r) / wh >= o
    b2, c2 = 2 * (w + h), (1 - o) * w * h
    r2 = (b2 - math.sqrt(max(b2 * b2 - 16 * c2, 0.0))) / 8
    # both outside: wh / ((w+2r)(h+2r)) >= o
    a3, b3, c3 = 4 * o, 2 * o * (w + h), (o - 1) * w * h
    r3 = (-b3 + math.sqrt(max(b3 * b3 - 4 * a3 * c3, 0.0))) / (2 * a3)
    return max(min(r1, r2, r3), 0.0)


def render_heatmap(keypoints: Iterable[tuple], shape: tuple[int, int, int]) -> np.ndarray:
    """Splat Gaussian peaks on a ``(C, H, W)`` grid.

    Args:
        keypoints: ``(u, v, category_index, radius)`` per object, with ``u``
            and ``v`` integer cell coordinates.
        shape: ``(C, H, W)``.

    Each kernel is ``exp(-(du^2 + dv^2) / (2 (r/3)^2))`` truncated to the
    square of half-width ``floor(r)``; overlapping kernels combine by max.
    Keypoints outside the grid are skipped and reported with a warning.
    """
    n_cls, height, width = shape
    hm = np.zeros(shape)
    skipped = 0
    for u, v, c, r in keypoints:
        u, v, c = int(u), int(v), int(c)
        if not (0 <= u < width and 0 <= v < height and 0 <= c < n_cls):
            skipped += 1
            continue
        k = int(math.floor(r))
        v0, v1 = max(v - k, 0), min(v + k, height - 1)
        u0, u1 = max(u - k, 0), min(u + k, width - 1)
        dv = np.arange(v0, v1 + 1)[:, None] - v
        du = np.arange(u0, u1 + 1)[None, :] - u
        if r > 0:
            sigma = r / 3.0
            g = np.exp(-(du * du + dv * dv) / (2.0 * sigma * sigma))
        else:
            g = np.ones((1, 1))
        np.maximum(hm[c, v0 : v1 + 1, u0 : u1 + 1], g, out=hm[c, v0 : v1 + 1, u0 : u1 + 1])
    if skipped:
        warnings.warn(f"render_heatmap skipped {skipped} keypoint(s) outside the grid", stacklevel=2)
    return hm


def focal_loss(pred: np.ndarray, gt: np.ndarray, n: int, alpha: float = FOCAL_ALPHA, beta: float = FOCAL_BETA):
    """Penalty-reduced pixel-wise focal loss.

    Positives are the pixels where ``gt == 1``; every other pixel is a
    negative down-weighted by ``(1 - gt) ** beta``. Predictions are clamped
    to ``[EPS, 1 - EPS]`` before the logs.

    Returns:
        ``(loss, grad)`` where ``grad`` has the shape of ``pred`` and is zero
        wherever the clamp is active.
    """
    if n < 1:
        raise ValueError("instance count must be at least 1")
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    p = np.clip(pred, EPS, 1.0 - EPS)
    pos = gt == 1.0
    neg_w = np.where(pos, 0.0, (1.0 - gt) ** beta)

    log_p, log_q = np.log(p), np.log1p(-p)
    q = 1.0 - p
    pos_term = np.where(pos, q**alpha * log_p, 0.0)
    neg_term = neg_w * p**alpha * log_q
    loss = -(pos_term.sum() + neg_term.sum()) / n

    d_pos = np.where(pos, q**alpha / p - alpha * q ** (alpha - 1) * log_p, 0.0)
    d_neg = neg_w * (alpha * p ** (alpha - 1) * log_q - p**alpha / q)
    grad = -(d_pos + d_neg) / n
    grad = np.where((pred > EPS) & (pred < 1.0 - EPS), grad, 0.0)
    return float(loss), grad


# ---------------------------------------------------------------------------
# depth targets


@dataclass(frozen=True)
class DepthTarget:
    u: float  # image coordinates of the projected 3D center
    v: float
    d_c: float
    d_s: float
    d_s2c: float


def surface_depth_target(box: Box3D, cam: CameraIntrinsics) -> DepthTarget:
    """Keypoint and decomposed depth targets of a ground-truth box."""
    if not box.z > 0:
        raise GeometryError(f"box center is behind the camera (z={box.z})")
    u, v, d_c = project(cam, box.center)
    d_s2c = surface_to_center((box.w, box.l), box.heading_angle, viewing_angle(cam, u))
    return DepthTarget(u=u, v=v, d_c=d_c, d_s=d_c - d_s2c, d_s2c=d_s2c)


# ---------------------------------------------------------------------------
# uncertainty-aware depth losses


def instance_depth_loss(depth: Sequence[float], log_var: Sequence[float], target: Sequence[float]):
    """Mean of ``|d* - d| exp(-s) + s`` over the N gathered keypoints.

    Returns:
        ``(loss, grad_depth, grad_log_var)``. With ``N == 0`` the loss is 0.
    """
    d = np.asarray(depth, dtype=float)
    s = np.asarray(log_var, dtype=float)
    t = np.asarray(target, dtype=float)
    n = d.size
    if n == 0:
        return 0.0, np.zeros_like(d), np.zeros_like(s)
    resid = t - d
    inv_var = np.exp(-s)
    loss = float(np.sum(np.abs(resid) * inv_var + s) / n)
    grad_d = -np.sign(resid) * inv_var / n
    grad_s = (1.0 - np.abs(resid) * inv_var) / n
    return loss, grad_d, grad_s


@dataclass
class DepthPrediction:
    depth_raw: np.ndarray
    log_var: np.ndarray

    @property
    def depth(self) -> np.ndarray:
        return decode_depth(self.depth_raw)

    @property
    def variance(self) -> np.ndarray:
        return np.exp(self.log_var)


@dataclass
class DepthLossTerm:
    """A depth loss with its gradients on the prediction grids."""

    value: float
    grad_raw: np.ndarray
    grad_log_var: np.ndarray

    def scaled(self, k: float) -> "DepthLossTerm":
        return DepthLossTerm(k * self.value, k * self.grad_raw, k * self.grad_log_var)


def masked_depth_loss(depth_raw, log_var, target, mask) -> DepthLossTerm:
    """Pixel-wise uncertainty loss over ``mask``; gradients w.r.t. the raw maps."""
    depth_raw = np.asarray(depth_raw, dtype=float)
    log_var = np.asarray(log_var, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    grad_raw = np.zeros_like(depth_raw)
    grad_s = np.zeros_like(log_var)
    if not mask.any():
        return DepthLossTerm(0.0, grad_raw, grad_s)
    d = decode_depth(depth_raw[mask])
    loss, gd, gs = instance_depth_loss(d, log_var[mask], np.asarray(target, dtype=float)[mask])
    grad_raw[mask] = gd * -d  # d/draw exp(-raw) = -exp(-raw)
    grad_s[mask] = gs
    return DepthLossTerm(loss, grad_raw, grad_s)


def pixel_depth_loss(pred: DepthPrediction, gt, mask: str = "fg") -> DepthLossTerm:
    """Uncertainty loss averaged over the foreground or background pixels of ``gt``."""
    if mask not in ("fg", "bg"):
        raise ValueError(f"mask must be 'fg' or 'bg', got {mask!r}")
    m = gt.fg_mask if mask == "fg" else gt.bg_mask
    if pred.depth_raw.shape != m.shape:
        raise ValueError(f"prediction shape {pred.depth_raw.shape} != depth image shape {m.shape}")
    return masked_depth_loss(pred.depth_raw, pred.log_var, gt.grid, m & gt.valid)


def keypoint_depth_loss(pred: DepthPrediction, cells: Sequence[tuple[int, int]], targets: Sequence[float]) -> DepthLossTerm:
    """Instance-wise loss gathered at ``(row, col)`` keypoint cells, scattered back to grids."""
    grad_raw = np.zeros_like(pred.depth_raw)
    grad_s = np.zeros_like(pred.log_var)
    if len(cells) == 0:
        return DepthLossTerm(0.0, grad_raw, grad_s)
    rows, cols = np.asarray(cells, dtype=np.int64).T
    raw = pred.depth_raw[rows, cols]
    d = decode_depth(raw)
    loss, gd, gs = instance_depth_loss(d, pred.log_var[rows, cols], targets)
    np.add.at(grad_raw, (rows, cols), gd * -d)
    np.add.at(grad_s, (rows, cols), gs)
    return DepthLossTerm(loss, grad_raw, grad_s)


@dataclass
class LossBreakdown:
    l_keypoint: float
    l_dep_obj: float
    l_dep_fg: float
    l_dep_bg: float
    l_total: float
    lam: float
    grad_raw: np.ndarray
    grad_log_var: np.ndarray
    grad_heatmap: np.ndarray | None = None

    @property
    def l_depth(self) -> float:
        return self.l_dep_obj + self.lam * self.l_dep_fg + (1.0 - self.lam) * self.l_dep_bg


def total_depth_loss(
    obj: DepthLossTerm,
    fg: DepthLossTerm,
    bg: DepthLossTerm,
    lam: float = FG_WEIGHT,
    keypoint: tuple[float, np.ndarray] | None = None,
) -> LossBreakdown:
    """Object-centric weighting ``L_obj + lam * L_fg + (1 - lam) * L_bg``.

    ``keypoint`` is an optional ``(loss, grad)`` pair from :func:`focal_loss`,
    added to the total unweighted.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"foreground weight must lie in [0, 1], got {lam}")
    grad_raw = obj.grad_raw + lam * fg.grad_raw + (1.0 - lam) * bg.grad_raw
    grad_s = obj.grad_log_var + lam * fg.grad_log_var + (1.0 - lam) * bg.grad_log_var
    l_kp, g_kp = keypoint if keypoint is not None else (0.0, None)
    depth = obj.value + lam * fg.value + (1.0 - lam) * bg.value
    return LossBreakdown(
        l_keypoint=float(l_kp),
        l_dep_obj=obj.value,
        l_dep_fg=fg.value,
        l_dep_bg=bg.value,
        l_total=float(l_kp) + depth,
        lam=lam,
        grad_raw=grad_raw,
        grad_log_var=grad_s,
        grad_heatmap=g_kp,
    )

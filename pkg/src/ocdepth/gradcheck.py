"""Finite-difference checks of every analytic gradient in the package.

Each suite draws random instances, evaluates the analytic gradient and
compares it entry by entry against a central difference. An entry passes
when ``|analytic - numeric| <= rtol * max(|analytic|, |numeric|)`` or when the
absolute difference is below ``atol``.

Instances are drawn away from the kinks of the absolute-value losses and the
clamp of the focal loss, where the derivative is not defined.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .depth import DepthImage
from .losses import (
    DepthPrediction,
    focal_loss,
    instance_depth_loss,
    keypoint_depth_loss,
    pixel_depth_loss,
    total_depth_loss,
)
from .synth import ToyModel, model_backward, model_forward

RTOL = 1e-4
ATOL = 1e-6
STEP = 1e-5


@dataclass
class SuiteResult:
    name: str
    instances: int
    checked: int
    failures: int
    max_rel_err: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.failures == 0 and self.instances > 0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} {self.name:<16} instances={self.instances} entries={self.checked} "
            f"failures={self.failures} max_rel_err={self.max_rel_err:.2e} ({self.seconds:.2f}s)"
        )


def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = STEP) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x`` (``x`` is restored afterwards)."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        fp = f(x)
        flat[i] = old - step
        fm = f(x)
        flat[i] = old
        g[i] = (fp - fm) / (2 * step)
    return grad


def compare(analytic: np.ndarray, numeric: np.ndarray, rtol: float = RTOL, atol: float = ATOL):
    """Return ``(failures, max relative error)`` over all entries."""
    a = np.asarray(analytic, dtype=float).ravel()
    n = np.asarray(numeric, dtype=float).ravel()
    diff = np.abs(a - n)
    scale = np.maximum(np.abs(a), np.abs(n))
    ok = (diff <= rtol * scale) | (diff <= atol)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(scale > atol, diff / scale, 0.0)
    return int(np.sum(~ok)), float(rel.max(initial=0.0))


def _away_from(rng, d: np.ndarray) -> np.ndarray:
    """Targets whose residual to ``d`` is at least 5% of ``d``."""
    sign = rng.choice([-1.0, 1.0], size=d.shape)
    return d * (1.0 + sign * rng.uniform(0.05, 0.5, size=d.shape))


def _random_depth_image(rng, shape, pred_depth) -> DepthImage:
    valid = rng.random(shape) < 0.8
    fg = valid & (rng.random(shape) < 0.4)
    bg = valid & ~fg & (rng.random(shape) < 0.7)
    grid = np.where(valid, _away_from(rng, pred_depth), 0.0)
    return DepthImage(grid, valid, fg, bg, stride=4, d_max=1e6)


def _run(name: str, n: int, seed: int, instance: Callable[[np.random.Generator], list[tuple[np.ndarray, np.ndarray]]]):
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    checked = failures = 0
    worst = 0.0
    for _ in range(n):
        for analytic, numeric in instance(rng):
            f, r = compare(analytic, numeric)
            checked += np.size(analytic)
            failures += f
            worst = max(worst, r)
    return SuiteResult(name, n, checked, failures, worst, time.perf_counter() - t0)


def _focal_instance(rng):
    shape = (int(rng.integers(1, 4)), int(rng.integers(2, 6)), int(rng.integers(2, 6)))
    gt = rng.uniform(0.0, 0.99, size=shape)
    gt.ravel()[rng.choice(gt.size, size=max(1, gt.size // 8), replace=False)] = 1.0
    pred = rng.uniform(0.02, 0.98, size=shape)
    n = int(rng.integers(1, 5))
    _, grad = focal_loss(pred, gt, n)
    num = numeric_gradient(lambda p: focal_loss(p, gt, n)[0], pred.copy())
    return [(grad, num)]


def _instance_instance(rng):
    k = int(rng.integers(1, 12))
    d = rng.uniform(1.0, 60.0, size=k)
    s = rng.uniform(-2.0, 3.0, size=k)
    t = _away_from(rng, d)
    _, gd, gs = instance_depth_loss(d, s, t)
    nd = numeric_gradient(lambda x: instance_depth_loss(x, s, t)[0], d.copy())
    ns = numeric_gradient(lambda x: instance_depth_loss(d, x, t)[0], s.copy())
    return [(gd, nd), (gs, ns)]


def _pixel_instance(rng):
    shape = (int(rng.integers(2, 6)), int(rng.integers(2, 6)))
    raw = rng.uniform(-4.0, 0.5, size=shape)
    s = rng.uniform(-2.0, 3.0, size=shape)
    gt = _random_depth_image(rng, shape, np.exp(-raw))
    which = "fg" if rng.random() < 0.5 else "bg"
    term = pixel_depth_loss(DepthPrediction(raw, s), gt, which)
    nr = numeric_gradient(lambda x: pixel_depth_loss(DepthPrediction(x, s), gt, which).value, raw.copy())
    ns = numeric_gradient(lambda x: pixel_depth_loss(DepthPrediction(raw, x), gt, which).value, s.copy())
    return [(term.grad_raw, nr), (term.grad_log_var, ns)]


def grid_total_loss(pred: DepthPrediction, gt: DepthImage, cells, targets, lam: float):
    """Object-centric total depth loss of one frame on full prediction grids."""
    obj = keypoint_depth_loss(pred, cells, targets)
    fg = pixel_depth_loss(pred, gt, "fg")
    bg = pixel_depth_loss(pred, gt, "bg")
    return total_depth_loss(obj, fg, bg, lam)


def _random_frame(rng, shape, depth):
    gt = _random_depth_image(rng, shape, depth)
    k = int(rng.integers(1, 4))
    flat = rng.choice(depth.size, size=k, replace=False)
    cells = [divmod(int(i), shape[1]) for i in flat]
    targets = _away_from(rng, np.array([depth[r, c] for r, c in cells]))
    return gt, cells, targets


def _total_instance(rng):
    shape = (int(rng.integers(2, 6)), int(rng.integers(2, 6)))
    raw = rng.uniform(-4.0, 0.5, size=shape)
    s = rng.uniform(-2.0, 3.0, size=shape)
    gt, cells, targets = _random_frame(rng, shape, np.exp(-raw))
    lam = float(rng.uniform(0, 1))
    lb = grid_total_loss(DepthPrediction(raw, s), gt, cells, targets, lam)
    nr = numeric_gradient(lambda x: grid_total_loss(DepthPrediction(x, s), gt, cells, targets, lam).l_total, raw.copy())
    ns = numeric_gradient(lambda x: grid_total_loss(DepthPrediction(raw, x), gt, cells, targets, lam).l_total, s.copy())
    return [(lb.grad_raw, nr), (lb.grad_log_var, ns)]


def _model_instance(rng):
    shape = (4, 4)
    n_feat = int(rng.integers(2, 6))
    model = ToyModel.init(n_feat, int(rng.integers(2, 9)), seed=int(rng.integers(2**31)))
    model.b2[:] = rng.normal([-2.5, 0.0], [0.5, 0.5])
    feats = rng.normal(size=(*shape, n_feat))
    pred, _ = model_forward(model, feats)
    gt, cells, targets = _random_frame(rng, shape, np.exp(-pred.depth_raw))
    lam = float(rng.uniform(0, 1))

    def loss_of(theta):
        m = model.copy()
        m.set_flat(theta)
        p, _ = model_forward(m, feats)
        return grid_total_loss(p, gt, cells, targets, lam).l_total

    pred, cache = model_forward(model, feats)
    lb = grid_total_loss(pred, gt, cells, targets, lam)
    analytic = model_backward(model, cache, lb.grad_raw, lb.grad_log_var).flat()
    return [(analytic, numeric_gradient(loss_of, model.flat()))]


SUITES = {
    "focal_loss": _focal_instance,
    "instance_depth": _instance_instance,
    "pixel_depth": _pixel_instance,
    "total_depth": _total_instance,
    "toy_model_chain": _model_instance,
}


def run_all(n: int = 100, seed: int = 0, suites=None) -> list[SuiteResult]:
    """Run the named suites (all by default), ``n`` random instances each."""
    names = list(SUITES) if suites is None else list(suites)
    return [_run(name, n, seed + i, SUITES[name]) for i, name in enumerate(names)]

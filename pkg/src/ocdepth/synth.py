"""Synthetic camera + LiDAR scenes and a tiny per-cell depth model.

A scene is a handful of boxes standing on a flat ground plane, a simulated
spinning LiDAR at the camera origin, and the stride-4 depth image built from
its returns. The model is a two-layer perceptron applied to every cell of a
rendered feature grid; it predicts ``depth_raw`` and ``log_var`` and is
trained with plain gradient descent on the object-centric depth loss.

Features per cell (``FEATURES``):

* ``u_norm``, ``v_norm``: ray direction of the cell center, ``(u - cx) / fu``
  and ``(v - cy) / fv``.
* ``silhouette``: ``fv * h / (z * H)`` of the nearest box whose projected 2D
  box covers the cell, else 0. It encodes inverse depth up to the object's
  height, the monocular cue an image backbone would pick up.
* ``shading``: ``cos`` of the box heading relative to the cell's viewing
  ray inside the silhouette, else 0.
* ``noise``: standard normal, carries no signal.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .decode import STRIDE, Keypoint, cell_to_image, decode_detection, image_to_cell
from .depth import D_MAX, DepthImage, PointCloud, background_subsample, build_depth_map, foreground_mask
from .depth import minpool_downsample
from .evaluation import CENTER_DISTANCE_THRESHOLD, DepthMetrics, MatchSpec, ap40, depth_metrics, match
from .geometry import Box3D, CameraIntrinsics, _rotation_y, box2d_from_box, project
from .losses import (
    FG_WEIGHT,
    DepthPrediction,
    DepthTarget,
    LossBreakdown,
    decode_depth,
    encode_depth,
    gaussian_radius,
    keypoint_depth_loss,
    masked_depth_loss,
    render_heatmap,
    surface_depth_target,
    total_depth_loss,
)

CATEGORIES = ("Car", "Pedestrian", "Cyclist")
FEATURES = ("u_norm", "v_norm", "silhouette", "shading", "noise")
SWEEP_LAMBDAS = (0.0, 0.3, 0.5, 0.7, 0.8, 1.0)
SWEEP_HEADER = "lambda,seed,fg_abs_rel,fg_sq_rel,fg_rmse,raw_abs_rel,raw_sq_rel,raw_rmse,ap40"


def default_camera() -> CameraIntrinsics:
    return CameraIntrinsics(fu=360.0, fv=360.0, cx=320.0, cy=96.0, width=640, height=192)


@dataclass(frozen=True)
class SizePrior:
    """Gaussian size distribution ``(mean, std)`` per dimension ``(w, h, l)``."""

    mean: tuple[float, float, float]
    std: tuple[float, float, float]


DEFAULT_SIZES = {
    "Car": SizePrior((1.62, 1.53, 3.9), (0.1, 0.1, 0.3)),
    "Pedestrian": SizePrior((0.66, 1.76, 0.8), (0.05, 0.1, 0.1)),
    "Cyclist": SizePrior((0.6, 1.74, 1.76), (0.05, 0.1, 0.15)),
}


@dataclass(frozen=True)
class SceneConfig:
    counts: tuple[tuple[str, int], ...] = (("Car", 4), ("Pedestrian", 2), ("Cyclist", 2))
    sizes: dict = field(default_factory=lambda: dict(DEFAULT_SIZES))
    depth_range: tuple[float, float] = (5.0, 60.0)
    ground_y: float = 1.65
    beams: int = 64
    elevation_range: tuple[float, float] = (math.radians(-24.8), math.radians(2.0))
    az_step: float = math.radians(0.2)
    noise_std: float = 1.0
    max_tries: int = 200
    cam: CameraIntrinsics = field(default_factory=default_camera)


class PlacementError(RuntimeError):
    """Boxes could not be placed without overlap within the retry budget."""


@dataclass
class SceneSample:
    """One generated frame.

    ``targets[i]`` belongs to ``boxes[i]``; ``cells[i]`` is its keypoint
    ``(row, col)`` on the stride-4 grid.
    """

    cam: CameraIntrinsics
    boxes: list[Box3D]
    points: PointCloud
    depth: DepthImage
    features: np.ndarray  # (H, W, F)
    targets: list[DepthTarget]
    cells: list[tuple[int, int]]

    def to_json(self) -> str:
        c = self.cam
        return json.dumps(
            {
                "cam": {"fu": c.fu, "fv": c.fv, "cx": c.cx, "cy": c.cy, "width": c.width, "height": c.height},
                "boxes": [
                    {"category": b.category, "center": list(b.center), "size": list(b.size), "yaw": b.yaw}
                    for b in self.boxes
                ],
                "points": self.points.points.tolist(),
            }
        )


def scene_from_json(text: str) -> tuple[CameraIntrinsics, list[Box3D], PointCloud]:
    obj = json.loads(text)
    cam = CameraIntrinsics(**obj["cam"])
    boxes = [Box3D(tuple(b["center"]), tuple(b["size"]), b["yaw"], b["category"]) for b in obj["boxes"]]
    return cam, boxes, PointCloud(np.asarray(obj["points"], dtype=float).reshape(-1, 3))


# ---------------------------------------------------------------------------
# scene generation


def _snap_to_cell(cam: CameraIntrinsics, x: float, y: float, z: float) -> tuple[float, float]:
    """Move ``(x, y)`` at fixed depth so the center projects onto a cell center."""
    u, v, _ = project(cam, (x, y, z))
    col, row = image_to_cell(u, v)
    us, vs = cell_to_image(col, row)
    return (us - cam.cx) * z / cam.fu, (vs - cam.cy) * z / cam.fv


def _footprint_radius(size) -> float:
    return 0.5 * math.hypot(size[0], size[2])


def generate_boxes(config: SceneConfig, rng: np.random.Generator) -> list[Box3D]:
    """Place non-overlapping boxes on the ground with centers on keypoint cells."""
    cam = config.cam
    boxes: list[Box3D] = []
    cells: set[tuple[int, int]] = set()
    z_lo, z_hi = config.depth_range
    for category, n in config.counts:
        prior = config.sizes[category]
        for _ in range(n):
            for _attempt in range(config.max_tries):
                size = tuple(float(max(m + s * rng.standard_normal(), 0.2)) for m, s in zip(prior.mean, prior.std))
                z = float(rng.uniform(z_lo, z_hi))
                half_fov = (cam.cx - 2 * STRIDE) / cam.fu
                x = float(rng.uniform(-half_fov, half_fov)) * z
                y = config.ground_y - size[1] / 2.0
                yaw = float(rng.uniform(-math.pi, math.pi))
                x, y = _snap_to_cell(cam, x, y, z)
                u, v, _ = project(cam, (x, y, z))
                cell = image_to_cell(u, v)
                if not (0 <= u < cam.width and 0 <= v < cam.height) or cell in cells:
                    continue
                r = _footprint_radius(size)
                if any(math.hypot(x - b.x, z - b.z) <= r + _footprint_radius(b.size) + 0.1 for b in boxes):
                    continue
                boxes.append(Box3D(center=(x, y, z), size=size, yaw=yaw, category=category))
                cells.add(cell)
                break
            else:
                raise PlacementError(f"could not place {category} after {config.max_tries} tries")
    return boxes


def lidar_rays(config: SceneConfig) -> np.ndarray:
    """Unit ray directions of the elevation fan x azimuth sweep over the camera view."""
    cam = config.cam
    half = math.atan2(cam.cx, cam.fu)
    az = np.arange(-half, half + 1e-12, config.az_step)
    el = np.linspace(config.elevation_range[0], config.elevation_range[1], config.beams)
    el_g, az_g = np.meshgrid(el, az, indexing="ij")
    dirs = np.stack([np.cos(el_g) * np.sin(az_g), -np.sin(el_g), np.cos(el_g) * np.cos(az_g)], axis=-1)
    return dirs.reshape(-1, 3)


def ray_box_distance(dirs: np.ndarray, box: Box3D) -> np.ndarray:
    """Distance along each ray (from the origin) to its first entry into ``box``; inf if missed."""
    rot = _rotation_y(box.yaw)
    origin = -np.asarray(box.center) @ rot
    d_local = dirs @ rot
    half = np.array([box.l, box.h, box.w]) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - origin) / d_local
        t2 = (half - origin) / d_local
    t_near = np.nanmax(np.minimum(t1, t2), axis=1)
    t_far = np.nanmin(np.maximum(t1, t2), axis=1)
    hit = (t_near <= t_far) & (t_near > 0)
    return np.where(hit, t_near, np.inf)


def simulate_lidar(
    boxes: Sequence[Box3D],
    config: SceneConfig | None = None,
    beams: int | None = None,
    az_step: float | None = None,
) -> PointCloud:
    """First-return ray casting against the boxes and the ground plane."""
    config = config or SceneConfig()
    if beams is not None:
        if beams < 1:
            raise ValueError("beams must be at least 1")
        config = replace(config, beams=beams)
    if az_step is not None:
        config = replace(config, az_step=az_step)
    dirs = lidar_rays(config)
    with np.errstate(divide="ignore"):
        t = np.where(dirs[:, 1] > 0, config.ground_y / dirs[:, 1], np.inf)
    for box in boxes:
        t = np.minimum(t, ray_box_distance(dirs, box))
    hit = np.isfinite(t)
    return PointCloud(dirs[hit] * t[hit, None])


def render_features(
    cam: CameraIntrinsics, boxes: Sequence[Box3D], rng: np.random.Generator, noise_std: float = 1.0
) -> np.ndarray:
    """``(H, W, F)`` feature grid on the stride-4 lattice, channels as in ``FEATURES``."""
    h, w = cam.height // STRIDE, cam.width // STRIDE
    us = (np.arange(w) + 0.5) * STRIDE
    vs = (np.arange(h) + 0.5) * STRIDE
    uu, vv = np.meshgrid(us, vs)
    feats = np.zeros((h, w, len(FEATURES)))
    feats[..., 0] = (uu - cam.cx) / cam.fu
    feats[..., 1] = (vv - cam.cy) / cam.fv
    depth_buf = np.full((h, w), np.inf)
    phi = np.arctan2(cam.fu, uu - cam.cx)
    for box in boxes:
        left, top, right, bottom = box2d_from_box(box, cam)
        inside = (uu >= left) & (uu <= right) & (vv >= top) & (vv <= bottom) & (box.z < depth_buf)
        depth_buf[inside] = box.z
        feats[..., 2][inside] = cam.fv * box.h / (box.z * cam.height)
        feats[..., 3][inside] = np.cos(box.heading_angle - phi[inside])
    feats[..., 4] = noise_std * rng.standard_normal((h, w))
    return feats


def generate_scene(config: SceneConfig, seed: int) -> SceneSample:
    """Build a complete sample deterministically from ``seed``."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5C3E]))
    cam = config.cam
    boxes = generate_boxes(config, rng)
    points = simulate_lidar(boxes, config)
    full = build_depth_map(points, cam, d_max=D_MAX)
    depth = minpool_downsample(full, STRIDE)
    depth = foreground_mask(depth, points, boxes, cam)
    depth = background_subsample(depth, seed=int(rng.integers(2**32)))
    feats = render_features(cam, boxes, rng, config.noise_std)
    targets = [surface_depth_target(b, cam) for b in boxes]
    cells = []
    for t in targets:
        col, row = image_to_cell(t.u, t.v)
        cells.append((row, col))
    return SceneSample(cam, boxes, points, depth, feats, targets, cells)


# ---------------------------------------------------------------------------
# regression maps built from ground truth


def target_maps(sample: SceneSample, depth_raw: np.ndarray | None = None, log_var: np.ndarray | None = None):
    """Heatmap and regression maps carrying a scene's exact targets at the keypoint cells.

    ``depth_raw`` and ``log_var`` default to the encoded targets and zeros;
    passing a model's prediction grids instead keeps its values everywhere
    and only fills the size, yaw and surface-to-center maps from ground truth.
    """
    h, w = sample.depth.grid.shape
    maps = {
        "depth_raw": np.zeros((h, w)) if depth_raw is None else np.array(depth_raw, dtype=float),
        "log_var": np.zeros((h, w)) if log_var is None else np.array(log_var, dtype=float),
        "d_s2c": np.zeros((h, w)),
        "size3d": np.ones((3, h, w)),
        "yaw": np.zeros((h, w)),
    }
    kps = []
    for box, tgt, (r, c) in zip(sample.boxes, sample.targets, sample.cells):
        if depth_raw is None:
            maps["depth_raw"][r, c] = encode_depth(tgt.d_s)
        maps["d_s2c"][r, c] = tgt.d_s2c
        maps["size3d"][:, r, c] = box.size
        maps["yaw"][r, c] = box.yaw
        left, top, right, bottom = box2d_from_box(box, sample.cam)
        radius = gaussian_radius(max((right - left) / STRIDE, 1e-3), max((bottom - top) / STRIDE, 1e-3))
        kps.append((c, r, CATEGORIES.index(box.category), radius))
    hm = render_heatmap(kps, (len(CATEGORIES), h, w))
    return hm, maps


# ---------------------------------------------------------------------------
# toy model


class StaleCacheError(RuntimeError):
    """A forward cache was used after the model parameters changed."""


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"training diverged at step {step} (loss={loss})")
        self.step = step
        self.loss = loss


@dataclass
class ToyModel:
    """Per-cell perceptron ``F -> hidden (tanh) -> 2``; outputs ``(depth_raw, log_var)``."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    version: int = 0

    @classmethod
    def init(cls, n_features: int = len(FEATURES), hidden: int = 16, seed=0, depth_init: float = 20.0) -> "ToyModel":
        rng = np.random.default_rng(seed)
        w1 = rng.standard_normal((n_features, hidden)) / math.sqrt(n_features)
        w2 = rng.standard_normal((hidden, 2)) * 0.1 / math.sqrt(hidden)
        b2 = np.array([encode_depth(depth_init), 0.0])
        return cls(w1, np.zeros(hidden), w2, b2)

    @property
    def n_features(self) -> int:
        return self.w1.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params().values()])

    def set_flat(self, vec: np.ndarray) -> None:
        i = 0
        for p in self.params().values():
            p[...] = vec[i : i + p.size].reshape(p.shape)
            i += p.size
        self.version += 1

    def step(self, grads: "ParamGrads", lr: float) -> None:
        for name, p in self.params().items():
            p -= lr * getattr(grads, name)
        self.version += 1

    def copy(self) -> "ToyModel":
        return ToyModel(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy(), self.version)


@dataclass
class ForwardCache:
    version: int
    x: np.ndarray  # (N, F)
    hidden: np.ndarray  # (N, H) tanh activations
    shape: tuple[int, ...]


@dataclass
class ParamGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1.ravel(), self.w2.ravel(), self.b2.ravel()])

    def __add__(self, other: "ParamGrads") -> "ParamGrads":
        return ParamGrads(self.w1 + other.w1, self.b1 + other.b1, self.w2 + other.w2, self.b2 + other.b2)


def model_forward(model: ToyModel, features: np.ndarray) -> tuple[DepthPrediction, ForwardCache]:
    """Apply the model to a ``(..., F)`` feature grid."""
    features = np.asarray(features, dtype=float)
    if features.shape[-1] != model.n_features:
        raise ValueError(f"expected {model.n_features} feature channels, got {features.shape[-1]}")
    shape = features.shape[:-1]
    x = features.reshape(-1, model.n_features)
    hid = np.tanh(x @ model.w1 + model.b1)
    out = hid @ model.w2 + model.b2
    pred = DepthPrediction(out[:, 0].reshape(shape), out[:, 1].reshape(shape))
    return pred, ForwardCache(model.version, x, hid, shape)


def model_backward(model: ToyModel, cache: ForwardCache, grad_raw: np.ndarray, grad_log_var: np.ndarray) -> ParamGrads:
    """Chain loss gradients on the output grids back to the parameters."""
    if cache.version != model.version:
        raise StaleCacheError(f"cache from model version {cache.version}, model is at {model.version}")
    g_out = np.stack([np.reshape(grad_raw, -1), np.reshape(grad_log_var, -1)], axis=1)
    if g_out.shape[0] != cache.x.shape[0]:
        raise ValueError("gradient grids do not match the cached forward pass")
    g_w2 = cache.hidden.T @ g_out
    g_b2 = g_out.sum(axis=0)
    g_hid = (g_out @ model.w2.T) * (1.0 - cache.hidden**2)
    return ParamGrads(cache.x.T @ g_hid, g_hid.sum(axis=0), g_w2, g_b2)


def scene_loss(pred: DepthPrediction, sample: SceneSample, lam: float) -> LossBreakdown:
    """Object-centric depth loss of one scene (no keypoint term: the toy has no heatmap head)."""
    obj = keypoint_depth_loss(pred, sample.cells, [t.d_s for t in sample.targets])
    d = sample.depth
    fg = masked_depth_loss(pred.depth_raw, pred.log_var, d.grid, d.fg_mask)
    bg = masked_depth_loss(pred.depth_raw, pred.log_var, d.grid, d.bg_mask)
    return total_depth_loss(obj, fg, bg, lam)


def batch_loss(model: ToyModel, samples: Sequence[SceneSample], lam: float):
    """Mean scene loss over ``samples`` and its parameter gradient, on full grids."""
    feats = np.stack([s.features for s in samples])
    pred, cache = model_forward(model, feats)
    g_raw = np.zeros_like(pred.depth_raw)
    g_s = np.zeros_like(pred.log_var)
    total = 0.0
    n = len(samples)
    for i, s in enumerate(samples):
        lb = scene_loss(DepthPrediction(pred.depth_raw[i], pred.log_var[i]), s, lam)
        total += lb.l_total / n
        g_raw[i] = lb.grad_raw / n
        g_s[i] = lb.grad_log_var / n
    return total, model_backward(model, cache, g_raw, g_s)


@dataclass
class PackedBatch:
    """Only the supervised cells of a scene set, one row per (loss term, cell).

    The mean scene loss equals ``sum(weight * (|target - depth| exp(-s) + s))``
    over the rows, so training touches a few hundred cells per scene instead
    of the whole grid. :func:`batch_loss` computes the same value on full grids.
    """

    x: np.ndarray  # (M, F)
    target: np.ndarray  # (M,)
    weight: np.ndarray  # (M,)

    @classmethod
    def build(cls, samples: Sequence[SceneSample], lam: float) -> "PackedBatch":
        xs, ts, ws = [], [], []
        n = len(samples)
        for s in samples:
            d = s.depth
            parts = []
            if s.cells:
                rows, cols = np.asarray(s.cells).T
                parts.append((rows, cols, np.array([t.d_s for t in s.targets]), 1.0))
            for mask, coef in ((d.fg_mask, lam), (d.bg_mask, 1.0 - lam)):
                rows, cols = np.nonzero(mask)
                parts.append((rows, cols, d.grid[rows, cols], coef))
            for rows, cols, tgt, coef in parts:
                if len(rows) == 0 or coef == 0.0:
                    continue
                xs.append(s.features[rows, cols])
                ts.append(tgt)
                ws.append(np.full(len(rows), coef / (len(rows) * n)))
        if not xs:
            return cls(np.zeros((0, samples[0].features.shape[-1])), np.zeros(0), np.zeros(0))
        return cls(np.concatenate(xs), np.concatenate(ts), np.concatenate(ws))

    def loss(self, model: ToyModel) -> tuple[float, ParamGrads]:
        pred, cache = model_forward(model, self.x)
        d = decode_depth(pred.depth_raw)
        resid = self.target - d
        inv_var = np.exp(-pred.log_var)
        loss = float(np.sum(self.weight * (np.abs(resid) * inv_var + pred.log_var)))
        g_d = -np.sign(resid) * inv_var * self.weight
        g_s = (1.0 - np.abs(resid) * inv_var) * self.weight
        return loss, model_backward(model, cache, g_d * -d, g_s)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    lam: float = FG_WEIGHT
    steps: int = 2000
    lr: float = 1e-2
    seed: int = 0
    n_train: int = 8
    n_test: int = 4
    hidden: int = 16
    scene: SceneConfig = field(default_factory=SceneConfig)


@dataclass
class TrainResult:
    fg: DepthMetrics
    raw: DepthMetrics
    ap40: float | None
    loss_history: list[float]


def make_scenes(config: TrainConfig) -> tuple[list[SceneSample], list[SceneSample]]:
    """Training and held-out scenes for ``config.seed``; independent of the foreground weight."""
    ss = np.random.SeedSequence([config.seed, 0x70E])
    seeds = ss.generate_state(config.n_train + config.n_test)
    scenes = [generate_scene(config.scene, int(s)) for s in seeds]
    return scenes[: config.n_train], scenes[config.n_train :]


AP_SPEC = MatchSpec("center_distance", CENTER_DISTANCE_THRESHOLD)


def evaluate_model(
    model: ToyModel, scenes: Sequence[SceneSample], spec: MatchSpec = AP_SPEC
) -> tuple[DepthMetrics, DepthMetrics, float | None]:
    """Foreground and raw depth metrics plus AP40 of detections decoded at ground-truth keypoints.

    The toy has no heatmap, size or yaw heads, so detections take their
    keypoints, sizes, yaws and surface-to-center offsets from ground truth
    and their surface depth and variance from the model. AP40 uses 2 m
    center-distance matching by default.
    """
    fg_p, fg_g, raw_p, raw_g = [], [], [], []
    matches, n_gt = [], 0
    for s in scenes:
        pred, _ = model_forward(model, s.features)
        depth = decode_depth(pred.depth_raw)
        d = s.depth
        fg_p.append(depth[d.fg_mask])
        fg_g.append(d.grid[d.fg_mask])
        raw_p.append(depth[d.valid])
        raw_g.append(d.grid[d.valid])
        _, maps = target_maps(s, pred.depth_raw, pred.log_var)
        dets = [
            decode_detection(Keypoint(c, r, CATEGORIES.index(b.category), 1.0), maps, s.cam, CATEGORIES)
            for b, (r, c) in zip(s.boxes, s.cells)
        ]
        matches += match(s.boxes, [x.box for x in dets], [x.p_3d for x in dets], spec)
        n_gt += len(s.boxes)
    fg = depth_metrics(np.concatenate(fg_p), np.concatenate(fg_g))
    raw = depth_metrics(np.concatenate(raw_p), np.concatenate(raw_g))
    return fg, raw, ap40(matches, n_gt)


def train_toy(config: TrainConfig, scenes=None) -> tuple[ToyModel, TrainResult]:
    """Fixed-step gradient descent on the object-centric loss.

    Raises:
        TrainingDiverged: the loss became non-finite; carries the step index.
    """
    if not 0.0 <= config.lam <= 1.0:
        raise ValueError(f"foreground weight must lie in [0, 1], got {config.lam}")
    train, test = scenes if scenes is not None else make_scenes(config)
    valid_depths = np.concatenate([s.depth.grid[s.depth.valid] for s in train])
    init_seed = np.random.SeedSequence([config.seed, 0x1A17])
    model = ToyModel.init(len(FEATURES), config.hidden, init_seed, depth_init=float(np.median(valid_depths)))
    packed = PackedBatch.build(train, config.lam)
    history = []
    for step in range(config.steps + 1):
        # overflow is how divergence shows up; it is reported below as TrainingDiverged
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = packed.loss(model)
        if not math.isfinite(loss) or not np.all(np.isfinite(grads.flat())):
            raise TrainingDiverged(step, loss)
        history.append(loss)
        if step < config.steps:
            model.step(grads, config.lr)
    fg, raw, ap = evaluate_model(model, test)
    return model, TrainResult(fg, raw, ap, history)


# ---------------------------------------------------------------------------
# sweep


@dataclass
class SweepRow:
    lam: float
    seed: int
    fg: DepthMetrics
    raw: DepthMetrics
    ap40: float | None

    def csv(self) -> str:
        ap = "" if self.ap40 is None else f"{self.ap40:.6f}"
        vals = (self.fg.abs_rel, self.fg.sq_rel, self.fg.rmse, self.raw.abs_rel, self.raw.sq_rel, self.raw.rmse)
        return f"{self.lam:g},{self.seed}," + ",".join(f"{v:.6f}" for v in vals) + f",{ap}"


class SweepFailed(RuntimeError):
    def __init__(self, lam: float, seed: int, cause: Exception):
        super().__init__(f"training failed for lambda={lam}, seed={seed}: {cause}")
        self.lam = lam
        self.seed = seed


@dataclass
class SweepReport:
    rows: list[SweepRow]

    def to_csv(self) -> str:
        return SWEEP_HEADER + "\n" + "".join(r.csv() + "\n" for r in self.rows)

    def mean(self, lam: float, attr: str) -> float:
        """Seed mean of ``fg_abs_rel``-style attributes (``fg_`` or ``raw_`` prefix) at ``lam``."""
        part, metric = attr.split("_", 1)
        vals = [getattr(getattr(r, part), metric) for r in self.rows if r.lam == lam]
        if not vals:
            raise KeyError(lam)
        return float(np.mean(vals))

    def lambdas(self) -> list[float]:
        return sorted({r.lam for r in self.rows})


def _sweep_task(args):
    lam, seed, base = args
    try:
        _, res = train_toy(replace(base, lam=lam, seed=seed))
    except Exception as exc:  # re-raised with sweep context
        raise SweepFailed(lam, seed, exc) from exc
    return SweepRow(lam, seed, res.fg, res.raw, res.ap40)


def lambda_sweep(
    lambdas: Sequence[float] = SWEEP_LAMBDAS,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    base: TrainConfig | None = None,
    jobs: int = 1,
) -> SweepReport:
    """Train one model per ``(lambda, seed)``; all lambdas of a seed share scenes and initialization."""
    if len(lambdas) < 2 or len(seeds) < 3:
        raise ValueError("a sweep needs at least 2 lambda values and 3 seeds")
    base = base or TrainConfig()
    tasks = [(float(lam), int(seed), base) for lam in lambdas for seed in seeds]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_task, tasks))
    else:
        rows = [_sweep_task(t) for t in tasks]
    return SweepReport(rows)

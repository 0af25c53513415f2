"""Decode heatmaps and regression maps into scored 3D detections.

Keypoints live on a grid down-sampled by :data:`STRIDE`; cell ``(v, u)`` is
converted to the image point ``((u + 0.5) * STRIDE, (v + 0.5) * STRIDE)``.
All regression maps are gathered at the same keypoint cell.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.ndimage import maximum_filter

from .geometry import Box3D, CameraIntrinsics, unproject
from .losses import decode_depth

STRIDE = 4
KITTI_PRE_THRESH = 0.4
NUSCENES_PRE_THRESH = 0.1


@dataclass(frozen=True)
class Keypoint:
    u: int  # grid column
    v: int  # grid row
    category: int
    p_k: float


@dataclass(frozen=True)
class Detection:
    """A decoded object.

    ``keypoint`` is in image pixels (cell center), ``variance`` is the depth
    variance ``exp(log_var)``, and ``p_3d = p_k * p_dep``.
    """

    keypoint: tuple[float, float]
    category: str
    d_s: float
    d_s2c: float
    d_c: float
    variance: float
    p_k: float
    p_dep: float
    p_3d: float
    box: Box3D

    def to_dict(self) -> dict:
        return {
            "keypoint": list(self.keypoint),
            "category": self.category,
            "d_s": self.d_s,
            "d_s2c": self.d_s2c,
            "d_c": self.d_c,
            "variance": self.variance,
            "p_k": self.p_k,
            "p_dep": self.p_dep,
            "p_3d": self.p_3d,
            "box": {"center": list(self.box.center), "size": list(self.box.size), "yaw": self.box.yaw},
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "Detection":
        b = obj["box"]
        box = Box3D(center=tuple(b["center"]), size=tuple(b["size"]), yaw=b["yaw"], category=obj["category"])
        return cls(
            keypoint=tuple(obj["keypoint"]),
            category=obj["category"],
            d_s=obj["d_s"],
            d_s2c=obj["d_s2c"],
            d_c=obj["d_c"],
            variance=obj["variance"],
            p_k=obj["p_k"],
            p_dep=obj["p_dep"],
            p_3d=obj["p_3d"],
            box=box,
        )


def detections_to_json(dets: Iterable[Detection]) -> str:
    """Serialize detections as a JSON array with one object per :class:`Detection`."""
    return json.dumps([d.to_dict() for d in dets], indent=2)


def detections_from_json(text: str) -> list[Detection]:
    return [Detection.from_dict(o) for o in json.loads(text)]


def cell_to_image(u: float, v: float, stride: int = STRIDE) -> tuple[float, float]:
    return (u + 0.5) * stride, (v + 0.5) * stride


def image_to_cell(u: float, v: float, stride: int = STRIDE) -> tuple[int, int]:
    return int(math.floor(u / stride)), int(math.floor(v / stride))


def extract_keypoints(hm: np.ndarray, k: int = 100, thresh: float = 0.0) -> list[Keypoint]:
    """Local maxima of a ``(C, H, W)`` heatmap.

    A pixel qualifies when it equals the maximum of its 3x3 neighborhood
    (so plateaus keep every tied pixel) and is at least ``thresh``. The
    result is ordered by value descending, ties broken by
    ``(category, v, u)``, and truncated to ``k`` entries.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    hm = np.asarray(hm, dtype=float)
    if hm.ndim != 3:
        raise ValueError(f"heatmap must be (C, H, W), got shape {hm.shape}")
    peak = maximum_filter(hm, size=(1, 3, 3), mode="constant", cval=-np.inf)
    cand = (hm == peak) & (hm >= thresh)
    c, v, u = np.nonzero(cand)
    vals = hm[c, v, u]
    order = np.lexsort((u, v, c, -vals))[:k]
    return [Keypoint(u=int(u[i]), v=int(v[i]), category=int(c[i]), p_k=float(vals[i])) for i in order]


def depth_confidence(variance: float) -> float:
    """Confidence of a depth estimate, ``exp(-variance)``."""
    if not variance >= 0:
        raise ValueError(f"variance must be non-negative, got {variance}")
    return math.exp(-variance)


def fuse_confidence(p_k: float, p_dep: float) -> float:
    """Joint 3D confidence: keypoint confidence times depth confidence."""
    return p_k * p_dep


def decode_detection(
    kp: Keypoint,
    maps: Mapping[str, np.ndarray],
    cam: CameraIntrinsics,
    categories: Sequence[str] = ("Car", "Pedestrian", "Cyclist"),
    stride: int = STRIDE,
) -> Detection:
    """Gather every regression map at the keypoint cell and build a detection.

    Args:
        kp: keypoint on the down-sampled grid.
        maps: ``depth_raw``, ``log_var``, ``d_s2c`` and ``yaw`` of shape
            ``(H, W)`` and ``size3d`` of shape ``(3, H, W)`` holding
            ``(w, h, l)``.
        cam: intrinsics of the full-resolution image.
        categories: names indexed by the heatmap channel.
    """
    height, width = maps["depth_raw"].shape
    if not (0 <= kp.u < width and 0 <= kp.v < height):
        raise IndexError(f"keypoint ({kp.u}, {kp.v}) outside the {width}x{height} map")
    r, c = kp.v, kp.u
    d_s = float(decode_depth(float(maps["depth_raw"][r, c])))
    variance = math.exp(float(maps["log_var"][r, c]))
    d_s2c = float(maps["d_s2c"][r, c])
    d_c = d_s + d_s2c
    u_img, v_img = cell_to_image(kp.u, kp.v, stride)
    center = unproject(cam, u_img, v_img, d_c)
    size = tuple(float(s) for s in maps["size3d"][:, r, c])
    box = Box3D(center=tuple(center), size=size, yaw=float(maps["yaw"][r, c]), category=categories[kp.category])
    p_dep = depth_confidence(variance)
    return Detection(
        keypoint=(u_img, v_img),
        category=box.category,
        d_s=d_s,
        d_s2c=d_s2c,
        d_c=d_c,
        variance=variance,
        p_k=kp.p_k,
        p_dep=p_dep,
        p_3d=fuse_confidence(kp.p_k, p_dep),
        box=box,
    )


def filter_detections(dets: Iterable[Detection], pre_thresh: float = KITTI_PRE_THRESH) -> list[Detection]:
    """Drop detections whose keypoint confidence is below ``pre_thresh``.

    Survivors have ``p_3d`` recomputed from ``p_k`` and ``p_dep`` and are
    returned sorted by ``p_3d`` descending (stable). No NMS is applied.
    """
    kept = [replace(d, p_3d=fuse_confidence(d.p_k, d.p_dep)) for d in dets if d.p_k >= pre_thresh]
    return sorted(kept, key=lambda d: -d.p_3d)


def decode_frame(
    hm: np.ndarray,
    maps: Mapping[str, np.ndarray],
    cam: CameraIntrinsics,
    categories: Sequence[str] = ("Car", "Pedestrian", "Cyclist"),
    k: int = 100,
    pre_thresh: float = KITTI_PRE_THRESH,
    stride: int = STRIDE,
) -> list[Detection]:
    """Keypoint extraction, decoding and filtering for one frame."""
    kps = extract_keypoints(hm, k=k, thresh=pre_thresh)
    dets = [decode_detection(kp, maps, cam, categories, stride) for kp in kps]
    return filter_detections(dets, pre_thresh)

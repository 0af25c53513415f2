"""Pinhole camera math, oriented 3D boxes and rotated-box IoU.

Frames and conventions
----------------------
Camera frame: x right, y down, z forward (meters).

Image plane: pixel ``i`` covers the continuous interval ``[i, i + 1)``, so its
center sits at ``i + 0.5``. A grid down-sampled by ``stride`` maps cell ``c``
to image coordinate ``(c + 0.5) * stride``.

Box yaw follows the KITTI ``rotation_y`` convention: rotation about the
camera y axis, with the length axis pointing along ``(cos yaw, 0, -sin yaw)``.
In the bird's-eye (x, z) plane that heading has polar angle ``-yaw`` when
angles are measured from +x toward +z, which is also how the viewing angle
of a pixel column is measured.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

AREA_EPS = 1e-12


class GeometryError(ValueError):
    """Invalid geometric input (non-positive depth, point behind camera, ...)."""


def normalize_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    r = math.remainder(a, 2.0 * math.pi)
    if r <= -math.pi:
        r += 2.0 * math.pi
    return r


@dataclass(frozen=True)
class CameraIntrinsics:
    fu: float
    fv: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fu > 0 and self.fv > 0):
            raise GeometryError(f"focal lengths must be positive, got {self.fu}, {self.fv}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fu, 0.0, self.cx], [0.0, self.fv, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D box.

    ``center`` is the geometric center of the cuboid in the camera frame and
    ``size`` is ``(w, h, l)``. KITTI's bottom-face "location" is converted at
    the I/O boundary (see :mod:`ocdepth.kitti`).
    """

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float
    category: str = "Car"

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "size", tuple(float(s) for s in self.size))
        object.__setattr__(self, "yaw", normalize_angle(float(self.yaw)))
        if len(self.center) != 3 or len(self.size) != 3:
            raise GeometryError("center and size must be 3-vectors")
        if min(self.size) <= 0:
            raise GeometryError(f"box dimensions must be positive, got {self.size}")

    @property
    def x(self) -> float:
        return self.center[0]

    @property
    def y(self) -> float:
        return self.center[1]

    @property
    def z(self) -> float:
        return self.center[2]

    @property
    def w(self) -> float:
        return self.size[0]

    @property
    def h(self) -> float:
        return self.size[1]

    @property
    def l(self) -> float:  # noqa: E743
        return self.size[2]

    @property
    def heading(self) -> np.ndarray:
        """Unit vector of the length axis in the (x, z) plane."""
        return np.array([math.cos(self.yaw), -math.sin(self.yaw)])

    @property
    def heading_angle(self) -> float:
        """Polar angle of the length axis in the (x, z) plane, from +x toward +z."""
        return normalize_angle(-self.yaw)

    @property
    def volume(self) -> float:
        return self.w * self.h * self.l

    def translated(self, dx: float = 0.0, dy: float = 0.0, dz: float = 0.0) -> "Box3D":
        return replace(self, center=(self.x + dx, self.y + dy, self.z + dz))


@dataclass(frozen=True)
class PolarError:
    radial: float
    tangential: float


# ---------------------------------------------------------------------------
# camera


def unproject(cam: CameraIntrinsics, u: float, v: float, d: float) -> np.ndarray:
    """Lift pixel ``(u, v)`` at depth ``d`` into the camera frame."""
    if not d > 0:
        raise GeometryError(f"depth must be positive, got {d}")
    z = d
    return np.array([(u - cam.cx) * z / cam.fu, (v - cam.cy) * z / cam.fv, z])


def project(cam: CameraIntrinsics, p: Sequence[float]) -> tuple[float, float, float]:
    """Project a camera-frame point to ``(u, v, depth)``."""
    x, y, z = (float(c) for c in p)
    if not z > 0:
        raise GeometryError(f"point is behind the camera (z={z})")
    return cam.fu * x / z + cam.cx, cam.fv * y / z + cam.cy, z


def project_points(cam: CameraIntrinsics, pts: np.ndarray) -> np.ndarray:
    """Vectorized projection of ``(N, 3)`` points; returns ``(N, 3)`` of (u, v, z).

    No behind-camera check; callers mask on ``z > 0`` themselves.
    """
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    z = pts[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fu * pts[:, 0] / z + cam.cx
        v = cam.fv * pts[:, 1] / z + cam.cy
    return np.stack([u, v, z], axis=1)


def viewing_angle(cam: CameraIntrinsics, u: float) -> float:
    """Azimuth of the ray through column ``u``, i.e. ``arctan(z / x)`` in (0, pi)."""
    return math.atan2(cam.fu, u - cam.cx)


# ---------------------------------------------------------------------------
# object depth decomposition


def wrap_relative_angle(theta: float) -> float:
    """Fold an angle into [0, pi/2] using the rectangle's two-fold symmetry."""
    t = abs(theta) % math.pi
    return min(t, math.pi - t)


def surface_to_center(size: Sequence[float], yaw: float, phi: float) -> float:
    """Distance from the footprint boundary to the box center along the viewing ray.

    Args:
        size: ``(w, l)`` footprint width and length in meters.
        yaw: heading angle of the length axis, measured in the same polar
            frame as ``phi`` (use :attr:`Box3D.heading_angle` for a box).
        phi: viewing angle of the ray, see :func:`viewing_angle`.

    Returns:
        The surface-to-center distance, between ``min(w, l) / 2`` and half the
        footprint diagonal.
    """
    w, l = (float(s) for s in size)
    theta = wrap_relative_angle(yaw - phi)
    alpha = math.atan2(w, l)
    if theta <= alpha:
        return (l / 2.0) / math.cos(theta)
    return (w / 2.0) / math.sin(theta)


def compose_center_depth(d_s: float, d_s2c: float) -> float:
    return d_s + d_s2c


# ---------------------------------------------------------------------------
# boxes

# Corner order: 0-3 top face (y = -h/2), 4-7 bottom face (y = +h/2); within a
# face the (length, width) signs go (+,+), (+,-), (-,-), (-,+).
_CORNER_SIGNS = np.array(
    [
        [1, -1, 1],
        [1, -1, -1],
        [-1, -1, -1],
        [-1, -1, 1],
        [1, 1, 1],
        [1, 1, -1],
        [-1, 1, -1],
        [-1, 1, 1],
    ],
    dtype=float,
)


def _rotation_y(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def box_corners(box: Box3D) -> np.ndarray:
    """The 8 corners of ``box`` as an ``(8, 3)`` array (order documented above)."""
    local = _CORNER_SIGNS * np.array([box.l, box.h, box.w]) / 2.0
    return local @ _rotation_y(box.yaw).T + np.asarray(box.center)


def bev_polygon(box: Box3D) -> np.ndarray:
    """Footprint rectangle in the (x, z) plane, counter-clockwise, shape ``(4, 2)``."""
    poly = box_corners(box)[:4][:, [0, 2]]
    if _signed_area(poly) < 0:
        poly = poly[::-1]
    return poly


def points_in_box(box: Box3D, pts: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Boolean mask of the ``(N, 3)`` points inside ``box`` (boundary inclusive)."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    local = (pts - np.asarray(box.center)) @ _rotation_y(box.yaw)
    half = np.array([box.l, box.h, box.w]) / 2.0 + tol
    return np.all(np.abs(local) <= half, axis=1)


def _signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` by the convex CCW polygon ``clip``."""
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        a, b = clip[i], clip[(i + 1) % n]
        inp, output = output, []
        if not inp:
            break
        prev = inp[-1]
        prev_in = _cross(a, b, prev) >= 0
        for cur in inp:
            cur_in = _cross(a, b, cur) >= 0
            if cur_in != prev_in:
                # segment prev->cur crosses line a->b
                d1 = _cross(a, b, prev)
                d2 = _cross(a, b, cur)
                t = d1 / (d1 - d2)
                output.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            if cur_in:
                output.append(cur)
            prev, prev_in = cur, cur_in
    return np.array(output, dtype=float).reshape(-1, 2)


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    inter = clip_convex(bev_polygon(a), bev_polygon(b))
    if len(inter) < 3:
        return 0.0
    area = abs(_signed_area(inter))
    return area if area >= AREA_EPS else 0.0


def bev_iou(a: Box3D, b: Box3D) -> float:
    """IoU of the two footprints in the (x, z) plane."""
    area_a, area_b = a.w * a.l, b.w * b.l
    if area_a < AREA_EPS or area_b < AREA_EPS:
        return 0.0
    inter = bev_intersection_area(a, b)
    union = area_a + area_b - inter
    return float(np.clip(inter / union, 0.0, 1.0))


def vertical_overlap(a: Box3D, b: Box3D) -> float:
    top = max(a.y - a.h / 2.0, b.y - b.h / 2.0)
    bottom = min(a.y + a.h / 2.0, b.y + b.h / 2.0)
    return max(0.0, bottom - top)


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Volumetric IoU: footprint intersection times vertical overlap over union volume."""
    if a.w * a.l < AREA_EPS or b.w * b.l < AREA_EPS:
        return 0.0
    dy = vertical_overlap(a, b)
    if dy <= 0.0:
        return 0.0
    inter = bev_intersection_area(a, b) * dy
    union = a.volume + b.volume - inter
    return float(np.clip(inter / union, 0.0, 1.0))


def radial_tangential_error(gt: Box3D, pred: Box3D) -> PolarError:
    """Split the BEV center error into components along and across the gt viewing ray."""
    g = np.array([gt.x, gt.z])
    rng = float(np.hypot(*g))
    if rng == 0.0:
        raise GeometryError("ground-truth center at the origin has no radial direction")
    r_hat = g / rng
    e = np.array([pred.x, pred.z]) - g
    along = float(e @ r_hat)
    across = e - along * r_hat
    return PolarError(radial=abs(along), tangential=float(np.hypot(*across)))


def bev_center_distance(a: Box3D, b: Box3D) -> float:
    return float(math.hypot(a.x - b.x, a.z - b.z))


def displace_along_heading(box: Box3D, e: float) -> Box3D:
    hx, hz = box.heading
    return box.translated(dx=e * hx, dz=e * hz)


def box2d_from_box(box: Box3D, cam: CameraIntrinsics, clip: bool = True) -> tuple[float, float, float, float]:
    """Axis-aligned image box ``(left, top, right, bottom)`` around the projected corners."""
    corners = box_corners(box)
    z = np.maximum(corners[:, 2], 1e-3)
    u = cam.fu * corners[:, 0] / z + cam.cx
    v = cam.fv * corners[:, 1] / z + cam.cy
    left, top, right, bottom = u.min(), v.min(), u.max(), v.max()
    if clip:
        left, right = np.clip([left, right], 0, cam.width - 1)
        top, bottom = np.clip([top, bottom], 0, cam.height - 1)
    return float(left), float(top), float(right), float(bottom)


__all__ = [
    "AREA_EPS",
    "Box3D",
    "CameraIntrinsics",
    "GeometryError",
    "PolarError",
    "bev_center_distance",
    "bev_intersection_area",
    "bev_iou",
    "bev_polygon",
    "box2d_from_box",
    "box_corners",
    "clip_convex",
    "compose_center_depth",
    "displace_along_heading",
    "iou_3d",
    "normalize_angle",
    "points_in_box",
    "project",
    "project_points",
    "radial_tangential_error",
    "surface_to_center",
    "unproject",
    "vertical_overlap",
    "viewing_angle",
    "wrap_relative_angle",
]

"""Sparse depth images from 3D points, min-pool down-sampling and object-centric masks.

Grids are stored row-major as ``(height, width)`` arrays. Invalid pixels hold
depth 0 and ``valid == False``.
"""

from __future__ import annotations

import io
import math
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import Box3D, CameraIntrinsics, normalize_angle, points_in_box, project_points

D_MAX = 80.0
BIN_WIDTH = 10.0


@dataclass(frozen=True)
class DepthImage:
    grid: np.ndarray
    valid: np.ndarray
    fg_mask: np.ndarray = field(default=None)
    bg_mask: np.ndarray = field(default=None)
    stride: int = 1
    d_max: float = D_MAX

    def __post_init__(self):
        shape = self.grid.shape
        if self.fg_mask is None:
            object.__setattr__(self, "fg_mask", np.zeros(shape, dtype=bool))
        if self.bg_mask is None:
            object.__setattr__(self, "bg_mask", np.zeros(shape, dtype=bool))
        for name in ("valid", "fg_mask", "bg_mask"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} shape {getattr(self, name).shape} != grid shape {shape}")

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    @classmethod
    def empty(cls, height: int, width: int, stride: int = 1, d_max: float = D_MAX) -> "DepthImage":
        return cls(np.zeros((height, width)), np.zeros((height, width), dtype=bool), stride=stride, d_max=d_max)

    def check_invariants(self) -> None:
        if np.any(self.fg_mask & self.bg_mask):
            raise AssertionError("fg and bg masks overlap")
        if np.any((self.fg_mask | self.bg_mask) & ~self.valid):
            raise AssertionError("mask outside valid pixels")
        d = self.grid[self.valid]
        if d.size and (d.min() <= 0 or d.max() > self.d_max):
            raise AssertionError("valid depth outside (0, d_max]")


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


def _cell_assignment(pc: PointCloud, cam: CameraIntrinsics, stride: int, d_max: float):
    """Index of the nearest point landing in each cell, or -1."""
    h, w = cam.height // stride, cam.width // stride
    nearest = np.full(h * w, -1, dtype=np.int64)
    if len(pc) == 0:
        return nearest.reshape(h, w)
    uvz = project_points(cam, pc.points)
    z = uvz[:, 2]
    ok = z > 0
    with np.errstate(invalid="ignore"):
        col = np.floor(uvz[:, 0] / stride)
        row = np.floor(uvz[:, 1] / stride)
    ok &= (col >= 0) & (col < w) & (row >= 0) & (row < h) & (z <= d_max)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return nearest.reshape(h, w)
    flat = row[idx].astype(np.int64) * w + col[idx].astype(np.int64)
    # sort by (cell, depth, point index) so the first entry per cell is the nearest
    order = np.lexsort((idx, z[idx], flat))
    flat_sorted = flat[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = flat_sorted[1:] != flat_sorted[:-1]
    nearest[flat_sorted[first]] = idx[order][first]
    return nearest.reshape(h, w)


def build_depth_map(
    pc: PointCloud, cam: CameraIntrinsics, d_max: float = D_MAX, stride: int = 1
) -> DepthImage:
    """Z-buffer the points into a sparse depth image; nearest point wins per pixel."""
    nearest = _cell_assignment(pc, cam, stride, d_max)
    valid = nearest >= 0
    grid = np.zeros(nearest.shape)
    grid[valid] = pc.points[nearest[valid], 2]
    return DepthImage(grid, valid, stride=stride, d_max=d_max)


def minpool_downsample(d: DepthImage, factor: int = 4) -> DepthImage:
    """Block-minimum over valid pixels; masks follow the selected (nearest) pixel."""
    if factor < 1 or d.height % factor or d.width % factor:
        raise ValueError(f"factor {factor} must divide image size {d.height}x{d.width}")
    h, w = d.height // factor, d.width // factor

    def blocks(a):
        return a.reshape(h, factor, w, factor).transpose(0, 2, 1, 3).reshape(h, w, factor * factor)

    g = np.where(d.valid, d.grid, np.inf)
    gb = blocks(g)
    arg = np.argmin(gb, axis=2)
    vals = np.take_along_axis(gb, arg[..., None], axis=2)[..., 0]
    valid = np.isfinite(vals)
    pick = lambda m: np.take_along_axis(blocks(m), arg[..., None], axis=2)[..., 0] & valid  # noqa: E731
    return DepthImage(
        grid=np.where(valid, vals, 0.0),
        valid=valid,
        fg_mask=pick(d.fg_mask),
        bg_mask=pick(d.bg_mask),
        stride=d.stride * factor,
        d_max=d.d_max,
    )


def foreground_mask(d: DepthImage, pc: PointCloud, boxes: list[Box3D], cam: CameraIntrinsics) -> DepthImage:
    """Mark pixels whose nearest contributing point lies inside any box.

    The remaining valid pixels are background candidates; ``bg_mask`` is reset
    and filled by :func:`background_subsample`.
    """
    nearest = _cell_assignment(pc, cam, d.stride, d.d_max)
    if nearest.shape != d.grid.shape:
        raise ValueError("depth image does not match camera and stride")
    inside = np.zeros(len(pc), dtype=bool)
    for box in boxes:
        inside |= points_in_box(box, pc.points)
    fg = np.zeros(d.grid.shape, dtype=bool)
    hit = nearest >= 0
    fg[hit] = inside[nearest[hit]]
    fg &= d.valid
    return replace(d, fg_mask=fg, bg_mask=np.zeros_like(fg))


def background_candidates(d: DepthImage) -> np.ndarray:
    return d.valid & ~d.fg_mask


def depth_bins(depths: np.ndarray, d_max: float = D_MAX, width: float = BIN_WIDTH) -> np.ndarray:
    """Bin index of each depth: [0, 10), [10, 20), ... with the last bin closed at ``d_max``."""
    n_bins = int(math.ceil(d_max / width))
    return np.minimum(np.floor(depths / width).astype(np.int64), n_bins - 1)


def background_subsample(d: DepthImage, seed: int = 0) -> DepthImage:
    """Flatten the background depth histogram.

    Candidates are binned in 10 m intervals and every bin is sub-sampled
    without replacement down to the size of the smallest non-empty bin.
    """
    cand = np.flatnonzero(background_candidates(d).ravel())
    bg = np.zeros(d.grid.size, dtype=bool)
    if cand.size:
        bins = depth_bins(d.grid.ravel()[cand], d.d_max)
        counts = np.bincount(bins)
        quota = counts[counts > 0].min()
        rng = np.random.default_rng(seed)
        for b in np.flatnonzero(counts):
            members = cand[bins == b]
            keep = members if len(members) <= quota else rng.choice(members, size=quota, replace=False)
            bg[keep] = True
    return replace(d, bg_mask=bg.reshape(d.grid.shape))


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class Scene:
    """Boxes, depth image and camera moved together by augmentations."""

    boxes: list[Box3D]
    depth: DepthImage
    cam: CameraIntrinsics


def hflip(scene: Scene) -> Scene:
    """Mirror the scene about the image's vertical center line.

    With pixel ``i`` covering ``[i, i + 1)``, the continuous mirror is
    ``u -> width - u``, which sends column ``i`` to ``width - 1 - i``.
    """
    cam = scene.cam
    new_cam = replace(cam, cx=cam.width - cam.cx)
    boxes = [
        replace(b, center=(-b.x, b.y, b.z), yaw=normalize_angle(math.pi - b.yaw)) for b in scene.boxes
    ]
    d = scene.depth
    depth = replace(
        d,
        grid=d.grid[:, ::-1].copy(),
        valid=d.valid[:, ::-1].copy(),
        fg_mask=d.fg_mask[:, ::-1].copy(),
        bg_mask=d.bg_mask[:, ::-1].copy(),
    )
    return Scene(boxes=boxes, depth=depth, cam=new_cam)


def scale_augment(scene: Scene, s: float) -> Scene:
    """Zoom the image by ``s`` about the principal point at fixed intrinsics.

    A pixel at ``u`` moves to ``cx + s (u - cx)``. Keeping the intrinsics
    fixed, that is equivalent to the content sitting ``s`` times closer, so
    every depth and each box's ``z`` are divided by ``s`` while lateral
    coordinates and box sizes stay put. The sparse grid is resampled by
    forward-splatting each valid pixel to the nearest target pixel, keeping
    the nearer depth on collisions.
    """
    if not s > 0:
        raise ValueError(f"scale must be positive, got {s}")
    cam, d = scene.cam, scene.depth
    boxes = [replace(b, center=(b.x, b.y, b.z / s)) for b in scene.boxes]
    rows, cols = np.nonzero(d.valid)
    st = d.stride
    u = cam.cx + s * ((cols + 0.5) * st - cam.cx)
    v = cam.cy + s * ((rows + 0.5) * st - cam.cy)
    tc = np.floor(u / st).astype(np.int64)
    tr = np.floor(v / st).astype(np.int64)
    inside = (tc >= 0) & (tc < d.width) & (tr >= 0) & (tr < d.height)
    depths = d.grid[rows, cols] / s
    inside &= depths <= d.d_max
    src = np.flatnonzero(inside)
    flat = tr[src] * d.width + tc[src]
    order = np.lexsort((depths[src], flat))
    flat_sorted = flat[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = flat_sorted[1:] != flat_sorted[:-1]
    chosen = src[order][first]
    target = flat_sorted[first]

    grid = np.zeros(d.grid.size)
    valid = np.zeros(d.grid.size, dtype=bool)
    fg = np.zeros(d.grid.size, dtype=bool)
    bg = np.zeros(d.grid.size, dtype=bool)
    grid[target] = depths[chosen]
    valid[target] = True
    fg[target] = d.fg_mask[rows[chosen], cols[chosen]]
    bg[target] = d.bg_mask[rows[chosen], cols[chosen]]
    shape = d.grid.shape
    depth = replace(
        d,
        grid=grid.reshape(shape),
        valid=valid.reshape(shape),
        fg_mask=fg.reshape(shape),
        bg_mask=bg.reshape(shape),
    )
    return Scene(boxes=boxes, depth=depth, cam=cam)


# ---------------------------------------------------------------------------
# binary format
#
# header: b"OCDI", uint8 version, uint32 width, uint32 height, uint32 stride,
# float64 d_max (little endian); then uint16 grid (depth * 256, 0 = invalid)
# row-major, then the fg and bg planes packed one bit per pixel.

_MAGIC = b"OCDI"
_HEADER = struct.Struct("<4sBIIId")


def encode_depth_image(d: DepthImage) -> bytes:
    q = np.zeros(d.grid.shape, dtype=np.uint16)
    q[d.valid] = np.clip(np.round(d.grid[d.valid] * 256.0), 1, 65535).astype(np.uint16)
    buf = io.BytesIO()
    buf.write(_HEADER.pack(_MAGIC, 1, d.width, d.height, d.stride, d.d_max))
    buf.write(q.astype("<u2").tobytes())
    buf.write(np.packbits(d.fg_mask.ravel()).tobytes())
    buf.write(np.packbits(d.bg_mask.ravel()).tobytes())
    return buf.getvalue()


def decode_depth_image(data: bytes) -> DepthImage:
    if len(data) < _HEADER.size:
        raise ValueError("truncated depth image header")
    magic, version, width, height, stride, d_max = _HEADER.unpack_from(data)
    if magic != _MAGIC or version != 1:
        raise ValueError("not a depth image file")
    n = width * height
    nbits = (n + 7) // 8
    expected = _HEADER.size + 2 * n + 2 * nbits
    if len(data) != expected:
        raise ValueError(f"depth image payload is {len(data)} bytes, expected {expected}")
    off = _HEADER.size
    q = np.frombuffer(data, dtype="<u2", count=n, offset=off).reshape(height, width)
    off += 2 * n
    fg = np.unpackbits(np.frombuffer(data, dtype=np.uint8, count=nbits, offset=off))[:n]
    off += nbits
    bg = np.unpackbits(np.frombuffer(data, dtype=np.uint8, count=nbits, offset=off))[:n]
    valid = q > 0
    return DepthImage(
        grid=q.astype(float) / 256.0,
        valid=valid,
        fg_mask=fg.reshape(height, width).astype(bool),
        bg_mask=bg.reshape(height, width).astype(bool),
        stride=int(stride),
        d_max=float(d_max),
    )


def save_depth_image(path: str | os.PathLike, d: DepthImage) -> None:
    Path(path).write_bytes(encode_depth_image(d))


def load_depth_image(path: str | os.PathLike) -> DepthImage:
    return decode_depth_image(Path(path).read_bytes())

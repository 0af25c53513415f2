"""KITTI object label, calibration and detection-result files.

Label line layout (whitespace separated)::

    type truncated occluded alpha left top right bottom h w l x y z rotation_y [score]

``(x, y, z)`` is the bottom-face center in camera coordinates. Internally a
:class:`~ocdepth.geometry.Box3D` stores the geometric center, so ``y`` is
shifted by ``h / 2`` at this boundary.
"""

from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable

from .geometry import Box3D, CameraIntrinsics, GeometryError, box2d_from_box, normalize_angle

if TYPE_CHECKING:
    from .decode import Detection

KITTI_WIDTH = 1242
KITTI_HEIGHT = 375

LABEL_FIELDS = (
    "type",
    "truncated",
    "occluded",
    "alpha",
    "left",
    "top",
    "right",
    "bottom",
    "h",
    "w",
    "l",
    "x",
    "y",
    "z",
    "rotation_y",
    "score",
)


class KittiFormatError(ValueError):
    """Malformed KITTI text. Carries the 1-based ``line`` and offending ``field`` when known."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None, path=None):
        self.message = message
        self.line = line
        self.field = field
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(f"{': '.join(where)}: {message}" if where else message)


class Difficulty(enum.IntEnum):
    EASY = 0
    MODERATE = 1
    HARD = 2
    IGNORED = 3


@dataclass(frozen=True)
class KittiAnnotation:
    category: str
    truncated: float
    occluded: int
    alpha: float
    bbox2d: tuple[float, float, float, float]
    dims: tuple[float, float, float]  # (h, w, l)
    location: tuple[float, float, float]  # bottom-face center
    rotation_y: float
    score: float | None = None

    @property
    def is_dontcare(self) -> bool:
        return self.category == "DontCare"

    @property
    def bbox_height(self) -> float:
        return self.bbox2d[3] - self.bbox2d[1]

    def to_box(self) -> Box3D:
        h, w, l = self.dims
        x, y, z = self.location
        return Box3D(center=(x, y - h / 2.0, z), size=(w, h, l), yaw=self.rotation_y, category=self.category)

    @classmethod
    def from_box(
        cls,
        box: Box3D,
        cam: CameraIntrinsics | None = None,
        score: float | None = None,
        truncated: float = -1.0,
        occluded: int = -1,
        bbox2d: tuple[float, float, float, float] | None = None,
    ) -> "KittiAnnotation":
        if bbox2d is None:
            bbox2d = box2d_from_box(box, cam) if cam is not None else (0.0, 0.0, 0.0, 0.0)
        alpha = normalize_angle(box.yaw - math.atan2(box.x, box.z))
        return cls(
            category=box.category,
            truncated=truncated,
            occluded=occluded,
            alpha=alpha,
            bbox2d=bbox2d,
            dims=(box.h, box.w, box.l),
            location=(box.x, box.y + box.h / 2.0, box.z),
            rotation_y=box.yaw,
            score=score,
        )


def _to_text(line, lineno) -> str:
    if isinstance(line, (bytes, bytearray)):
        try:
            return bytes(line).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise KittiFormatError(f"not valid UTF-8 ({exc.reason})", line=lineno) from None
    if not isinstance(line, str):
        raise KittiFormatError(f"expected text, got {type(line).__name__}", line=lineno)
    return line


def _number(token: str, name: str, lineno) -> float:
    try:
        val = float(token)
    except ValueError:
        raise KittiFormatError(f"not a number: {token!r}", line=lineno, field=name) from None
    if not math.isfinite(val):
        raise KittiFormatError(f"non-finite value {token!r}", line=lineno, field=name)
    return val


def parse_label_line(line: str | bytes, lineno: int | None = None) -> KittiAnnotation:
    """Parse one 15- or 16-field label line.

    Raises:
        KittiFormatError: wrong field count, a non-numeric or non-finite
            number, or values violating the format's invariants.
    """
    text = _to_text(line, lineno)
    tokens = text.split()
    if len(tokens) not in (15, 16):
        raise KittiFormatError(f"expected 15 or 16 fields, got {len(tokens)}", line=lineno)
    category = tokens[0]
    if not category.isprintable():
        raise KittiFormatError("non-printable category", line=lineno, field="type")
    vals = [_number(tok, name, lineno) for tok, name in zip(tokens[1:], LABEL_FIELDS[1:])]
    truncated, occluded_f, alpha, left, top, right, bottom, h, w, l, x, y, z, ry = vals[:14]
    score = vals[14] if len(vals) == 15 else None

    if occluded_f != int(occluded_f) or not -1 <= occluded_f <= 3:
        raise KittiFormatError(f"occlusion must be an integer in -1..3, got {tokens[2]}", line=lineno, field="occluded")
    if right < left or bottom < top:
        raise KittiFormatError("2D box has negative extent", line=lineno, field="right" if right < left else "bottom")
    if category != "DontCare":
        for name, dim in (("h", h), ("w", w), ("l", l)):
            if dim <= 0:
                raise KittiFormatError(f"dimension must be positive, got {dim}", line=lineno, field=name)
    return KittiAnnotation(
        category=category,
        truncated=truncated,
        occluded=int(occluded_f),
        alpha=alpha,
        bbox2d=(left, top, right, bottom),
        dims=(h, w, l),
        location=(x, y, z),
        rotation_y=ry,
        score=score,
    )


def serialize_label(ann: KittiAnnotation) -> str:
    """Format an annotation as one label line (2 decimals, 4 for the score)."""
    head = f"{ann.category} {ann.truncated:.2f} {ann.occluded:d} {ann.alpha:.2f}"
    body = " ".join(f"{v:.2f}" for v in (*ann.bbox2d, *ann.dims, *ann.location, ann.rotation_y))
    line = f"{head} {body}"
    if ann.score is not None:
        line += f" {ann.score:.4f}"
    return line


def parse_label_text(text: str | bytes, path=None) -> list[KittiAnnotation]:
    """Parse a whole label file; blank lines are skipped."""
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise KittiFormatError(f"not valid UTF-8 ({exc.reason})", path=path) from None
    anns = []
    for i, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            anns.append(parse_label_line(line, lineno=i))
        except KittiFormatError as exc:
            raise KittiFormatError(exc.message, line=i, field=exc.field, path=path) from None
    return anns


def read_label_file(path: str | os.PathLike) -> list[KittiAnnotation]:
    return parse_label_text(Path(path).read_bytes(), path=path)


def write_label_file(path: str | os.PathLike, anns: Iterable[KittiAnnotation]) -> None:
    lines = [serialize_label(a) for a in anns]
    Path(path).write_text("".join(line + "\n" for line in lines))


# ---------------------------------------------------------------------------
# calibration


def parse_calib(text: str | bytes, width: int = KITTI_WIDTH, height: int = KITTI_HEIGHT) -> CameraIntrinsics:
    """Read intrinsics from the ``P2:`` row of a KITTI calibration file.

    Only the 3x3 intrinsic block is used; the translation column of P2
    (the offset between camera 0 and camera 2) is ignored.
    """
    text = _to_text(text, None)
    for i, line in enumerate(text.splitlines(), start=1):
        key, _, rest = line.partition(":")
        if key.strip() != "P2":
            continue
        tokens = rest.split()
        if len(tokens) != 12:
            raise KittiFormatError(f"P2 needs 12 numbers, got {len(tokens)}", line=i, field="P2")
        p = [_number(t, f"P2[{j}]", i) for j, t in enumerate(tokens)]
        try:
            return CameraIntrinsics(fu=p[0], fv=p[5], cx=p[2], cy=p[6], width=width, height=height)
        except GeometryError as exc:
            raise KittiFormatError(str(exc), line=i, field="P2") from None
    raise KittiFormatError("no P2 row found")


def serialize_calib(cam: CameraIntrinsics) -> str:
    p2 = [cam.fu, 0.0, cam.cx, 0.0, 0.0, cam.fv, cam.cy, 0.0, 0.0, 0.0, 1.0, 0.0]
    return "P2: " + " ".join(f"{v:.12e}" for v in p2) + "\n"


# ---------------------------------------------------------------------------
# difficulty

_MIN_HEIGHT = (40.0, 25.0, 25.0)
_MAX_OCCLUSION = (0, 1, 2)
_MAX_TRUNCATION = (0.15, 0.30, 0.50)


def assign_difficulty(ann: KittiAnnotation) -> Difficulty:
    """Strictest KITTI difficulty level the annotation qualifies for."""
    for level in (Difficulty.EASY, Difficulty.MODERATE, Difficulty.HARD):
        if (
            ann.bbox_height >= _MIN_HEIGHT[level]
            and ann.occluded <= _MAX_OCCLUSION[level]
            and ann.truncated <= _MAX_TRUNCATION[level]
        ):
            return level
    return Difficulty.IGNORED


# ---------------------------------------------------------------------------
# detections


def write_detection(det: "Detection", cam: CameraIntrinsics) -> str:
    """Format a decoded detection as a 16-field KITTI result line scored by ``p_3d``."""
    ann = KittiAnnotation.from_box(det.box, cam=cam, score=det.p_3d)
    return serialize_label(ann)


def write_detection_file(path: str | os.PathLike, dets: Iterable["Detection"], cam: CameraIntrinsics) -> None:
    Path(path).write_text("".join(write_detection(d, cam) + "\n" for d in dets))


def read_frame_dir(directory: str | os.PathLike) -> dict[str, list[KittiAnnotation]]:
    """Read every ``*.txt`` label file in ``directory`` keyed by frame id (file stem)."""
    directory = Path(directory)
    return {p.stem: read_label_file(p) for p in sorted(directory.glob("*.txt"))}

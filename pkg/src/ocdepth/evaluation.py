"""Detection and depth metrics.

Matching is greedy in confidence order. Each detection claims the best
unmatched ground truth of its own category that passes the criterion
(highest IoU, or smallest BEV center distance). Ground truths flagged as
ignored (wrong difficulty, outside the range bucket) still absorb
detections, but those detections count as neither true nor false positives.

AP40 samples the interpolated precision at the recalls ``1/40 .. 40/40``.
Operating points are taken at every distinct score, so tied scores enter
the curve together. Recall comparisons are done in integers and precisions
as exact fractions, so the result does not depend on float rounding.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import Box3D, bev_center_distance, bev_iou, displace_along_heading, iou_3d, normalize_angle
from .geometry import radial_tangential_error
from .kitti import Difficulty, KittiAnnotation, assign_difficulty

CRITERIA = ("iou3d", "iou_bev", "center_distance")
KITTI_IOU_THRESHOLDS = {"Car": 0.7, "Pedestrian": 0.5, "Cyclist": 0.5}
CENTER_DISTANCE_THRESHOLD = 2.0
MAX_RECALL_PRECISION_FLOOR = 0.1
DEFAULT_RANGE_BUCKETS = ((0.0, 15.0), (15.0, 30.0), (30.0, math.inf))
N_RECALL_POINTS = 40

# Average object lengths and the error grid of the surface-to-center IoU
# table, with the two-decimal reference values published for KITTI classes.
SURFACE_ERROR_DIMS = (
    ("Car", 1.62, 1.53, 3.9),
    ("Pedestrian", 0.66, 1.76, 0.8),
    ("Cyclist", 0.6, 1.74, 1.76),
)
SURFACE_ERRORS = (0.10, 0.15, 0.20, 0.27, 0.59, 0.70, 1.50, 2.00)
KITTI_REFERENCE_IOU = {
    "Car": (0.95, 0.93, 0.90, 0.87, 0.74, 0.70, 0.44, 0.32),
    "Pedestrian": (0.78, 0.68, 0.60, 0.50, 0.15, 0.07, 0.0, 0.0),
    "Cyclist": (0.89, 0.84, 0.80, 0.73, 0.50, 0.43, 0.08, 0.0),
}


# ---------------------------------------------------------------------------
# matching


@dataclass(frozen=True)
class MatchSpec:
    """How detections are paired with ground truth.

    Attributes:
        criterion: ``iou3d``, ``iou_bev`` or ``center_distance``.
        threshold: minimum IoU, or maximum BEV center distance in meters.
        difficulty: evaluate at this KITTI level (easier objects included);
            ``None`` disables difficulty filtering.
        range_buckets: disjoint ``(min, max)`` BEV range intervals in meters.
    """

    criterion: str = "iou3d"
    threshold: float = 0.7
    difficulty: Difficulty | None = None
    range_buckets: tuple[tuple[float, float], ...] = DEFAULT_RANGE_BUCKETS

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}; expected one of {CRITERIA}")
        if not self.threshold > 0:
            raise ValueError(f"threshold must be positive, got {self.threshold}")
        bounds = sorted((float(a), float(b)) for a, b in self.range_buckets)
        for (a0, b0), (a1, _) in zip(bounds, bounds[1:]):
            if a1 < b0:
                raise ValueError(f"range buckets overlap: [{a0}, {b0}) and [{a1}, ...)")
        for a, b in bounds:
            if not b > a:
                raise ValueError(f"empty range bucket ({a}, {b})")

    def score(self, gt: Box3D, det: Box3D) -> float:
        """Affinity of a pair; higher is better. ``-inf`` when the pair fails."""
        if self.criterion == "center_distance":
            dist = bev_center_distance(gt, det)
            return -dist if dist <= self.threshold else -math.inf
        iou = iou_3d(gt, det) if self.criterion == "iou3d" else bev_iou(gt, det)
        return iou if iou >= self.threshold else -math.inf


@dataclass(frozen=True)
class Match:
    det_index: int
    gt_index: int | None
    score: float
    ignored: bool = False

    @property
    def is_tp(self) -> bool:
        return self.gt_index is not None and not self.ignored


def match(
    gts: Sequence[Box3D],
    dets: Sequence[Box3D],
    scores: Sequence[float],
    spec: MatchSpec,
    gt_ignored: Sequence[bool] | None = None,
    det_ignored: Sequence[bool] | None = None,
) -> list[Match]:
    """Greedy confidence-ordered matching within each category.

    Detections are visited by descending score (stable on ties). Unignored
    ground truths are preferred; a detection that can only reach an ignored
    one is itself ignored. ``det_ignored`` marks detections that should be
    ignored when they stay unmatched (for example outside a range bucket).

    Returns:
        One :class:`Match` per detection, in visiting order.
    """
    if len(dets) != len(scores):
        raise ValueError("dets and scores differ in length")
    gt_ignored = [False] * len(gts) if gt_ignored is None else list(gt_ignored)
    det_ignored = [False] * len(dets) if det_ignored is None else list(det_ignored)
    taken = [False] * len(gts)
    order = sorted(range(len(dets)), key=lambda i: -scores[i])
    out = []
    for i in order:
        best = {False: (-math.inf, None), True: (-math.inf, None)}
        for j, gt in enumerate(gts):
            if taken[j] or gt.category != dets[i].category:
                continue
            s = spec.score(gt, dets[i])
            if s > best[gt_ignored[j]][0]:
                best[gt_ignored[j]] = (s, j)
        j = best[False][1] if best[False][1] is not None else best[True][1]
        if j is None:
            out.append(Match(i, None, float(scores[i]), ignored=det_ignored[i]))
        else:
            taken[j] = True
            out.append(Match(i, j, float(scores[i]), ignored=gt_ignored[j]))
    return out


# ---------------------------------------------------------------------------
# precision / recall


@dataclass(frozen=True)
class OperatingPoint:
    threshold: float
    tp: int
    fp: int
    gt_count: int

    @property
    def recall(self) -> float:
        return self.tp / self.gt_count if self.gt_count else 0.0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0


def pr_curve(matches: Iterable[Match], gt_count: int) -> list[OperatingPoint]:
    """Cumulative TP/FP counts at each distinct detection score (descending)."""
    scored = sorted(((m.score, m.is_tp) for m in matches if not m.ignored), key=lambda t: -t[0])
    points = []
    tp = fp = 0
    for k, (score, is_tp) in enumerate(scored):
        tp += is_tp
        fp += not is_tp
        if k + 1 == len(scored) or scored[k + 1][0] != score:
            points.append(OperatingPoint(score, tp, fp, gt_count))
    return points


def ap40(matches: Iterable[Match], gt_count: int) -> float | None:
    """Average precision over 40 recall points; ``None`` when there is no ground truth."""
    if gt_count < 1:
        return None
    points = pr_curve(matches, gt_count)
    total = Fraction(0)
    # suffix maximum of precision, walking from high recall to low
    best = Fraction(0)
    k = len(points) - 1
    for i in range(N_RECALL_POINTS, 0, -1):
        while k >= 0 and points[k].tp * N_RECALL_POINTS >= i * gt_count:
            p = points[k]
            best = max(best, Fraction(p.tp, p.tp + p.fp))
            k -= 1
        total += best
    return float(total / N_RECALL_POINTS)


def max_recall_at_precision(points: Sequence[OperatingPoint], p_floor: float = MAX_RECALL_PRECISION_FLOOR) -> float:
    """Largest recall among operating points whose precision is at least ``p_floor``."""
    return max((p.recall for p in points if p.precision >= p_floor), default=0.0)


# ---------------------------------------------------------------------------
# localization and depth errors


def radial_tangential_mae(pairs: Sequence[tuple[Box3D, Box3D]]) -> tuple[float, float] | None:
    """Mean radial and tangential BEV error over ``(gt, pred)`` pairs."""
    if not pairs:
        return None
    errs = [radial_tangential_error(g, p) for g, p in pairs]
    return float(np.mean([e.radial for e in errs])), float(np.mean([e.tangential for e in errs]))


def aligned_size_iou(gt: Box3D, pred: Box3D) -> float:
    """3D IoU of two boxes after aligning their centers and yaws."""
    inter = float(np.prod(np.minimum(gt.size, pred.size)))
    return inter / (gt.volume + pred.volume - inter)


def orientation_error(a: float, b: float) -> float:
    """Smallest absolute yaw difference, in [0, pi]."""
    return abs(normalize_angle(a - b))


def tp_metrics(pairs: Sequence[tuple[Box3D, Box3D]]) -> tuple[float, float, float] | None:
    """Translation, scale and orientation errors averaged over ``(gt, pred)`` pairs."""
    if not pairs:
        return None
    ate = np.mean([bev_center_distance(g, p) for g, p in pairs])
    ase = np.mean([1.0 - aligned_size_iou(g, p) for g, p in pairs])
    aoe = np.mean([orientation_error(g.yaw, p.yaw) for g, p in pairs])
    return float(ate), float(ase), float(aoe)


DELTA_THRESHOLDS = (1.10, 1.25, 1.25**2, 1.25**3)


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta_110: float
    delta_125: float
    delta_125_2: float
    delta_125_3: float
    count: int = 0

    def as_tuple(self) -> tuple[float, ...]:
        return (
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.delta_110,
            self.delta_125,
            self.delta_125_2,
            self.delta_125_3,
        )


def depth_metrics(pred: Sequence[float], gt: Sequence[float]) -> DepthMetrics:
    """Standard monocular depth metrics on paired depths.

    The accuracy ratios use a strict inequality, so a ratio of exactly
    ``1.1`` does not count toward ``delta < 1.10``.
    """
    p = np.asarray(pred, dtype=float).ravel()
    g = np.asarray(gt, dtype=float).ravel()
    if p.shape != g.shape:
        raise ValueError(f"length mismatch: {p.size} predictions, {g.size} ground truths")
    if p.size == 0:
        raise ValueError("depth_metrics needs at least one pair")
    if np.any(~(p > 0)) or np.any(~(g > 0)):
        raise ValueError("depths must be positive")
    diff = g - p
    ratio = np.maximum(p / g, g / p)
    deltas = [float(np.mean(ratio < t)) for t in DELTA_THRESHOLDS]
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff**2 / g)),
        rmse=float(np.sqrt(np.mean(diff**2))),
        rmse_log=float(np.sqrt(np.mean((np.log(g) - np.log(p)) ** 2))),
        delta_110=deltas[0],
        delta_125=deltas[1],
        delta_125_2=deltas[2],
        delta_125_3=deltas[3],
        count=int(p.size),
    )


# ---------------------------------------------------------------------------
# surface-to-center error table


def surface_error_iou_table(
    dims: Sequence[tuple[str, float, float, float]] = SURFACE_ERROR_DIMS,
    errors: Sequence[float] = SURFACE_ERRORS,
) -> np.ndarray:
    """3D IoU between a box and a copy displaced along its heading.

    Args:
        dims: ``(category, w, h, l)`` rows.
        errors: displacements in meters, one per column.

    Returns:
        ``(len(dims), len(errors))`` array of IoUs.
    """
    table = np.empty((len(dims), len(errors)))
    for i, (cat, w, h, l) in enumerate(dims):
        box = Box3D(center=(0.0, 0.0, 0.0), size=(w, h, l), yaw=0.0, category=cat)
        for j, e in enumerate(errors):
            table[i, j] = iou_3d(box, displace_along_heading(box, e))
    return table


# ---------------------------------------------------------------------------
# dataset-level evaluation


@dataclass
class FrameData:
    """Ground truth and detections of one frame.

    ``gt_difficulty`` may be ``None`` for data without KITTI difficulty
    (every ground truth then counts as easy).
    """

    gts: list[Box3D]
    dets: list[Box3D]
    scores: list[float]
    gt_difficulty: list[Difficulty] | None = None


def bev_range(box: Box3D) -> float:
    return math.hypot(box.x, box.z)


def _in_bucket(r: float, bucket: tuple[float, float]) -> bool:
    return bucket[0] <= r < bucket[1]


@dataclass
class ReportRow:
    category: str
    difficulty: str
    range_min: float
    range_max: float
    num_gt: int
    num_det: int
    ap40: float | None
    max_recall: float | None
    max_recall_iou: float | None
    radial_mae: float | None
    tangential_mae: float | None
    ate: float | None
    ase: float | None
    aoe: float | None


CSV_COLUMNS = tuple(ReportRow.__dataclass_fields__)


@dataclass
class EvalReport:
    rows: list[ReportRow]
    pr_samples: dict[str, list[tuple[float, float, float]]] = field(default_factory=dict)
    depth: dict[str, dict] = field(default_factory=dict)

    def row(self, category: str, difficulty: str = "all", bucket: tuple[float, float] | None = None) -> ReportRow:
        lo, hi = bucket if bucket is not None else (0.0, math.inf)
        for r in self.rows:
            if r.category == category and r.difficulty == difficulty and (r.range_min, r.range_max) == (lo, hi):
                return r
        raise KeyError((category, difficulty, bucket))

    def to_json(self) -> str:
        def clean(v):
            if isinstance(v, float) and math.isinf(v):
                return "inf"
            return v

        rows = [{k: clean(v) for k, v in asdict(r).items()} for r in self.rows]
        return json.dumps({"rows": rows, "pr_samples": self.pr_samples, "depth": self.depth}, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow(["" if v is None else (f"{v:.6f}" if isinstance(v, float) else v) for v in asdict(r).values()])
        return buf.getvalue()

    def summary(self) -> str:
        lines = []
        for r in self.rows:
            if (r.range_min, r.range_max) != (0.0, math.inf):
                continue
            ap = "n/a" if r.ap40 is None else f"{100 * r.ap40:.2f}"
            lines.append(f"{r.category:<12} {r.difficulty:<9} AP40={ap} (gt={r.num_gt}, det={r.num_det})")
        return "\n".join(lines)


def _accumulate(frames, category, spec, level, bucket):
    """Run matching over all frames for one (category, spec, level, bucket)."""
    matches: list[Match] = []
    pairs: list[tuple[Box3D, Box3D]] = []
    num_gt = num_det = 0
    for fd in frames.values():
        gi = [j for j, g in enumerate(fd.gts) if g.category == category]
        di = [i for i, d in enumerate(fd.dets) if d.category == category]
        gts = [fd.gts[j] for j in gi]
        dets = [fd.dets[i] for i in di]
        scores = [fd.scores[i] for i in di]
        diff = [Difficulty.EASY] * len(gts) if fd.gt_difficulty is None else [fd.gt_difficulty[j] for j in gi]
        gt_ign = []
        for g, d in zip(gts, diff):
            ign = d == Difficulty.IGNORED or (level is not None and d > level)
            gt_ign.append(ign or (bucket is not None and not _in_bucket(bev_range(g), bucket)))
        det_ign = [bucket is not None and not _in_bucket(bev_range(d), bucket) for d in dets]
        ms = match(gts, dets, scores, spec, gt_ign, det_ign)
        num_gt += sum(not x for x in gt_ign)
        num_det += sum(not m.ignored for m in ms)
        matches.extend(ms)
        pairs.extend((gts[m.gt_index], dets[m.det_index]) for m in ms if m.is_tp)
    return matches, pairs, num_gt, num_det


def evaluate(
    frames: Mapping[str, FrameData],
    categories: Sequence[str] = ("Car", "Pedestrian", "Cyclist"),
    iou_specs: Mapping[str, MatchSpec] | None = None,
    levels: Sequence[Difficulty | None] = (None,),
    range_buckets: Sequence[tuple[float, float]] = DEFAULT_RANGE_BUCKETS,
    center_threshold: float = CENTER_DISTANCE_THRESHOLD,
) -> EvalReport:
    """Evaluate detections against ground truth for every category, level and range bucket.

    AP40 and the IoU max recall use the per-category IoU spec (KITTI
    thresholds by default). Max recall, radial/tangential MAE and the TP
    errors use center-distance matching at ``center_threshold`` meters.
    Every category/level also gets an unbucketed row (range 0 to inf).
    """
    if iou_specs is None:
        iou_specs = {c: MatchSpec("iou3d", KITTI_IOU_THRESHOLDS.get(c, 0.5)) for c in categories}
    center_spec = MatchSpec("center_distance", center_threshold)
    rows = []
    pr_samples = {}
    for cat in categories:
        for level in levels:
            lname = "all" if level is None else level.name.lower()
            for bucket in [None, *range_buckets]:
                m_iou, _, num_gt, num_det = _accumulate(frames, cat, iou_specs[cat], level, bucket)
                m_ctr, pairs, num_gt_c, _ = _accumulate(frames, cat, center_spec, level, bucket)
                pts_iou = pr_curve(m_iou, num_gt)
                pts_ctr = pr_curve(m_ctr, num_gt_c)
                rt = radial_tangential_mae(pairs)
                tp = tp_metrics(pairs)
                lo, hi = bucket if bucket is not None else (0.0, math.inf)
                rows.append(
                    ReportRow(
                        category=cat,
                        difficulty=lname,
                        range_min=lo,
                        range_max=hi,
                        num_gt=num_gt,
                        num_det=num_det,
                        ap40=ap40(m_iou, num_gt),
                        max_recall=max_recall_at_precision(pts_ctr) if num_gt_c else None,
                        max_recall_iou=max_recall_at_precision(pts_iou) if num_gt else None,
                        radial_mae=None if rt is None else rt[0],
                        tangential_mae=None if rt is None else rt[1],
                        ate=None if tp is None else tp[0],
                        ase=None if tp is None else tp[1],
                        aoe=None if tp is None else tp[2],
                    )
                )
                if bucket is None:
                    pr_samples[f"{cat}/{lname}"] = [(p.threshold, p.recall, p.precision) for p in pts_iou]
    return EvalReport(rows=rows, pr_samples=pr_samples)


def kitti_frames(
    gt: Mapping[str, Sequence[KittiAnnotation]],
    det: Mapping[str, Sequence[KittiAnnotation]],
) -> dict[str, FrameData]:
    """Pair KITTI label and result files by frame id.

    Frames present in ``gt`` but absent from ``det`` have no detections.
    Detection frames without ground truth raise ``KeyError`` listing the ids.
    DontCare rows are dropped.
    """
    orphans = sorted(set(det) - set(gt))
    if orphans:
        raise KeyError(f"detection frames without ground truth: {', '.join(orphans)}")
    frames = {}
    for fid, anns in gt.items():
        kept = [a for a in anns if not a.is_dontcare]
        dets = [a for a in det.get(fid, ()) if not a.is_dontcare]
        frames[fid] = FrameData(
            gts=[a.to_box() for a in kept],
            dets=[a.to_box() for a in dets],
            scores=[1.0 if a.score is None else a.score for a in dets],
            gt_difficulty=[assign_difficulty(a) for a in kept],
        )
    return frames

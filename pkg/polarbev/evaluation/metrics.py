"""Simplified nuScenes-style detection metrics.

Matching uses BEV center distance. Thresholds are the nuScenes set
{0.5, 1, 2, 4} m scaled by ``extent / 51.2`` so a desk scene keeps the
relative matching difficulty of a full-size one. AP is the 101-point
interpolated area under the pooled precision/recall curve, without the
nuScenes recall and precision floors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from polarbev.core.errors import ContractViolation
from polarbev.schemas.report import MetricsReport
from polarbev.schemas.scene import Box, Detection, SceneGT

REFERENCE_EXTENT = 51.2
CENTER_DISTANCE_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)
TP_DISTANCE_THRESHOLD = 2.0
RECALL_POINTS = 101


@dataclass(frozen=True)
class Match:
    det: Detection
    gt: Box
    distance: float


@dataclass
class MatchResult:
    matches: List[Match] = field(default_factory=list)
    false_positives: List[Detection] = field(default_factory=list)
    false_negatives: List[Box] = field(default_factory=list)


class TpErrors(NamedTuple):
    mATE: float
    mASE: float
    mAOE: float


class PublishedRow(NamedTuple):
    method: str
    mAP: float
    mATE: float
    mASE: float
    mAOE: float
    mAVE: float
    mAAE: float
    NDS: float

    @property
    def errors(self) -> Tuple[float, ...]:
        return self.mATE, self.mASE, self.mAOE, self.mAVE, self.mAAE


# complete rows of the published full-scale comparison
PUBLISHED_COMPARISON_ROWS = (
    PublishedRow("CenterNet", 0.306, 0.716, 0.264, 0.609, 1.426, 0.658, 0.328),
    PublishedRow("FCOS3D", 0.288, 0.777, 0.266, 0.544, 1.228, 0.170, 0.368),
    PublishedRow("DETR3D", 0.302, 0.811, 0.282, 0.493, 0.979, 0.212, 0.373),
    PublishedRow("PGD", 0.320, 0.735, 0.266, 0.492, 1.114, 0.170, 0.394),
    PublishedRow("Ego3RT", 0.332, 0.706, 0.281, 0.663, 0.964, 0.249, 0.380),
    PublishedRow("PETR", 0.313, 0.768, 0.278, 0.564, 0.923, 0.225, 0.381),
    PublishedRow("BEVDet-R50", 0.298, 0.725, 0.279, 0.589, 0.860, 0.245, 0.379),
    PublishedRow("BEVDet-R101", 0.302, 0.722, 0.269, 0.543, 0.900, 0.269, 0.381),
    PublishedRow("BEVDet-Swin-tiny", 0.312, 0.691, 0.272, 0.523, 0.909, 0.247, 0.392),
    PublishedRow("PersDet", 0.319, 0.676, 0.284, 0.589, 0.924, 0.229, 0.389),
    PublishedRow("CaDDN", 0.294, 0.702, 0.283, 0.579, 0.988, 0.222, 0.370),
    PublishedRow("polar", 0.321, 0.669, 0.275, 0.494, 0.956, 0.231, 0.398),
)

# NDS at BEV output sizes 128 / 200 / 256 with a single training resolution
PUBLISHED_RESOLUTION_TREND: Dict[str, Tuple[float, float, float]] = {
    "cartesian": (0.392, 0.324, 0.275),
    "polar": (0.398, 0.378, 0.346),
}


def scaled_thresholds(extent: float) -> List[float]:
    """Center-distance thresholds for a scene of half-size ``extent``"""
    if extent <= 0:
        raise ContractViolation("extent must be positive", extent=extent)
    return [t * extent / REFERENCE_EXTENT for t in CENTER_DISTANCE_THRESHOLDS]


def tp_threshold(extent: float) -> float:
    return TP_DISTANCE_THRESHOLD * extent / REFERENCE_EXTENT


def _ranking_key(det: Detection) -> tuple:
    # canonical order: ties in score never depend on list order
    return (-det.score, det.x, det.y, det.cls, det.w, det.l, det.yaw)


def _center_distance(det: Detection, gt: Box) -> float:
    return math.hypot(det.x - gt.x, det.y - gt.y)


def _as_scenes(dets, gts) -> Tuple[List[List[Detection]], List[SceneGT]]:
    if isinstance(gts, SceneGT):
        return [list(dets)], [gts]
    dets, gts = [list(d) for d in dets], list(gts)
    if len(dets) != len(gts):
        raise ContractViolation("one detection list per scene is required",
                                scenes=len(gts), detection_lists=len(dets))
    return dets, gts


def match_detections(dets: Sequence[Detection], gts: SceneGT | Sequence[Box],
                     d_thresh: float) -> MatchResult:
    """Greedy one-to-one matching of one scene's detections in descending score"""
    boxes = list(gts.boxes if isinstance(gts, SceneGT) else gts)
    taken = [False] * len(boxes)
    result = MatchResult()
    for det in sorted(dets, key=_ranking_key):
        best, best_dist = -1, math.inf
        for n, gt in enumerate(boxes):
            if taken[n] or gt.cls != det.cls:
                continue
            dist = _center_distance(det, gt)
            if dist < best_dist:
                best, best_dist = n, dist
        if best >= 0 and best_dist <= d_thresh:
            taken[best] = True
            result.matches.append(Match(det, boxes[best], best_dist))
        else:
            result.false_positives.append(det)
    result.false_negatives = [gt for gt, t in zip(boxes, taken) if not t]
    return result


def interpolated_ap(precision: np.ndarray, recall: np.ndarray) -> float:
    """Mean over 101 recall levels of the best precision at or beyond each level"""
    if precision.size == 0:
        return 0.0
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    levels = np.linspace(0.0, 1.0, RECALL_POINTS)
    idx = np.searchsorted(recall, levels, side="left")
    reached = idx < recall.size
    return float(np.where(reached, envelope[np.minimum(idx, recall.size - 1)], 0.0).mean())


def class_ap(dets: Sequence[Sequence[Detection]], gts: Sequence[SceneGT], cls: int,
             d_thresh: float) -> float:
    """AP of one class at one threshold, pooled over scenes"""
    n_gt = sum(1 for scene in gts for b in scene.boxes if b.cls == cls)
    if n_gt == 0:
        raise ContractViolation("class has no ground truth", cls=cls)
    ranked = sorted(((d, s) for s, scene_dets in enumerate(dets) for d in scene_dets if d.cls == cls),
                    key=lambda item: (_ranking_key(item[0]), item[1]))
    taken = [[False] * len(scene.boxes) for scene in gts]
    tp = np.zeros(len(ranked))
    for r, (det, s) in enumerate(ranked):
        best, best_dist = -1, math.inf
        for n, gt in enumerate(gts[s].boxes):
            if taken[s][n] or gt.cls != cls:
                continue
            dist = _center_distance(det, gt)
            if dist < best_dist:
                best, best_dist = n, dist
        if best >= 0 and best_dist <= d_thresh:
            taken[s][best] = True
            tp[r] = 1.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    precision = ctp / np.maximum(ctp + cfp, 1.0)
    recall = ctp / n_gt
    return interpolated_ap(precision, recall)


def classes_with_gt(gts: Sequence[SceneGT], n_classes: int) -> Tuple[List[int], List[int]]:
    present = {b.cls for scene in gts for b in scene.boxes}
    kept = [k for k in range(n_classes) if k in present]
    return kept, [k for k in range(n_classes) if k not in present]


def average_precision(dets, gts, thresholds: Sequence[float],
                      n_classes: Optional[int] = None) -> Tuple[Dict[int, float], float, List[int]]:
    """Per-class AP averaged over thresholds, the mean over classes, and excluded classes.

    ``dets``/``gts`` are either one scene (a detection list and a SceneGT) or
    parallel per-scene sequences.
    """
    if not thresholds:
        raise ContractViolation("at least one distance threshold is required")
    dets, gts = _as_scenes(dets, gts)
    if n_classes is None:
        labels = [b.cls for scene in gts for b in scene.boxes] + [d.cls for s in dets for d in s]
        n_classes = max(labels, default=-1) + 1
    kept, excluded = classes_with_gt(gts, n_classes)
    per_class = {k: float(np.mean([class_ap(dets, gts, k, t) for t in thresholds])) for k in kept}
    m_ap = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return per_class, m_ap, excluded


def aligned_iou(a_w: float, a_l: float, b_w: float, b_l: float) -> float:
    """IoU of two boxes sharing center and heading"""
    inter = min(a_w, b_w) * min(a_l, b_l)
    return inter / (a_w * a_l + b_w * b_l - inter)


def yaw_difference(a: float, b: float) -> float:
    """Smallest absolute angle between two headings, in [0, pi]"""
    return abs((a - b + math.pi) % (2.0 * math.pi) - math.pi)


def tp_errors(matches: Sequence[Match]) -> TpErrors:
    if not matches:
        return TpErrors(1.0, 1.0, 1.0)
    ate = [m.distance for m in matches]
    ase = [1.0 - aligned_iou(m.det.w, m.det.l, m.gt.w, m.gt.l) for m in matches]
    aoe = [yaw_difference(m.det.yaw, m.gt.yaw) for m in matches]
    return TpErrors(float(np.mean(ate)), float(np.mean(ase)), min(float(np.mean(aoe)), math.pi))


def nds(m_ap: float, errors: Sequence[float]) -> float:
    """Detection score: 5·mAP plus one point per capped TP error, normalized"""
    errors = list(errors)
    return (5.0 * m_ap + sum(1.0 - min(1.0, e) for e in errors)) / (5.0 + len(errors))


def class_tp_errors(dets: Sequence[Sequence[Detection]], gts: Sequence[SceneGT], classes: Sequence[int],
                    d_thresh: float) -> TpErrors:
    """TP errors per class at one threshold, averaged over the given classes"""
    if not classes:
        return TpErrors(1.0, 1.0, 1.0)
    per_class = []
    for k in classes:
        matches: List[Match] = []
        for scene_dets, scene in zip(dets, gts):
            result = match_detections([d for d in scene_dets if d.cls == k],
                                      [b for b in scene.boxes if b.cls == k], d_thresh)
            matches.extend(result.matches)
        per_class.append(tp_errors(matches))
    return TpErrors(*(float(v) for v in np.mean(np.array(per_class), axis=0)))


def evaluate_scenes(dets: Sequence[Sequence[Detection]], gts: Sequence[SceneGT], extent: float,
                    n_classes: int, mAVE: Optional[float] = None,
                    mAAE: Optional[float] = None) -> MetricsReport:
    """Full report for a set of scenes; nds5 only when velocity and attribute errors are supplied"""
    dets, gts = _as_scenes(dets, gts)
    thresholds = scaled_thresholds(extent)
    per_class, m_ap, excluded = average_precision(dets, gts, thresholds, n_classes)
    errors = class_tp_errors(dets, gts, sorted(per_class), tp_threshold(extent))
    nds5 = None
    if mAVE is not None and mAAE is not None:
        nds5 = nds(m_ap, (*errors, mAVE, mAAE))
    return MetricsReport(
        mAP=m_ap,
        mATE=errors.mATE,
        mASE=errors.mASE,
        mAOE=errors.mAOE,
        nds3=nds(m_ap, errors),
        nds5=nds5,
        per_class_ap={str(k): v for k, v in per_class.items()},
        excluded_classes=excluded,
        thresholds=thresholds,
    )

"""Center-heatmap detection head: targets, losses and peak decoding.

The head is two 1×1 linear layers per branch, so one set of weights applies
at every BEV resolution. Regression channels per cell are
(dx, dy, log w, log l, sin yaw, cos yaw); (dx, dy) is the sub-cell position of
the box center along rows (ego x) and columns (ego y).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from polarbev.core import numcore as nc
from polarbev.core.numcore import Tensor
from polarbev.models.params import Linear, full
from polarbev.models.sampler import BevFeatureMap
from polarbev.schemas.grid import CartesianGridSpec
from polarbev.schemas.scene import Detection, SceneGT

HEATMAP_PRIOR_BIAS = -2.19
GAUSSIAN_OVERLAP = 0.7
FOCAL_ALPHA = 2.0
FOCAL_BETA = 4.0
PROB_CLAMP = 1e-6
REG_CHANNELS = 6


@dataclass
class HeadParams:
    heat_hidden: Linear
    heat_out: Linear
    reg_hidden: Linear
    reg_out: Linear

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, n_classes: int) -> "HeadParams":
        heat_out = Linear.init(rng, channels, n_classes)
        heat_out.b = full(HEATMAP_PRIOR_BIAS, n_classes)
        return cls(
            heat_hidden=Linear.init(rng, channels, channels),
            heat_out=heat_out,
            reg_hidden=Linear.init(rng, channels, channels),
            reg_out=Linear.init(rng, channels, REG_CHANNELS),
        )


@dataclass(frozen=True)
class HeadOutput:
    heatmap: Tensor       # [H, W, K], sigmoid applied
    regression: Tensor    # [H, W, 6]
    grid: CartesianGridSpec


def head_forward(bev: BevFeatureMap, params: HeadParams) -> HeadOutput:
    x = bev.data
    heat = nc.linear(nc.relu(nc.linear(x, params.heat_hidden.W, params.heat_hidden.b)),
                     params.heat_out.W, params.heat_out.b)
    reg = nc.linear(nc.relu(nc.linear(x, params.reg_hidden.W, params.reg_hidden.b)),
                    params.reg_out.W, params.reg_out.b)
    return HeadOutput(heatmap=nc.sigmoid(heat), regression=reg, grid=bev.spec)


def gaussian_radius(height: float, width: float, min_overlap: float = GAUSSIAN_OVERLAP) -> float:
    """Largest center shift keeping IoU ≥ min_overlap (CenterNet's three cases)"""
    b1 = height + width
    c1 = width * height * (1 - min_overlap) / (1 + min_overlap)
    r1 = (b1 - math.sqrt(b1 ** 2 - 4 * c1)) / 2

    b2 = 2 * (height + width)
    c2 = (1 - min_overlap) * width * height
    r2 = (b2 - math.sqrt(b2 ** 2 - 16 * c2)) / 8

    a3 = 4 * min_overlap
    b3 = -2 * min_overlap * (height + width)
    c3 = (min_overlap - 1) * width * height
    r3 = (b3 + math.sqrt(b3 ** 2 - 4 * a3 * c3)) / (2 * a3)
    return min(r1, r2, r3)


def box_cell(x: float, y: float, grid: CartesianGridSpec) -> Tuple[int, int, float, float]:
    """Row, column and sub-cell offsets of a metric point"""
    gx = (x + grid.extent) / grid.cell_x
    gy = (y + grid.extent) / grid.cell_y
    j = min(max(int(math.floor(gx)), 0), grid.height - 1)
    i = min(max(int(math.floor(gy)), 0), grid.width - 1)
    return j, i, gx - j, gy - i


def heatmap_targets(gt: SceneGT, grid: CartesianGridSpec, n_classes: int) -> np.ndarray:
    """Max-combined Gaussians, peak 1 at each box's cell -> [H, W, K]"""
    target = np.zeros((grid.height, grid.width, n_classes))
    for box in gt.boxes:
        j, i, _, _ = box_cell(box.x, box.y, grid)
        radius = max(1, int(gaussian_radius(box.l / grid.cell_x, box.w / grid.cell_y)))
        sigma = (2 * radius + 1) / 6.0
        d = np.arange(-radius, radius + 1)
        kernel = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2 * sigma * sigma))
        kernel[kernel < np.finfo(np.float64).eps * kernel.max()] = 0.0
        top, bottom = min(j, radius), min(grid.height - j, radius + 1)
        left, right = min(i, radius), min(grid.width - i, radius + 1)
        window = target[j - top:j + bottom, i - left:i + right, box.cls]
        patch = kernel[radius - top:radius + bottom, radius - left:radius + right]
        np.maximum(window, patch, out=window)
    return target


def regression_targets(gt: SceneGT, grid: CartesianGridSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Encoded boxes [H, W, 6] and the mask of cells holding a box center"""
    target = np.zeros((grid.height, grid.width, REG_CHANNELS))
    mask = np.zeros((grid.height, grid.width), dtype=bool)
    for box in gt.boxes:
        j, i, dx, dy = box_cell(box.x, box.y, grid)
        target[j, i] = (dx, dy, math.log(box.w), math.log(box.l), math.sin(box.yaw), math.cos(box.yaw))
        mask[j, i] = True
    return target, mask


def focal_loss(pred: nc.Operand, target: np.ndarray) -> Tensor:
    """Penalty-reduced focal loss, normalized by the number of peaks (at least 1)"""
    p_raw = nc.data_of(pred)
    target = np.asarray(target, dtype=np.float64)
    p = np.clip(p_raw, PROB_CLAMP, 1.0 - PROB_CLAMP)
    pos = target == 1.0
    n_pos = max(1, int(pos.sum()))
    neg_w = (1.0 - target) ** FOCAL_BETA
    pos_term = (1.0 - p) ** FOCAL_ALPHA * np.log(p)
    neg_term = neg_w * p ** FOCAL_ALPHA * np.log(1.0 - p)
    loss = -np.where(pos, pos_term, neg_term).sum() / n_pos

    def backward(dy: np.ndarray) -> None:
        d_pos = 2.0 * (1.0 - p) * np.log(p) - (1.0 - p) ** 2 / p
        d_neg = -neg_w * (2.0 * p * np.log(1.0 - p) - p ** 2 / (1.0 - p))
        inside = (p_raw > PROB_CLAMP) & (p_raw < 1.0 - PROB_CLAMP)
        nc.push_grad(pred, dy * np.where(pos, d_pos, d_neg) * inside / n_pos)

    return nc.emit(np.asarray(loss), (pred,), backward)


def regression_loss(pred_reg: nc.Operand, gt: SceneGT, grid: CartesianGridSpec) -> Tensor:
    """Mean absolute error over the 6 channels at box-center cells; 0 without boxes"""
    target, mask = regression_targets(gt, grid)
    n = int(mask.sum())
    if n == 0:
        return Tensor.constant(0.0)
    err = nc.mul(nc.absolute(nc.sub(pred_reg, target)), mask[..., None].astype(np.float64))
    return nc.scale(nc.reduce_sum(err), 1.0 / (REG_CHANNELS * n))


def _local_maxima(heat: np.ndarray) -> np.ndarray:
    """3×3 peaks: strictly above earlier neighbors (flat order), not below later ones"""
    H, W = heat.shape[:2]
    padded = np.pad(heat, ((1, 1), (1, 1), (0, 0)), constant_values=-np.inf)
    keep = np.ones(heat.shape, dtype=bool)
    for dj in (-1, 0, 1):
        for di in (-1, 0, 1):
            if dj == 0 and di == 0:
                continue
            neighbor = padded[1 + dj:1 + dj + H, 1 + di:1 + di + W]
            earlier = dj < 0 or (dj == 0 and di < 0)
            keep &= heat > neighbor if earlier else heat >= neighbor
    return keep


def decode(out: HeadOutput, grid: CartesianGridSpec | None = None, score_thresh: float = 0.3,
           max_dets: int = 64) -> List[Detection]:
    grid = grid or out.grid
    heat = out.heatmap.data
    reg = out.regression.data
    H, W, K = heat.shape
    keep = _local_maxima(heat) & (heat > score_thresh)
    j, i, k = np.nonzero(keep)
    scores = heat[j, i, k]
    flat = (j * W + i) * K + k
    order = np.lexsort((flat, -scores))[:max_dets]
    detections = []
    for n in order:
        jj, ii = int(j[n]), int(i[n])
        dx, dy, log_w, log_l, s, c = reg[jj, ii]
        yaw = math.atan2(s, c)
        if yaw <= -math.pi:
            yaw = math.pi
        detections.append(Detection(
            x=-grid.extent + (jj + dx) * grid.cell_x,
            y=-grid.extent + (ii + dy) * grid.cell_y,
            w=math.exp(log_w),
            l=math.exp(log_l),
            yaw=yaw,
            cls=int(k[n]),
            score=float(np.clip(scores[n], 1e-12, 1.0 - 1e-12)),
        ))
    return detections

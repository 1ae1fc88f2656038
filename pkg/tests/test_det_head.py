import math

import numpy as np
import pytest

from polarbev.core.gradcheck import grad_check
from polarbev.core.numcore import Tensor
from polarbev.models.det_head import (
    HeadOutput,
    HeadParams,
    decode,
    focal_loss,
    gaussian_radius,
    head_forward,
    heatmap_targets,
    regression_loss,
    regression_targets,
)
from polarbev.models.sampler import BevFeatureMap
from polarbev.schemas.grid import CartesianGridSpec
from polarbev.schemas.scene import Box, SceneGT

GRID = CartesianGridSpec.square(16, 8.0)    # 1 m cells


def scene(*boxes):
    return SceneGT(boxes=tuple(Box(**b) for b in boxes))


CAR = dict(x=0.5, y=0.5, w=1.8, l=4.2, yaw=0.3, cls=0)
BIKE = dict(x=-4.3, y=3.7, w=0.9, l=1.6, yaw=-2.0, cls=1)


class TestGaussianRadius:
    def test_square_box(self):
        """for a 10×10 box the second case is the binding one"""
        assert gaussian_radius(10.0, 10.0) == pytest.approx((40 - math.sqrt(1120)) / 8, abs=1e-12)

    def test_grows_with_size(self):
        assert gaussian_radius(2.0, 4.0) < gaussian_radius(4.0, 8.0)


class TestHeatmapTargets:
    def test_empty(self):
        assert not heatmap_targets(SceneGT(), GRID, 2).any()

    def test_peak_and_decay(self):
        target = heatmap_targets(scene(CAR), GRID, 2)
        assert target[8, 8, 0] == 1.0
        assert (target == 1.0).sum() == 1
        assert not target[..., 1].any()
        assert 0.0 < target[8, 9, 0] < 1.0
        assert target[8, 9, 0] > target[8, 10, 0]
        assert target[9, 9, 0] < target[8, 9, 0]

    def test_duplicate_box(self):
        """max-combination makes a repeated box a no-op"""
        np.testing.assert_array_equal(heatmap_targets(scene(CAR, CAR), GRID, 2),
                                      heatmap_targets(scene(CAR), GRID, 2))

    def test_max_combination(self):
        near = dict(CAR, x=1.5, y=1.5)
        both = heatmap_targets(scene(CAR, near), GRID, 2)
        expected = np.maximum(heatmap_targets(scene(CAR), GRID, 2), heatmap_targets(scene(near), GRID, 2))
        np.testing.assert_array_equal(both, expected)

    def test_border_box(self):
        """a box in the corner cell is clipped to the grid"""
        target = heatmap_targets(scene(dict(CAR, x=-7.9, y=7.9)), GRID, 2)
        assert target[0, 15, 0] == 1.0


class TestFocalLoss:
    def test_single_cell(self):
        """t = 1, p = 0.5 gives 0.25·ln 2"""
        loss = focal_loss(np.array([[[0.5]]]), np.array([[[1.0]]]))
        assert loss.item() == pytest.approx(0.25 * math.log(2.0), abs=1e-12)

    def test_perfect_prediction(self):
        target = np.zeros((8, 8, 2))
        target[2, 3, 0] = target[6, 1, 1] = 1.0
        pred = np.clip(target, 1e-6, 1.0 - 1e-6)
        assert focal_loss(pred, target).item() <= 1e-4

    def test_non_negative(self, rng):
        target = heatmap_targets(scene(CAR, BIKE), GRID, 2)
        assert focal_loss(rng.uniform(0, 1, target.shape), target).item() >= 0.0

    def test_decreases_toward_target(self, rng):
        """nudging one cell toward its target lowers the loss"""
        target = heatmap_targets(scene(CAR, BIKE), GRID, 2)
        pred = rng.uniform(0.1, 0.9, target.shape)
        base = focal_loss(pred, target).item()
        for idx in [(8, 8, 0), (8, 9, 0), (3, 3, 1), (0, 0, 0)]:
            moved = pred.copy()
            moved[idx] += 0.01 if target[idx] == 1.0 else -0.01
            assert focal_loss(moved, target).item() < base

    def test_gradients(self, rng):
        target = heatmap_targets(scene(CAR, BIKE), GRID, 2)
        pred = Tensor(rng.uniform(0.05, 0.95, target.shape))
        assert grad_check(lambda: focal_loss(pred, target), [pred], max_coords_per_param=60).max_abs_err < 1e-6
        report = grad_check(lambda: focal_loss(pred, target), [pred], n_points=10, seed=3)
        assert report.checked == 10
        assert report.max_rel_err <= 1e-4


class TestRegressionLoss:
    def test_exact(self):
        gt = scene(CAR, BIKE)
        encoded, _ = regression_targets(gt, GRID)
        assert regression_loss(encoded, gt, GRID).item() == 0.0

    def test_one_channel_off(self):
        gt = scene(CAR)
        encoded, _ = regression_targets(gt, GRID)
        encoded[8, 8, 3] += 0.5
        assert regression_loss(encoded, gt, GRID).item() == pytest.approx(0.5 / 6, abs=1e-12)

    def test_ignores_other_cells(self, rng):
        gt = scene(CAR)
        encoded, mask = regression_targets(gt, GRID)
        encoded[~mask] = rng.normal(size=(int((~mask).sum()), 6))
        assert regression_loss(encoded, gt, GRID).item() == 0.0

    def test_empty_scene(self, rng):
        assert regression_loss(rng.normal(size=(16, 16, 6)), SceneGT(), GRID).item() == 0.0


def head_output(heat, reg, grid=GRID):
    return HeadOutput(heatmap=Tensor(heat), regression=Tensor(reg), grid=grid)


class TestDecode:
    def test_single_peak(self):
        """one 0.9 peak with exact regression decodes to the encoded box"""
        gt = scene(CAR)
        reg, _ = regression_targets(gt, GRID)
        heat = np.zeros((16, 16, 2))
        heat[8, 8, 0] = 0.9
        (det,) = decode(head_output(heat, reg))
        assert (det.x, det.y) == pytest.approx((CAR["x"], CAR["y"]), abs=1e-12)
        assert (det.w, det.l, det.yaw) == pytest.approx((CAR["w"], CAR["l"], CAR["yaw"]), rel=1e-12)
        assert det.cls == 0
        assert det.score == 0.9

    def test_below_threshold(self, rng):
        heat = rng.uniform(0.0, 0.29, (16, 16, 2))
        assert decode(head_output(heat, np.zeros((16, 16, 6))), score_thresh=0.3) == []

    def test_equal_neighbors(self):
        """of two equal adjacent peaks only the lower flat index survives"""
        heat = np.zeros((4, 4, 1))
        heat[1, 1, 0] = heat[1, 2, 0] = 0.8
        grid = CartesianGridSpec.square(4, 2.0)
        dets = decode(head_output(heat, np.zeros((4, 4, 6)), grid))
        assert len(dets) == 1
        assert dets[0].x == pytest.approx(-2.0 + 1 * grid.cell_x)
        assert dets[0].y == pytest.approx(-2.0 + 1 * grid.cell_y)

    def test_max_dets(self):
        heat = np.zeros((16, 16, 1))
        for n, (j, i) in enumerate([(1, 1), (1, 5), (5, 1), (5, 5), (9, 9)]):
            heat[j, i, 0] = 0.5 + 0.05 * n
        dets = decode(head_output(heat, np.zeros((16, 16, 6))), max_dets=3)
        assert [d.score for d in dets] == pytest.approx([0.7, 0.65, 0.6])

    def test_encode_decode(self):
        """targets plus exact regression recover every box"""
        gt = scene(CAR, BIKE, dict(CAR, x=-6.2, y=-5.9, yaw=3.0), dict(BIKE, x=5.1, y=-2.6, yaw=-0.4))
        reg, _ = regression_targets(gt, GRID)
        dets = decode(head_output(heatmap_targets(gt, GRID, 2), reg))
        assert len(dets) == len(gt.boxes)
        for box in gt.boxes:
            det = min(dets, key=lambda d: math.hypot(d.x - box.x, d.y - box.y))
            assert math.hypot(det.x - box.x, det.y - box.y) < 0.5 * GRID.cell_x
            assert det.w == pytest.approx(box.w, rel=1e-9)
            assert det.l == pytest.approx(box.l, rel=1e-9)
            assert det.yaw == pytest.approx(box.yaw, abs=1e-9)
            assert det.cls == box.cls


class TestHeadForward:
    def test_any_resolution(self, rng):
        """the same 1×1 head runs on every grid and agrees on equal inputs"""
        params = HeadParams.init(rng, 4, 2)
        feature = rng.normal(size=4)
        outs = []
        for res in (8, 13):
            data = np.broadcast_to(feature, (res, res, 4)).copy()
            out = head_forward(BevFeatureMap(Tensor(data), CartesianGridSpec.square(res, 8.0)), params)
            assert out.heatmap.shape == (res, res, 2)
            assert out.regression.shape == (res, res, 6)
            assert ((out.heatmap.data > 0) & (out.heatmap.data < 1)).all()
            outs.append(out.heatmap.data[0, 0])
        np.testing.assert_allclose(outs[0], outs[1], atol=1e-12)

import math

import numpy as np
import pytest

from polarbev.core import numcore as nc
from polarbev.core.errors import ConfigurationError, ContractViolation, DimensionError
from polarbev.core.gradcheck import grad_check
from polarbev.core.numcore import Tensor
from polarbev.models.mbie import (
    DeformLayer,
    FuseParams,
    MbiePyramid,
    aligned_resample,
    fuse_to_target,
    mbie_forward,
    ms_deform_attn,
    offset_inputs,
)
from polarbev.models.params import Linear
from polarbev.models.sampler import BevFeatureMap, bilinear_sample, resize_bev
from polarbev.schemas.grid import CartesianGridSpec

EXTENT = 4.0


def bev(data, extent=EXTENT):
    return BevFeatureMap(Tensor(data), CartesianGridSpec.square(data.shape[0], extent))


def pyramid_of(rng, sizes, channels=4):
    return MbiePyramid(tuple(bev(rng.normal(size=(n, n, channels))) for n in sizes))


def sample_zero_padded(source, y, x):
    """Four-neighbor blend of a [H, W, C] map at normalized (y, x); zero outside [0, 1]²"""
    H, W, C = source.shape
    if not (0.0 <= y <= 1.0 and 0.0 <= x <= 1.0):
        return np.zeros(C)
    a, b = y * H - 0.5, x * W - 0.5
    a0, b0 = math.floor(a), math.floor(b)
    out = np.zeros(C)
    for da, wa in ((0, 1 - (a - a0)), (1, a - a0)):
        for db, wb in ((0, 1 - (b - b0)), (1, b - b0)):
            i = min(max(a0 + da, 0), H - 1)
            j = min(max(b0 + db, 0), W - 1)
            out += wa * wb * source[i, j]
    return out


def nested_loop_attention(query, ref, pyramid, layer, H, P):
    """Per query, head, scale and point, written as plain loops"""
    N, C = query.shape
    S = len(pyramid)
    dh = C // H
    offsets = (query @ layer.offsets.W.data + layer.offsets.b.data).reshape(N, H, S, P, 2)
    logits = (query @ layer.weights.W.data + layer.weights.b.data).reshape(N, H, S * P)
    values = [m.data.data @ layer.value.W.data + layer.value.b.data for m in pyramid.maps]
    out = np.zeros((N, C))
    for q in range(N):
        heads = np.zeros(C)
        for h in range(H):
            e = np.exp(logits[q, h] - logits[q, h].max())
            A = e / e.sum()
            acc = np.zeros(dh)
            for s, m in enumerate(pyramid.maps):
                shape = np.array([m.spec.height, m.spec.width], dtype=np.float64)
                for r in range(P):
                    off = np.clip(offsets[q, h, s, r], -shape, shape)
                    y, x = ref[q] + off / shape
                    sampled = sample_zero_padded(values[s][..., h * dh:(h + 1) * dh], y, x)
                    acc += A[s * P + r] * sampled
            heads[h * dh:(h + 1) * dh] = acc
        out[q] = heads @ layer.output.W.data + layer.output.b.data
    return out


def random_layer(rng, channels, S, H, P, offset_scale=0.3):
    layer = DeformLayer.init(rng, channels, S, H, P)
    layer.offsets.W.data[:] = rng.normal(0.0, offset_scale, layer.offsets.W.shape)
    layer.weights.W.data[:] = rng.normal(0.0, 0.5, layer.weights.W.shape)
    layer.weights.b.data[:] = rng.normal(0.0, 0.1, layer.weights.b.shape)
    layer.output.W.data[:] = rng.normal(0.0, 0.5, layer.output.W.shape)
    layer.mlp_out.W.data[:] = rng.normal(0.0, 0.5, layer.mlp_out.W.shape)
    return layer


class TestPyramid:
    def test_increasing(self, rng):
        with pytest.raises(ConfigurationError):
            pyramid_of(rng, (8, 8))
        with pytest.raises(ConfigurationError):
            pyramid_of(rng, (8, 4))

    def test_shared_extent(self, rng):
        with pytest.raises(ConfigurationError):
            MbiePyramid((bev(rng.normal(size=(4, 4, 2))), bev(rng.normal(size=(8, 8, 2)), extent=5.0)))

    def test_shared_channels(self, rng):
        with pytest.raises(DimensionError):
            MbiePyramid((bev(rng.normal(size=(4, 4, 2))), bev(rng.normal(size=(8, 8, 3)))))

    def test_empty(self):
        with pytest.raises(ConfigurationError):
            MbiePyramid(())


class TestDeformAttn:
    def test_degenerate_mean(self, rng):
        """zero offsets, uniform weights and identity maps average the scales at the reference"""
        pyramid = pyramid_of(rng, (4, 8))
        layer = DeformLayer.init(rng, 4, 2, 1, 2)
        layer.value = Linear(Tensor(np.eye(4)), Tensor(np.zeros(4)))
        layer.output = Linear(Tensor(np.eye(4)), Tensor(np.zeros(4)))
        ref = rng.uniform(0.05, 0.95, size=(5, 2))
        out = ms_deform_attn(rng.normal(size=(5, 4)), ref, pyramid, layer, n_heads=1, n_points=2).data
        expected = np.mean([bilinear_sample(m.data, ref, wrap_phi=False).data for m in pyramid.maps], axis=0)
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_single_sample(self, rng):
        """one scale, one point, one head: a sampled value through two linear maps"""
        pyramid = MbiePyramid((bev(rng.normal(size=(6, 6, 4))),))
        layer = random_layer(rng, 4, 1, 1, 1, offset_scale=0.2)
        query = rng.normal(size=(3, 4))
        ref = rng.uniform(0.2, 0.8, size=(3, 2))
        out = ms_deform_attn(query, ref, pyramid, layer, n_heads=1, n_points=1).data
        offsets = query @ layer.offsets.W.data + layer.offsets.b.data
        loc = ref + offsets / 6.0
        values = pyramid.maps[0].data.data @ layer.value.W.data + layer.value.b.data
        sampled = np.stack([sample_zero_padded(values, y, x) for y, x in loc])
        np.testing.assert_allclose(out, sampled @ layer.output.W.data + layer.output.b.data, atol=1e-12)

    def test_nested_loop_oracle(self, rng):
        """100 random instances with N_q = 2, S = 2, R = 2, H = 2, C = 4"""
        for _ in range(100):
            pyramid = pyramid_of(rng, (3, 5))
            layer = random_layer(rng, 4, 2, 2, 2)
            query = rng.normal(size=(2, 4))
            ref = rng.uniform(0.0, 1.0, size=(2, 2))
            out = ms_deform_attn(query, ref, pyramid, layer, n_heads=2, n_points=2).data
            assert np.abs(out - nested_loop_attention(query, ref, pyramid, layer, 2, 2)).max() <= 1e-12

    def test_reference_outside_unit_square(self, rng):
        pyramid = pyramid_of(rng, (4, 8))
        layer = DeformLayer.init(rng, 4, 2, 2, 2)
        with pytest.raises(ContractViolation):
            ms_deform_attn(rng.normal(size=(1, 4)), np.array([[0.5, 1.2]]), pyramid, layer, 2, 2)

    def test_layer_shape_mismatch(self, rng):
        pyramid = pyramid_of(rng, (4, 8))
        layer = DeformLayer.init(rng, 4, 3, 2, 2)
        with pytest.raises(ConfigurationError):
            ms_deform_attn(rng.normal(size=(1, 4)), np.array([[0.5, 0.5]]), pyramid, layer, 2, 2)

    def test_gradients(self, rng):
        """queries, offsets, weights and both projections against finite differences"""
        pyramid = pyramid_of(rng, (4, 8))
        layer = random_layer(rng, 4, 2, 2, 2)
        query = Tensor(rng.normal(size=(3, 4)))
        ref = rng.uniform(0.2, 0.8, size=(3, 2))
        weights = rng.normal(size=(3, 4))
        tensors = [query, layer.offsets.W, layer.weights.W, layer.value.W, layer.output.W, pyramid.maps[1].data]

        def loss():
            return nc.reduce_sum(nc.mul(ms_deform_attn(query, ref, pyramid, layer, 2, 2), weights))

        assert grad_check(loss, tensors, eps=1e-6, max_coords_per_param=6).max_abs_err < 1e-6
        report = grad_check(loss, tensors, eps=1e-6, n_points=10, seed=3)
        assert report.checked == 10
        assert report.max_rel_err <= 1e-4


class TestMbieForward:
    def test_zero_init_identity(self, rng):
        """fresh layers have zero output projections, so the pyramid passes through"""
        pyramid = pyramid_of(rng, (4, 8))
        layers = [DeformLayer.init(rng, 4, 2, 2, 2) for _ in range(2)]
        out = mbie_forward(pyramid, layers, n_heads=2, n_points=2)
        for before, after in zip(pyramid.maps, out.maps):
            np.testing.assert_array_equal(after.data.data, before.data.data)

    def test_shapes_kept(self, rng):
        pyramid = pyramid_of(rng, (4, 8))
        out = mbie_forward(pyramid, [random_layer(rng, 4, 2, 2, 2)], 2, 2)
        assert [m.data.shape for m in out.maps] == [(4, 4, 4), (8, 8, 4)]
        assert all(np.isfinite(m.data.data).all() for m in out.maps)

    def test_needs_a_layer(self, rng):
        with pytest.raises(ConfigurationError):
            mbie_forward(pyramid_of(rng, (4, 8)), [], 2, 2)

    def test_golden(self, golden):
        """fixed-seed 8×8 and 16×16 pyramid"""
        rng = np.random.default_rng(42)
        pyramid = pyramid_of(rng, (8, 16))
        out = mbie_forward(pyramid, [random_layer(rng, 4, 2, 2, 2)], 2, 2)
        sums = [float(m.data.data.sum()) for m in out.maps] + [float(np.abs(m.data.data).sum()) for m in out.maps]
        assert sums == pytest.approx(golden("mbie_two_scale", sums), rel=1e-9, abs=1e-9)

    def test_gradients(self, rng):
        """one layer, loss = weighted sum of every output cell"""
        pyramid = pyramid_of(rng, (2, 4))
        layer = random_layer(rng, 4, 2, 2, 2)
        weights = [rng.normal(size=(n, n, 4)) for n in (2, 4)]

        def loss():
            out = mbie_forward(pyramid, [layer], 2, 2)
            return nc.add(nc.reduce_sum(nc.mul(out.maps[0].data, weights[0])),
                          nc.reduce_sum(nc.mul(out.maps[1].data, weights[1])))

        tensors = [layer.weights.W, layer.value.W, layer.output.W, layer.mlp_in.W, layer.mlp_out.W,
                   layer.norm_mlp.gamma]
        assert grad_check(loss, tensors, eps=1e-6, max_coords_per_param=5).max_abs_err < 1e-6
        report = grad_check(loss, tensors, eps=1e-6, n_points=10, seed=3)
        assert report.checked == 10
        assert report.max_rel_err <= 1e-4


class TestFuseToTarget:
    def test_single_scale_is_resize(self, rng):
        pyramid = MbiePyramid((bev(rng.normal(size=(6, 6, 3))),))
        target = CartesianGridSpec.square(11, EXTENT)
        fused = fuse_to_target(pyramid, target, FuseParams.init(3, 1))
        np.testing.assert_allclose(fused.data.data, resize_bev(pyramid.maps[0], target).data.data, atol=1e-12)

    def test_constant_any_resolution(self):
        """averaging fusion of a constant pyramid is that constant everywhere"""
        pyramid = MbiePyramid((bev(np.full((4, 4, 2), 1.5)), bev(np.full((8, 8, 2), 1.5))))
        params = FuseParams.init(2, 2)
        for res in (8, 13, 37, 64):
            fused = fuse_to_target(pyramid, CartesianGridSpec.square(res, EXTENT), params)
            assert fused.data.shape == (res, res, 2)
            np.testing.assert_allclose(fused.data.data, 1.5, atol=1e-12)

    def test_native_scale_passes_through(self, rng):
        """resampling a scale to its own grid with zero offsets changes nothing"""
        source = bev(rng.normal(size=(8, 8, 3)))
        guide = offset_inputs(MbiePyramid((source,)), source.spec)[0]
        aligned = aligned_resample(source, source.spec, Linear.zero(6, 2), guide)
        np.testing.assert_allclose(aligned.data.reshape(8, 8, 3), source.data.data, atol=1e-12)

    def test_offset_inputs_pair_coarser_scale(self, rng):
        """scale s sees scale s−1 beside itself; the coarsest scale sees itself twice"""
        pyramid = pyramid_of(rng, (4, 8, 16), channels=2)
        target = CartesianGridSpec.square(10, EXTENT)
        guides = offset_inputs(pyramid, target)
        resized = [resize_bev(m, target).data.data.reshape(100, 2) for m in pyramid.maps]
        assert [g.shape for g in guides] == [(100, 4)] * 3
        np.testing.assert_allclose(guides[0].data, np.hstack([resized[0], resized[0]]), atol=1e-12)
        np.testing.assert_allclose(guides[1].data, np.hstack([resized[0], resized[1]]), atol=1e-12)
        np.testing.assert_allclose(guides[2].data, np.hstack([resized[1], resized[2]]), atol=1e-12)

    def test_offsets_follow_coarser_scale(self, rng):
        """changing only the coarser map moves where the finer scale is sampled"""
        pyramid = pyramid_of(rng, (4, 8), channels=2)
        target = CartesianGridSpec.square(8, EXTENT)
        head = Linear.zero(4, 2)
        head.W.data[:2] = rng.normal(0.0, 0.5, size=(2, 2))
        shifted = MbiePyramid((bev(pyramid.maps[0].data.data + 1.0), pyramid.maps[1]))
        before = aligned_resample(pyramid.maps[1], target, head, offset_inputs(pyramid, target)[1]).data
        after = aligned_resample(pyramid.maps[1], target, head, offset_inputs(shifted, target)[1]).data
        assert np.abs(before - after).max() > 1e-3

    def test_guide_shape_mismatch(self, rng):
        source = bev(rng.normal(size=(8, 8, 3)))
        with pytest.raises(DimensionError):
            aligned_resample(source, source.spec, Linear.zero(6, 2), np.zeros((64, 3)))
        with pytest.raises(DimensionError):
            aligned_resample(source, source.spec, Linear.zero(6, 2), np.zeros((63, 6)))

    def test_gradients(self, rng):
        """offset heads, the mixing map and both scales against finite differences"""
        pyramid = pyramid_of(rng, (2, 4), channels=2)
        params = FuseParams.init(2, 2)
        for head in params.offsets:
            head.W.data[:] = rng.normal(0.0, 0.3, size=head.W.shape)
        target = CartesianGridSpec.square(5, EXTENT)
        weights = rng.normal(size=(5, 5, 2))
        tensors = [params.offsets[0].W, params.offsets[1].W, params.mix.W, pyramid.maps[0].data, pyramid.maps[1].data]

        def loss():
            return nc.reduce_sum(nc.mul(fuse_to_target(pyramid, target, params).data, weights))

        report = grad_check(loss, tensors, eps=1e-6, n_points=10, seed=3)
        assert report.checked == 10
        assert report.max_rel_err <= 1e-4

    def test_extent_mismatch(self, rng):
        pyramid = pyramid_of(rng, (4, 8), channels=2)
        with pytest.raises(ConfigurationError):
            fuse_to_target(pyramid, CartesianGridSpec.square(8, EXTENT + 1.0), FuseParams.init(2, 2))

    def test_scale_count_mismatch(self, rng):
        pyramid = pyramid_of(rng, (4, 8), channels=2)
        with pytest.raises(ConfigurationError):
            fuse_to_target(pyramid, CartesianGridSpec.square(8, EXTENT), FuseParams.init(2, 3))

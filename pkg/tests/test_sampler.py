import math

import numpy as np
import pytest

from polarbev.core import numcore as nc
from polarbev.core.errors import ConfigurationError, DimensionError, NumericError
from polarbev.core.gradcheck import grad_check
from polarbev.core.numcore import Tensor
from polarbev.geometry.polargrid import build_sampling_grid
from polarbev.models.sampler import (
    BevFeatureMap,
    PolarFeatureMap,
    bilinear_sample,
    polar_to_cartesian,
    resize_bev,
    sampling_weights,
)
from polarbev.schemas.grid import CartesianGridSpec, PolarGridSpec


def oracle(src, coords, wrap):
    """Explicit four-neighbor blend, written independently of the kernel"""
    A, R, C = src.shape
    out = np.zeros((len(coords), C))
    for n, (p, s) in enumerate(coords):
        if wrap:
            p = p - math.floor(p)
        elif not 0.0 <= p <= 1.0:
            continue
        if not 0.0 <= s <= 1.0:
            continue
        a, r = p * A - 0.5, s * R - 0.5
        a0, r0 = math.floor(a), math.floor(r)
        ta, tr = a - a0, r - r0
        for da, wa in ((0, 1 - ta), (1, ta)):
            for dr, wr in ((0, 1 - tr), (1, tr)):
                ai = (a0 + da) % A if wrap else min(max(a0 + da, 0), A - 1)
                ri = min(max(r0 + dr, 0), R - 1)
                out[n] += wa * wr * src[ai, ri]
    return out


class TestBilinearSample:
    def test_bin_center(self, rng):
        """a bin center returns that bin exactly"""
        src = rng.normal(size=(8, 4, 3))
        out = bilinear_sample(src, np.array([[(5 + 0.5) / 8, (2 + 0.5) / 4]]), wrap_phi=True)
        np.testing.assert_array_equal(out.data[0], src[5, 2])

    def test_radial_midpoint(self, rng):
        """halfway between radial neighbors is their mean"""
        src = rng.normal(size=(8, 4, 3))
        out = bilinear_sample(src, np.array([[(5 + 0.5) / 8, 2.0 / 4]]), wrap_phi=True)
        np.testing.assert_allclose(out.data[0], (src[5, 1] + src[5, 2]) / 2, atol=1e-15)

    def test_matches_oracle(self, rng):
        """1000 random queries, out-of-range radii and the azimuth seam included, agree with the oracle"""
        src = rng.normal(size=(16, 8, 5))
        seam = np.concatenate([rng.uniform(-1e-6, 1e-6, 98), rng.uniform(1 - 1e-6, 1 + 1e-6, 98),
                               [0.0, 1.0, -1e-17, 1.0 - 1e-16]])
        phi = np.concatenate([rng.uniform(-0.5, 1.5, 800), seam])
        coords = np.column_stack([phi, rng.uniform(-0.1, 1.1, 1000)])
        for wrap in (True, False):
            out = bilinear_sample(src, coords, wrap_phi=wrap).data
            assert np.abs(out - oracle(src, coords, wrap)).max() <= 1e-12

    def test_wrap_seam(self, rng):
        """φ̂ = 1 − ε and φ̂ = −ε read the same value"""
        src = rng.normal(size=(8, 4, 2))
        eps = 1e-3
        a = bilinear_sample(src, np.array([[1 - eps, 0.4]]), wrap_phi=True).data
        b = bilinear_sample(src, np.array([[-eps, 0.4]]), wrap_phi=True).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_seam_blends_first_and_last_bins(self, rng):
        """φ̂ = 0 is halfway between bin A−1 and bin 0"""
        src = rng.normal(size=(8, 4, 2))
        out = bilinear_sample(src, np.array([[0.0, 0.625]]), wrap_phi=True).data[0]
        np.testing.assert_allclose(out, (src[0, 2] + src[7, 2]) / 2, atol=1e-15)

    def test_zero_padding(self, rng):
        """radii outside [0, 1] read zero"""
        src = rng.normal(size=(8, 4, 2)) + 5.0
        out = bilinear_sample(src, np.array([[0.3, 1.01], [0.3, -0.01]]), wrap_phi=True).data
        np.testing.assert_array_equal(out, 0.0)

    def test_linearity(self, rng):
        """sampling commutes with linear combinations"""
        X, Y = rng.normal(size=(2, 8, 4, 3))
        coords = rng.uniform(0, 1, size=(40, 2))
        lhs = bilinear_sample(2.0 * X - 3.0 * Y, coords, True).data
        rhs = 2.0 * bilinear_sample(X, coords, True).data - 3.0 * bilinear_sample(Y, coords, True).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_partition_of_unity(self, rng):
        """blend weights sum to 1 in range and 0 when padded"""
        coords = np.column_stack([rng.uniform(-1, 2, 50), rng.uniform(-0.5, 1.5, 50)])
        _, weights = sampling_weights((8, 4), coords, wrap_phi=True)
        in_range = (coords[:, 1] >= 0) & (coords[:, 1] <= 1)
        np.testing.assert_allclose(weights.sum(axis=1), in_range.astype(float), atol=1e-12)

    def test_non_finite_coordinate(self):
        with pytest.raises(NumericError):
            bilinear_sample(np.zeros((4, 4, 1)), np.array([[float("nan"), 0.5]]), True)

    def test_source_rank(self):
        with pytest.raises(DimensionError):
            bilinear_sample(np.zeros((4, 4)), np.array([[0.5, 0.5]]), True)

    def test_gradients(self, rng):
        """gradients reach both the source and the coordinates"""
        src = Tensor(rng.normal(size=(6, 5, 2)))
        # keep queries away from the kinks at integer continuous indices
        coords = Tensor(np.column_stack([rng.uniform(0.05, 0.95, 12), rng.uniform(0.15, 0.85, 12)]))
        weights = rng.normal(size=(12, 2))

        def loss():
            return nc.reduce_sum(nc.mul(bilinear_sample(src, coords, True), weights))

        assert grad_check(loss, [src, coords]).max_abs_err < 1e-6
        report = grad_check(loss, [src, coords], n_points=10, seed=3)
        assert report.checked == 10
        assert report.max_rel_err <= 1e-4


class TestPolarToCartesian:
    def spec(self):
        return PolarGridSpec(azimuth_bins=16, radial_bins=8, sigma_min=0.0, sigma_max=4.0)

    def test_constant_map(self):
        """a constant polar map gives the constant on every in-range cell"""
        spec = self.spec()
        pmap = PolarFeatureMap(Tensor(np.full((16, 8, 2), 0.7)), spec)
        grid = build_sampling_grid(CartesianGridSpec.square(10, 4.0), spec)
        bev = polar_to_cartesian(pmap, grid).data.data
        np.testing.assert_allclose(bev[grid.in_range], 0.7, atol=1e-15)
        np.testing.assert_array_equal(bev[~grid.in_range], 0.0)

    def test_radius_field(self):
        """a map storing σ̂ reproduces the radius within one radial bin"""
        spec = self.spec()
        sigma_hat = (np.arange(8) + 0.5) / 8
        pmap = PolarFeatureMap(Tensor(np.broadcast_to(sigma_hat[None, :, None], (16, 8, 1)).copy()), spec)
        cart = CartesianGridSpec.square(12, 2.8)
        grid = build_sampling_grid(cart, spec)
        bev = polar_to_cartesian(pmap, grid).data.data[..., 0]
        assert np.abs(bev - grid.coords[..., 1]).max() <= 1.0 / 8

    def test_shared_cell_center(self, rng):
        """the same physical point reads the same value at any resolution"""
        spec = self.spec()
        pmap = PolarFeatureMap(Tensor(rng.normal(size=(16, 8, 3))), spec)
        coarse = polar_to_cartesian(pmap, build_sampling_grid(CartesianGridSpec.square(3, 3.0), spec))
        fine = polar_to_cartesian(pmap, build_sampling_grid(CartesianGridSpec.square(9, 3.0), spec))
        # centers of cell (0, 0) at 3×3 and cell (1, 1) at 9×9 are both (-2, -2)
        np.testing.assert_allclose(coarse.data.data[0, 0], fine.data.data[1, 1], atol=1e-12)
        np.testing.assert_allclose(coarse.data.data[1, 2], fine.data.data[4, 7], atol=1e-12)

    def test_any_resolution(self, rng):
        """one polar map feeds many grid sizes"""
        spec = self.spec()
        pmap = PolarFeatureMap(Tensor(rng.normal(size=(16, 8, 3))), spec)
        for res in (8, 13, 32):
            bev = polar_to_cartesian(pmap, build_sampling_grid(CartesianGridSpec.square(res, 2.8), spec))
            assert bev.data.shape == (res, res, 3)

    def test_spec_mismatch(self, rng):
        spec = self.spec()
        other = PolarGridSpec(azimuth_bins=16, radial_bins=8, sigma_max=5.0)
        pmap = PolarFeatureMap(Tensor(rng.normal(size=(16, 8, 1))), spec)
        with pytest.raises(ConfigurationError):
            polar_to_cartesian(pmap, build_sampling_grid(CartesianGridSpec.square(4, 2.0), other))

    def test_map_extents(self):
        with pytest.raises(DimensionError):
            PolarFeatureMap(Tensor(np.zeros((15, 8, 1))), self.spec())


class TestResize:
    def test_constant(self):
        bev = BevFeatureMap(Tensor(np.full((4, 4, 2), 3.0)), CartesianGridSpec.square(4, 2.0))
        out = resize_bev(bev, CartesianGridSpec.square(7, 2.0))
        np.testing.assert_allclose(out.data.data, 3.0, atol=1e-15)

    def test_extent_mismatch(self):
        bev = BevFeatureMap(Tensor(np.zeros((4, 4, 1))), CartesianGridSpec.square(4, 2.0))
        with pytest.raises(ConfigurationError):
            resize_bev(bev, CartesianGridSpec.square(4, 3.0))

import math

import numpy as np
import pytest
from pydantic import ValidationError

from polarbev.geometry.polargrid import (
    build_sampling_grid,
    cart_to_polar,
    cell_centers,
    normalize_polar,
    normalized_cell_centers,
    polar_to_cart,
)
from polarbev.schemas.config import default_sigma_max
from polarbev.schemas.grid import CartesianGridSpec, PolarGridSpec


@pytest.fixture
def full_range():
    return PolarGridSpec(azimuth_bins=360, radial_bins=144, sigma_min=0.0, sigma_max=72.0)


class TestSpecs:
    def test_polar_invariants(self):
        """A ≥ 4, R ≥ 2 and a non-empty radial range"""
        with pytest.raises(ValidationError):
            PolarGridSpec(azimuth_bins=3, radial_bins=4, sigma_max=1.0)
        with pytest.raises(ValidationError):
            PolarGridSpec(azimuth_bins=8, radial_bins=1, sigma_max=1.0)
        with pytest.raises(ValidationError):
            PolarGridSpec(azimuth_bins=8, radial_bins=4, sigma_min=2.0, sigma_max=2.0)

    def test_cartesian_invariants(self):
        with pytest.raises(ValidationError):
            CartesianGridSpec(height=1, width=4, extent=1.0)
        with pytest.raises(ValidationError):
            CartesianGridSpec(height=4, width=4, extent=0.0)

    def test_default_sigma_max(self):
        """√2·L rounded up to one decimal"""
        assert default_sigma_max(8.0) == pytest.approx(11.4)
        assert default_sigma_max(51.2) == pytest.approx(72.5)


class TestCartToPolar:
    def test_reference_direction(self):
        assert cart_to_polar(0.0, 1.0) == (0.0, 1.0)

    def test_quarter_turn(self):
        phi, sigma = cart_to_polar(1.0, 0.0)
        assert phi == pytest.approx(math.pi / 2, abs=1e-15)
        assert sigma == 1.0

    def test_three_four_five(self):
        phi, sigma = cart_to_polar(3.0, 4.0)
        assert phi == pytest.approx(0.6435011087932844, abs=1e-15)
        assert sigma == pytest.approx(5.0, abs=1e-15)

    def test_origin(self):
        """φ at the origin is 0"""
        assert cart_to_polar(0.0, 0.0) == (0.0, 0.0)

    def test_range(self, rng):
        """φ stays in [0, 2π) including just below the +h axis"""
        w = np.concatenate([rng.normal(size=200), [-1e-300, -0.0]])
        h = np.concatenate([rng.normal(size=200), [1.0, 1.0]])
        phi, _ = cart_to_polar(w, h)
        assert ((phi >= 0.0) & (phi < 2 * math.pi)).all()

    def test_round_trip(self, rng):
        """polar_to_cart inverts cart_to_polar"""
        w, h = rng.uniform(-10, 10, size=(2, 500))
        back_w, back_h = polar_to_cart(*cart_to_polar(w, h))
        np.testing.assert_allclose(back_w, w, atol=1e-9)
        np.testing.assert_allclose(back_h, h, atol=1e-9)


class TestNormalize:
    def test_midpoint(self, full_range):
        assert normalize_polar(0.0, 36.0, full_range)[1] == pytest.approx(0.5)

    def test_half_turn(self, full_range):
        assert normalize_polar(math.pi, 0.0, full_range)[0] == pytest.approx(0.5)

    def test_boundary(self, full_range):
        assert normalize_polar(0.0, 72.0, full_range)[1] == 1.0

    def test_no_clamping(self, full_range):
        """values beyond the range pass through"""
        assert normalize_polar(0.0, 144.0, full_range)[1] == pytest.approx(2.0)


class TestSamplingGrid:
    def test_two_by_two(self):
        """cell (+0.5, +0.5) of a 2×2 grid over [-1, 1]²"""
        cart = CartesianGridSpec(height=2, width=2, extent=1.0)
        grid = build_sampling_grid(cart, PolarGridSpec(azimuth_bins=8, radial_bins=4, sigma_max=math.sqrt(2)))
        phi_hat, sigma_hat = grid.coords[1, 1]
        assert sigma_hat == pytest.approx(0.5, abs=1e-15)
        assert phi_hat == pytest.approx(1 / 8, abs=1e-15)

    def test_corners_share_radius(self):
        cart = CartesianGridSpec(height=6, width=6, extent=3.0)
        grid = build_sampling_grid(cart, PolarGridSpec(azimuth_bins=8, radial_bins=4, sigma_max=5.0))
        corners = [grid.coords[0, 0, 1], grid.coords[0, -1, 1], grid.coords[-1, 0, 1], grid.coords[-1, -1, 1]]
        assert max(corners) - min(corners) < 1e-15

    def test_point_symmetry(self):
        """a 180° rotation keeps σ̂ and shifts φ̂ by one half"""
        cart = CartesianGridSpec(height=8, width=8, extent=4.0)
        grid = build_sampling_grid(cart, PolarGridSpec(azimuth_bins=8, radial_bins=4, sigma_max=6.0))
        for j in range(8):
            for i in range(8):
                a, b = grid.coords[j, i], grid.coords[7 - j, 7 - i]
                assert a[1] == pytest.approx(b[1], abs=1e-14)
                assert (a[0] - b[0]) % 1.0 == pytest.approx(0.5, abs=1e-12)

    def test_out_of_range_corners(self):
        """corner cells beyond sigma_max are flagged"""
        cart = CartesianGridSpec(height=8, width=8, extent=4.0)
        grid = build_sampling_grid(cart, PolarGridSpec(azimuth_bins=8, radial_bins=4, sigma_max=4.0))
        assert not grid.in_range[0, 0]
        assert grid.in_range[4, 4]
        inside = grid.coords[grid.in_range]
        assert ((inside >= 0.0) & (inside <= 1.0)).all()

    def test_refinement_nests(self):
        """4×4 centers are the midpoints of each 2×2 block's parent quarter"""
        h2, w2 = cell_centers(CartesianGridSpec(height=2, width=2, extent=1.0))
        h4, w4 = cell_centers(CartesianGridSpec(height=4, width=4, extent=1.0))
        np.testing.assert_allclose((h4[0::2] + h4[1::2]) / 2, h2, atol=1e-15)
        np.testing.assert_allclose((w4[0::2] + w4[1::2]) / 2, w2, atol=1e-15)

    def test_memoised_and_read_only(self):
        cart = CartesianGridSpec(height=4, width=4, extent=2.0)
        polar = PolarGridSpec(azimuth_bins=8, radial_bins=4, sigma_max=3.0)
        grid = build_sampling_grid(cart, polar)
        assert build_sampling_grid(cart, polar) is grid
        with pytest.raises(ValueError):
            grid.coords[0, 0, 0] = 0.0

    def test_normalized_cell_centers(self):
        centers = normalized_cell_centers(CartesianGridSpec(height=2, width=4, extent=1.0))
        assert centers.shape == (8, 2)
        np.testing.assert_allclose(centers[1], [0.25, 0.375])

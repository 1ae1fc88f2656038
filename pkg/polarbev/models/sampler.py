"""Bilinear sampling of polar and Cartesian feature maps.

Half-pixel convention: a normalized coordinate x in [0, 1] over n cells maps
to the continuous index x·n − 0.5, so cell centers are hit exactly. Along the
azimuth axis the map is periodic; along every other axis a query outside
[0, 1] reads zero and neighbor indices are clamped to the border.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from polarbev.core import numcore as nc
from polarbev.core.errors import ConfigurationError, DimensionError, NumericError
from polarbev.core.numcore import Tensor
from polarbev.geometry.polargrid import SamplingGrid, normalized_cell_centers
from polarbev.schemas.grid import CartesianGridSpec, PolarGridSpec


@dataclass(frozen=True)
class PolarFeatureMap:
    data: Tensor
    spec: PolarGridSpec

    def __post_init__(self):
        expected = (self.spec.azimuth_bins, self.spec.radial_bins)
        if self.data.shape[:2] != expected or len(self.data.shape) != 3:
            raise DimensionError("polar map extents disagree with its spec",
                                 shape=self.data.shape, expected=expected)


@dataclass(frozen=True)
class BevFeatureMap:
    data: Tensor
    spec: CartesianGridSpec

    def __post_init__(self):
        expected = (self.spec.height, self.spec.width)
        if self.data.shape[:2] != expected or len(self.data.shape) != 3:
            raise DimensionError("BEV map extents disagree with its spec",
                                 shape=self.data.shape, expected=expected)

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def _axis(x: np.ndarray, n: int, wrap: bool):
    if wrap:
        x = np.mod(x, 1.0)
        valid = np.ones(x.shape, dtype=bool)
    else:
        valid = (x >= 0.0) & (x <= 1.0)
    a = x * n - 0.5
    a0 = np.floor(a)
    frac = a - a0
    a0 = a0.astype(np.int64)
    if wrap:
        lo, hi = np.mod(a0, n), np.mod(a0 + 1, n)
    else:
        lo, hi = np.clip(a0, 0, n - 1), np.clip(a0 + 1, 0, n - 1)
    return lo, hi, frac, valid


def sampling_weights(shape: Tuple[int, int], coords: np.ndarray, wrap_phi: bool):
    """Neighbor indices [N, 4, 2] and blend weights [N, 4] of each query.

    Weights of a valid query sum to 1; an invalid query has all-zero weights.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise DimensionError("coords must have shape [N, 2]", shape=coords.shape)
    if not np.isfinite(coords).all():
        raise NumericError("non-finite sampling coordinate")
    a_lo, a_hi, fa, va = _axis(coords[:, 0], shape[0], wrap_phi)
    r_lo, r_hi, fr, vr = _axis(coords[:, 1], shape[1], False)
    index = np.stack([
        np.stack([a_lo, r_lo], -1), np.stack([a_lo, r_hi], -1),
        np.stack([a_hi, r_lo], -1), np.stack([a_hi, r_hi], -1),
    ], axis=1)
    weights = np.stack([(1 - fa) * (1 - fr), (1 - fa) * fr, fa * (1 - fr), fa * fr], axis=1)
    weights = weights * (va & vr)[:, None]
    return index, weights


def bilinear_sample(source: nc.Operand, coords: nc.Operand, wrap_phi: bool) -> Tensor:
    """Sample source [A, R, C] at normalized coords [N, 2] -> [N, C].

    Differentiable with respect to both the source and the coordinates.
    """
    src = nc.data_of(source)
    if src.ndim != 3:
        raise DimensionError("source must have shape [A, R, C]", shape=src.shape)
    xy = nc.data_of(coords)
    A, R = src.shape[:2]
    index, weights = sampling_weights((A, R), xy, wrap_phi)
    corners = src[index[..., 0], index[..., 1]]  # [N, 4, C]
    out = np.einsum("nk,nkc->nc", weights, corners)

    def backward(dy: np.ndarray) -> None:
        if nc.needs_grad(source):
            g = np.zeros_like(src)
            for k in range(4):
                np.add.at(g, (index[:, k, 0], index[:, k, 1]), weights[:, k, None] * dy)
            nc.push_grad(source, g)
        if nc.needs_grad(coords):
            live = (weights.sum(axis=1) > 0).astype(np.float64)
            s00, s01, s10, s11 = (corners[:, k] for k in range(4))
            fa = weights[:, 2] + weights[:, 3]
            fr = weights[:, 1] + weights[:, 3]
            d_fa = (1 - fr)[:, None] * (s10 - s00) + fr[:, None] * (s11 - s01)
            d_fr = (1 - fa)[:, None] * (s01 - s00) + fa[:, None] * (s11 - s10)
            g = np.stack([A * (d_fa * dy).sum(axis=1), R * (d_fr * dy).sum(axis=1)], axis=1)
            nc.push_grad(coords, g * live[:, None])

    return nc.emit(out, (source, coords), backward)


def polar_to_cartesian(pmap: PolarFeatureMap, grid: SamplingGrid) -> BevFeatureMap:
    """Resample a polar map onto a Cartesian grid; cells beyond the radial range read zero"""
    if grid.polar != pmap.spec:
        raise ConfigurationError("sampling grid was built for another polar spec")
    cart = grid.cart
    flat = bilinear_sample(pmap.data, grid.flat_coords(), wrap_phi=True)
    flat = nc.where(grid.in_range.reshape(-1, 1), flat, 0.0)
    return BevFeatureMap(nc.reshape(flat, (cart.height, cart.width, -1)), cart)


def resize_bev(bev: BevFeatureMap, target: CartesianGridSpec) -> BevFeatureMap:
    """Plain bilinear resize between Cartesian grids of equal extent"""
    if target.extent != bev.spec.extent:
        raise ConfigurationError("resize needs equal extents",
                                 source=bev.spec.extent, target=target.extent)
    flat = bilinear_sample(bev.data, normalized_cell_centers(target), wrap_phi=False)
    return BevFeatureMap(nc.reshape(flat, (target.height, target.width, -1)), target)

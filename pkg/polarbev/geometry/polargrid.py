"""Cartesian <-> polar conversion and the normalized sampling grid.

The polar angle is measured from the +h axis (ego x) towards +w (ego y), so
φ = atan2(w, h) coincides with the camera azimuth atan2(y, x).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np

from polarbev.core.errors import ConfigurationError
from polarbev.schemas.grid import CartesianGridSpec, PolarGridSpec

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True, eq=False)
class SamplingGrid:
    """Normalized (φ̂, σ̂) per Cartesian cell, shape [H, W, 2]"""

    cart: CartesianGridSpec
    polar: PolarGridSpec
    coords: np.ndarray
    in_range: np.ndarray

    def flat_coords(self) -> np.ndarray:
        return self.coords.reshape(-1, 2)


def cart_to_polar(w, h):
    """(φ in [0, 2π), σ ≥ 0); φ at the origin is 0"""
    w = np.asarray(w, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    sigma = np.hypot(w, h)
    phi = np.mod(np.arctan2(w, h), TWO_PI)
    # arctan2 of a tiny negative w can round up to exactly 2π
    phi = np.where(phi >= TWO_PI, 0.0, phi)
    if phi.ndim == 0:
        return float(phi), float(sigma)
    return phi, sigma


def polar_to_cart(phi, sigma):
    phi = np.asarray(phi, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    w, h = sigma * np.sin(phi), sigma * np.cos(phi)
    if w.ndim == 0:
        return float(w), float(h)
    return w, h


def normalize_polar(phi, sigma, spec: PolarGridSpec):
    """Min-max normalization with no clamping"""
    span = spec.sigma_max - spec.sigma_min
    if span <= 0:
        raise ConfigurationError("degenerate radial range", sigma_min=spec.sigma_min,
                                 sigma_max=spec.sigma_max)
    phi_hat = np.asarray(phi, dtype=np.float64) / TWO_PI
    sigma_hat = (np.asarray(sigma, dtype=np.float64) - spec.sigma_min) / span
    if phi_hat.ndim == 0:
        return float(phi_hat), float(sigma_hat)
    return phi_hat, sigma_hat


def cell_centers(cart: CartesianGridSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Metric (h, w) of row and column centers"""
    L = cart.extent
    h = (np.arange(cart.height) + 0.5) / cart.height * 2.0 * L - L
    w = (np.arange(cart.width) + 0.5) / cart.width * 2.0 * L - L
    return h, w


@lru_cache(maxsize=64)
def build_sampling_grid(cart: CartesianGridSpec, polar: PolarGridSpec) -> SamplingGrid:
    h, w = cell_centers(cart)
    hh, ww = np.meshgrid(h, w, indexing="ij")
    phi, sigma = cart_to_polar(ww, hh)
    phi_hat, sigma_hat = normalize_polar(phi, sigma, polar)
    coords = np.stack([phi_hat, sigma_hat], axis=-1)
    in_range = (sigma <= polar.sigma_max) & (sigma >= polar.sigma_min)
    coords.setflags(write=False)
    in_range.setflags(write=False)
    return SamplingGrid(cart=cart, polar=polar, coords=coords, in_range=in_range)


def normalized_cell_centers(cart: CartesianGridSpec) -> np.ndarray:
    """Row/column centers of every cell in [0, 1]², shape [H·W, 2]"""
    r = (np.arange(cart.height) + 0.5) / cart.height
    c = (np.arange(cart.width) + 0.5) / cart.width
    rr, cc = np.meshgrid(r, c, indexing="ij")
    return np.stack([rr.reshape(-1), cc.reshape(-1)], axis=-1)

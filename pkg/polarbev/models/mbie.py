"""Multi-scale BEV interaction encoder and pyramid fusion.

Every cell of every scale is a query. Each head samples ``points`` locations
per scale around the query's reference point, offset by a learned amount in
units of that scale's cells, and mixes the samples with softmax weights
shared across scales and points.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from polarbev.core import numcore as nc
from polarbev.core.errors import ConfigurationError, ContractViolation, DimensionError
from polarbev.core.numcore import Tensor
from polarbev.geometry.polargrid import normalized_cell_centers
from polarbev.models.params import LayerNorm, Linear
from polarbev.models.sampler import BevFeatureMap, bilinear_sample
from polarbev.schemas.grid import CartesianGridSpec


@dataclass(frozen=True)
class MbiePyramid:
    maps: Tuple[BevFeatureMap, ...]

    def __post_init__(self):
        maps = tuple(self.maps)
        object.__setattr__(self, "maps", maps)
        if not maps:
            raise ConfigurationError("a pyramid needs at least one scale")
        if len({m.spec.extent for m in maps}) != 1:
            raise ConfigurationError("pyramid scales must share one extent")
        if len({m.channels for m in maps}) != 1:
            raise DimensionError("pyramid scales must share one channel count")
        for a, b in zip(maps, maps[1:]):
            if not (a.spec.height < b.spec.height and a.spec.width < b.spec.width):
                raise ConfigurationError("pyramid resolutions must strictly increase")

    @property
    def extent(self) -> float:
        return self.maps[0].spec.extent

    @property
    def channels(self) -> int:
        return self.maps[0].channels

    def __len__(self) -> int:
        return len(self.maps)

    def shapes(self) -> np.ndarray:
        """[S, 2] (height, width) per scale"""
        return np.array([[m.spec.height, m.spec.width] for m in self.maps], dtype=np.float64)


@dataclass
class DeformLayer:
    offsets: Linear
    weights: Linear
    value: Linear
    output: Linear
    norm_attn: LayerNorm
    norm_mlp: LayerNorm
    mlp_in: Linear
    mlp_out: Linear

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, n_scales: int,
             n_heads: int, n_points: int) -> "DeformLayer":
        return cls(
            offsets=Linear.zero(channels, n_heads * n_scales * n_points * 2),
            weights=Linear.zero(channels, n_heads * n_scales * n_points),
            value=Linear.init(rng, channels, channels),
            output=Linear.zero(channels, channels),
            norm_attn=LayerNorm.init(channels),
            norm_mlp=LayerNorm.init(channels),
            mlp_in=Linear.init(rng, channels, channels),
            mlp_out=Linear.zero(channels, channels),
        )


@dataclass
class FuseParams:
    """Per-scale offset heads (2C -> 2) and the cross-scale mixing map (S·C -> C)"""

    offsets: List[Linear]
    mix: Linear

    @classmethod
    def init(cls, channels: int, n_scales: int) -> "FuseParams":
        mix = Linear.zero(n_scales * channels, channels)
        mix.W.data[...] = np.tile(np.eye(channels) / n_scales, (n_scales, 1))
        return cls(offsets=[Linear.zero(2 * channels, 2) for _ in range(n_scales)], mix=mix)


@dataclass
class MbieParams:
    layers: List[DeformLayer]
    fuse: FuseParams

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, n_scales: int, n_heads: int,
             n_points: int, n_layers: int) -> "MbieParams":
        return cls(
            layers=[DeformLayer.init(rng, channels, n_scales, n_heads, n_points) for _ in range(n_layers)],
            fuse=FuseParams.init(channels, n_scales),
        )


def ms_deform_attn(query: nc.Operand, ref: np.ndarray, pyramid: MbiePyramid, layer: DeformLayer,
                   n_heads: int, n_points: int) -> Tensor:
    """Multi-scale deformable attention, queries [N, C] with references [N, 2] in [0, 1]²"""
    ref = np.asarray(ref, dtype=np.float64)
    if ref.ndim != 2 or ref.shape[1] != 2:
        raise DimensionError("reference points must have shape [N, 2]", shape=ref.shape)
    if not np.isfinite(ref).all() or (ref < 0.0).any() or (ref > 1.0).any():
        raise ContractViolation("reference points must lie in [0, 1]²")
    N, C = query.shape
    S, H, P = len(pyramid), n_heads, n_points
    if C != pyramid.channels or C % H:
        raise DimensionError("query channels disagree with the pyramid or head count",
                             query=C, pyramid=pyramid.channels, heads=H)
    if layer.weights.W.shape[1] != H * S * P:
        raise ConfigurationError("deformable layer was built for another scale/head/point count")
    dh = C // H
    shapes = pyramid.shapes()

    offsets = nc.reshape(nc.linear(query, layer.offsets.W, layer.offsets.b), (N, H, S, P, 2))
    bound = shapes.reshape(1, 1, S, 1, 2)
    offsets = nc.clip(offsets, -bound, bound)
    attn = nc.softmax(nc.reshape(nc.linear(query, layer.weights.W, layer.weights.b), (N, H, S * P)), axis=-1)

    values = [nc.reshape(nc.linear(m.data, layer.value.W, layer.value.b),
                         (m.spec.height, m.spec.width, H, dh)) for m in pyramid.maps]
    heads = []
    for h in range(H):
        samples = []
        for s in range(S):
            source = nc.getitem(values[s], (slice(None), slice(None), h))
            offset = nc.getitem(offsets, (slice(None), h, s))  # [N, P, 2] in scale-s cells
            loc = nc.add(ref[:, None, :], nc.mul(offset, 1.0 / shapes[s]))
            sampled = bilinear_sample(source, nc.reshape(loc, (N * P, 2)), wrap_phi=False)
            samples.append(nc.reshape(sampled, (N, P, dh)))
        weights = nc.reshape(nc.getitem(attn, (slice(None), h)), (N, 1, S * P))
        heads.append(nc.reshape(nc.matmul(weights, nc.concat(samples, axis=1)), (N, dh)))
    return nc.linear(nc.concat(heads, axis=-1), layer.output.W, layer.output.b)


def mbie_forward(pyramid: MbiePyramid, layers: Sequence[DeformLayer], n_heads: int,
                 n_points: int) -> MbiePyramid:
    """Pre-norm deformable attention and MLP residuals over all cells of all scales"""
    if not layers:
        raise ConfigurationError("at least one encoder layer is required")
    refs = np.concatenate([normalized_cell_centers(m.spec) for m in pyramid.maps], axis=0)
    sizes = [m.spec.height * m.spec.width for m in pyramid.maps]
    bounds = np.cumsum([0] + sizes)
    maps = list(pyramid.maps)
    C = pyramid.channels
    for layer in layers:
        normed = [BevFeatureMap(nc.layer_norm(m.data, layer.norm_attn.gamma, layer.norm_attn.beta), m.spec)
                  for m in maps]
        queries = nc.concat([nc.reshape(m.data, (-1, C)) for m in normed], axis=0)
        delta = ms_deform_attn(queries, refs, MbiePyramid(tuple(normed)), layer, n_heads, n_points)
        updated = []
        for s, m in enumerate(maps):
            part = nc.reshape(nc.getitem(delta, slice(int(bounds[s]), int(bounds[s + 1]))),
                              (m.spec.height, m.spec.width, C))
            x = nc.add(m.data, part)
            hidden = nc.relu(nc.linear(nc.layer_norm(x, layer.norm_mlp.gamma, layer.norm_mlp.beta),
                                       layer.mlp_in.W, layer.mlp_in.b))
            x = nc.add(x, nc.linear(hidden, layer.mlp_out.W, layer.mlp_out.b))
            updated.append(BevFeatureMap(x, m.spec))
        maps = updated
    return MbiePyramid(tuple(maps))


def offset_inputs(pyramid: MbiePyramid, target: CartesianGridSpec) -> List[Tensor]:
    """Per scale, the next-coarser scale's plain resample beside its own, [T_h·T_w, 2C].

    The coarsest scale has nothing coarser and is paired with itself.
    """
    centers = normalized_cell_centers(target)
    bases = [bilinear_sample(m.data, centers, wrap_phi=False) for m in pyramid.maps]
    return [nc.concat([bases[max(s - 1, 0)], base], axis=-1) for s, base in enumerate(bases)]


def aligned_resample(bev: BevFeatureMap, target: CartesianGridSpec, head: Linear,
                     guide: nc.Operand) -> Tensor:
    """Sample one scale on the target grid, shifted by offsets predicted from ``guide``.

    Offsets are in source cells and clamped to the source extent. Returns
    [T_h·T_w, C].
    """
    centers = normalized_cell_centers(target)
    if guide.shape[0] != len(centers) or guide.shape[-1] != head.W.shape[0]:
        raise DimensionError("offset guide disagrees with the target grid or offset head",
                             guide=guide.shape, cells=len(centers), head=head.W.shape)
    shape = np.array([bev.spec.height, bev.spec.width], dtype=np.float64)
    offset = nc.clip(nc.linear(guide, head.W, head.b), -shape, shape)
    return bilinear_sample(bev.data, nc.add(centers, nc.mul(offset, 1.0 / shape)), wrap_phi=False)


def fuse_to_target(pyramid: MbiePyramid, target: CartesianGridSpec, params: FuseParams) -> BevFeatureMap:
    """Align every scale to the target grid and mix them per cell"""
    if target.extent != pyramid.extent:
        raise ConfigurationError("target extent differs from the pyramid extent",
                                 target=target.extent, pyramid=pyramid.extent)
    if len(params.offsets) != len(pyramid):
        raise ConfigurationError("fusion was built for another scale count",
                                 expected=len(params.offsets), found=len(pyramid))
    guides = offset_inputs(pyramid, target)
    parts = [aligned_resample(m, target, head, guide)
             for m, head, guide in zip(pyramid.maps, params.offsets, guides)]
    fused = nc.linear(nc.concat(parts, axis=-1), params.mix.W, params.mix.b)
    return BevFeatureMap(nc.reshape(fused, (target.height, target.width, pyramid.channels)), target)

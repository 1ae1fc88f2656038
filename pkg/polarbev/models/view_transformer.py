"""Column-wise PV-to-BEV transformer.

Every azimuth bin of the polar map is a ray of ``R_p`` queries. The ray
attends to the image pixels of the feature columns whose pixel columns fall
into that bin, pooled over all cameras that see it. Keys carry the pixel
feature, an embedding of its predicted depth distribution and a sinusoid of
its image row. An overlap gate scales the attention residual by the number of
cameras covering the bin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from polarbev.core import numcore as nc
from polarbev.core.errors import ConfigurationError, ContractViolation
from polarbev.core.numcore import Tensor
from polarbev.geometry.camgeom import CameraRig, RayAssignment, azimuth_bin
from polarbev.geometry.polargrid import cart_to_polar
from polarbev.models.params import LayerNorm, Linear, ones, zeros
from polarbev.models.sampler import PolarFeatureMap
from polarbev.schemas.grid import PolarGridSpec


@dataclass
class AttentionLayer:
    q: Linear
    k: Linear
    v: Linear
    o: Linear
    gate_w: Tensor
    gate_b: Tensor
    norm: LayerNorm
    mlp_in: Linear
    mlp_out: Linear

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int) -> "AttentionLayer":
        return cls(
            q=Linear.init(rng, channels, channels),
            k=Linear.init(rng, channels, channels),
            v=Linear.init(rng, channels, channels),
            o=Linear.init(rng, channels, channels),
            gate_w=ones(1),
            gate_b=zeros(1),
            norm=LayerNorm.init(channels),
            mlp_in=Linear.init(rng, channels, channels),
            mlp_out=Linear.init(rng, channels, channels),
        )


@dataclass
class KeyParams:
    """Depth head (C -> D) and depth-embedding MLP (D -> C -> C)"""

    depth_head: Linear
    embed_in: Linear
    embed_out: Linear

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, depth_bins: int) -> "KeyParams":
        return cls(
            depth_head=Linear.init(rng, channels, depth_bins),
            embed_in=Linear.init(rng, depth_bins, channels),
            embed_out=Linear.init(rng, channels, channels),
        )


@dataclass
class CpbtParams:
    keys: KeyParams
    radial_queries: Tensor
    no_obs: Tensor
    layers: List[AttentionLayer]

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, depth_bins: int,
             radial_bins: int, n_layers: int = 1) -> "CpbtParams":
        return cls(
            keys=KeyParams.init(rng, channels, depth_bins),
            radial_queries=Tensor(rng.normal(0.0, 0.1, size=(radial_bins, channels))),
            no_obs=zeros(channels),
            layers=[AttentionLayer.init(rng, channels) for _ in range(n_layers)],
        )


@dataclass(frozen=True, eq=False)
class KeyIndex:
    """Flat feature rows read by every azimuth bin, padded to a common length"""

    rows: np.ndarray        # [A, N] index into the stacked [cams·H_f·W_f, C] features
    valid: np.ndarray       # [A, N]
    vertical: np.ndarray    # [A, N] normalized image row of each key
    coverage: np.ndarray    # [A]

    @property
    def covered(self) -> np.ndarray:
        return self.coverage > 0


def build_key_index(assignment: RayAssignment, rig: CameraRig,
                    feature_height: int, feature_width: int, patch: int) -> KeyIndex:
    """Gather plan: distinct feature columns per bin, ordered by camera pose then column.

    Ordering by pose rather than rig position makes the plan, and therefore the
    transformer output, independent of camera order.
    """
    per_bin = []
    for members in assignment.bins:
        cols = {(ci, col // patch) for ci, col in members}
        per_bin.append(sorted(cols, key=lambda cc: (rig.cameras[cc[0]].pose_key, cc[1])))
    n_max = max(1, max(len(cols) for cols in per_bin) * feature_height)
    A = assignment.azimuth_bins
    rows = np.zeros((A, n_max), dtype=np.int64)
    valid = np.zeros((A, n_max), dtype=bool)
    vertical = np.zeros((A, n_max))
    per_camera = feature_height * feature_width
    for a, cols in enumerate(per_bin):
        n = 0
        for ci, fc in cols:
            for r in range(feature_height):
                rows[a, n] = ci * per_camera + r * feature_width + fc
                valid[a, n] = True
                vertical[a, n] = (r + 0.5) / feature_height
                n += 1
    return KeyIndex(rows=rows, valid=valid, vertical=vertical,
                    coverage=np.asarray(assignment.coverage, dtype=np.int64))


def depth_distribution(pixel_feature: nc.Operand, params: KeyParams) -> Tensor:
    """Softmax over depth-bin logits, per pixel"""
    return nc.softmax(nc.linear(pixel_feature, params.depth_head.W, params.depth_head.b), axis=-1)


def depth_pos_embed(dist: nc.Operand, params: KeyParams) -> Tensor:
    hidden = nc.relu(nc.linear(dist, params.embed_in.W, params.embed_in.b))
    return nc.linear(hidden, params.embed_out.W, params.embed_out.b)


def enriched_keys(features: Tensor, index: KeyIndex, params: KeyParams) -> Tensor:
    """[A, N, C] keys: gathered feature + depth embedding + row sinusoid"""
    channels = features.shape[-1]
    gathered = nc.take(features, index.rows, index.valid)
    embedded = depth_pos_embed(depth_distribution(gathered, params), params)
    rows = nc.sinusoidal_table(index.vertical, channels) * index.valid[..., None]
    return nc.add(nc.add(gathered, embedded), rows)


def coverage_gate(coverage, layer: AttentionLayer) -> Tensor:
    """g(c) = sigmoid(w_g·ln c + b_g) per entry of ``coverage``; uncovered bins use c = 1"""
    log_c = np.log(np.maximum(np.asarray(coverage, dtype=np.float64), 1.0))
    return nc.sigmoid(nc.add(nc.mul(log_c, layer.gate_w), layer.gate_b))


def _split_heads(x: nc.Operand, n_heads: int) -> Tensor:
    B, T, C = x.shape
    return nc.transpose(nc.reshape(x, (B, T, n_heads, C // n_heads)), (0, 2, 1, 3))


def project_keys(keys: Tensor, layer: AttentionLayer, n_heads: int):
    """Per-head keys and values [B, heads, N, C/heads]"""
    kh = _split_heads(nc.linear(keys, layer.k.W, layer.k.b), n_heads)
    vh = _split_heads(nc.linear(keys, layer.v.W, layer.v.b), n_heads)
    return kh, vh


def attention_logits(queries: nc.Operand, kh: Tensor, layer: AttentionLayer, n_heads: int) -> Tensor:
    qh = _split_heads(nc.linear(queries, layer.q.W, layer.q.b), n_heads)
    scale = 1.0 / math.sqrt(qh.shape[-1])
    return nc.scale(nc.matmul(qh, nc.transpose(kh, (0, 1, 3, 2))), scale)


def attend(queries: nc.Operand, kh: Tensor, vh: Tensor, mask: np.ndarray, coverage: np.ndarray,
           layer: AttentionLayer, n_heads: int) -> Tensor:
    """One gated cross-attention block over batched rays.

    queries [B, Q, C]; kh, vh [B, heads, N, C/heads]; mask [B, N]; coverage [B].
    Returns LN(q + g(c)·O(attn)) followed by an MLP residual.
    """
    B, Q, C = queries.shape
    logits = attention_logits(queries, kh, layer, n_heads)
    weights = nc.softmax(logits, axis=-1, mask=mask[:, None, None, :])
    heads = nc.matmul(weights, vh)
    merged = nc.reshape(nc.transpose(heads, (0, 2, 1, 3)), (B, Q, C))
    out = nc.linear(merged, layer.o.W, layer.o.b)
    gate = coverage_gate(np.reshape(coverage, (B, 1)), layer)
    y = nc.layer_norm(nc.add(queries, nc.mul(nc.reshape(gate, (B, 1, 1)), out)),
                      layer.norm.gamma, layer.norm.beta)
    hidden = nc.relu(nc.linear(y, layer.mlp_in.W, layer.mlp_in.b))
    return nc.add(y, nc.linear(hidden, layer.mlp_out.W, layer.mlp_out.b))


def ray_cross_attention(ray_queries: nc.Operand, key_pixels: nc.Operand, coverage: int,
                        layer: AttentionLayer, n_heads: int) -> Tensor:
    """Single ray: queries [R_p, C] attend to key pixels [N_k, C]"""
    if key_pixels.shape[0] < 1:
        raise ContractViolation("a ray needs at least one key; use the no-observation embedding")
    if coverage < 1:
        raise ContractViolation("coverage must be at least 1", coverage=coverage)
    R, C = ray_queries.shape
    q = nc.reshape(ray_queries, (1, R, C))
    kh, vh = project_keys(nc.reshape(key_pixels, (1, key_pixels.shape[0], C)), layer, n_heads)
    mask = np.ones((1, key_pixels.shape[0]), dtype=bool)
    return nc.reshape(attend(q, kh, vh, mask, np.array([coverage]), layer, n_heads), (R, C))


def azimuth_encoding(azimuth_bins: int, channels: int) -> np.ndarray:
    """Sinusoid of each bin's normalized center azimuth, [A, C]"""
    return nc.sinusoidal_table((np.arange(azimuth_bins) + 0.5) / azimuth_bins, channels)


def polar_queries(params: CpbtParams, azimuth_bins: int) -> Tensor:
    """Query for bin (a, r) = radial[r] + azenc[a] -> [A, R_p, C]"""
    channels = params.radial_queries.shape[1]
    return nc.add(params.radial_queries, azimuth_encoding(azimuth_bins, channels)[:, None, :])


def stack_features(features: Sequence[Tensor]) -> Tensor:
    """Per-camera [H_f, W_f, C] maps -> [cams·H_f·W_f, C] rows"""
    shapes = {f.shape for f in features}
    if len(shapes) != 1:
        raise ConfigurationError("camera feature maps differ in shape", shapes=sorted(shapes))
    return nc.concat([nc.reshape(f, (-1, f.shape[-1])) for f in features], axis=0)


def cpbt_forward(features: Sequence[Tensor], rig: CameraRig, assignment: RayAssignment,
                 spec: PolarGridSpec, params: CpbtParams, n_heads: int, patch: int,
                 index: KeyIndex | None = None) -> PolarFeatureMap:
    if len(features) != len(rig):
        raise ConfigurationError("one feature map per camera is required",
                                 features=len(features), cameras=len(rig))
    if assignment.azimuth_bins != spec.azimuth_bins:
        raise ConfigurationError("assignment and polar spec disagree on azimuth bins")
    if params.radial_queries.shape[0] != spec.radial_bins:
        raise ConfigurationError("radial query count disagrees with the polar spec")
    hf, wf, channels = features[0].shape
    if index is None:
        index = build_key_index(assignment, rig, hf, wf, patch)
    keys = enriched_keys(stack_features(features), index, params.keys)
    x = polar_queries(params, spec.azimuth_bins)
    for layer in params.layers:
        kh, vh = project_keys(keys, layer, n_heads)
        x = attend(x, kh, vh, index.valid, index.coverage, layer, n_heads)
    out = nc.where(index.covered[:, None, None], x, params.no_obs)
    return PolarFeatureMap(out, spec)


# ---------------------------------------------------------------- Cartesian baseline

@dataclass
class BaselineParams:
    """Learned per-cell aggregation onto a fixed Cartesian map"""

    keys: KeyParams
    cell_queries: Tensor
    no_obs: Tensor
    layers: List[AttentionLayer]

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, depth_bins: int,
             resolution: int, n_layers: int = 1) -> "BaselineParams":
        return cls(
            keys=KeyParams.init(rng, channels, depth_bins),
            cell_queries=Tensor(rng.normal(0.0, 0.1, size=(resolution * resolution, channels))),
            no_obs=zeros(channels),
            layers=[AttentionLayer.init(rng, channels) for _ in range(n_layers)],
        )


def cell_azimuth_bins(resolution: int, extent: float, azimuth_bins: int) -> np.ndarray:
    """Azimuth bin of every cell center of a square grid, flattened row-major"""
    centers = (np.arange(resolution) + 0.5) / resolution * 2.0 * extent - extent
    out = np.empty(resolution * resolution, dtype=np.int64)
    for j, h in enumerate(centers):
        for i, w in enumerate(centers):
            phi, _ = cart_to_polar(w, h)
            out[j * resolution + i] = azimuth_bin(phi, azimuth_bins)
    return out


def baseline_forward(features: Sequence[Tensor], rig: CameraRig, assignment: RayAssignment,
                     params: BaselineParams, resolution: int, extent: float,
                     n_heads: int, patch: int, index: KeyIndex | None = None) -> Tensor:
    """[T0, T0, C] map; each cell attends to the keys of its own azimuth bin"""
    if len(features) != len(rig):
        raise ConfigurationError("one feature map per camera is required")
    hf, wf, channels = features[0].shape
    if index is None:
        index = build_key_index(assignment, rig, hf, wf, patch)
    cells = cell_azimuth_bins(resolution, extent, assignment.azimuth_bins)
    keys = enriched_keys(stack_features(features), index, params.keys)
    x = nc.reshape(params.cell_queries, (resolution * resolution, 1, channels))
    for layer in params.layers:
        kh, vh = project_keys(keys, layer, n_heads)
        x = attend(x, nc.take(kh, cells), nc.take(vh, cells), index.valid[cells],
                   index.coverage[cells], layer, n_heads)
    out = nc.where(index.covered[cells][:, None, None], x, params.no_obs)
    return nc.reshape(out, (resolution, resolution, channels))


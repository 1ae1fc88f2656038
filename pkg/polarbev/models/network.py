"""End-to-end detector: patch encoder -> view transform -> pyramid -> MBIE -> fusion -> head"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from polarbev.core import numcore as nc
from polarbev.core.numcore import Tensor
from polarbev.geometry.camgeom import CameraRig, assign_columns_to_rays, build_rig
from polarbev.geometry.polargrid import build_sampling_grid
from polarbev.models import det_head
from polarbev.models.det_head import HeadOutput, HeadParams
from polarbev.models.encoder import encode_image, init_encoder
from polarbev.models.mbie import MbieParams, MbiePyramid, fuse_to_target, mbie_forward
from polarbev.models.params import Linear, load_state, named_tensors, parameter_list, state_dict
from polarbev.models.sampler import BevFeatureMap, PolarFeatureMap, polar_to_cartesian, resize_bev
from polarbev.models.view_transformer import (
    BaselineParams,
    CpbtParams,
    KeyIndex,
    baseline_forward,
    build_key_index,
    cpbt_forward,
)
from polarbev.schemas.config import ExperimentConfig
from polarbev.schemas.scene import Detection, SceneGT


@dataclass
class NetworkParams:
    encoder: Linear
    view: CpbtParams | BaselineParams
    mbie: MbieParams
    head: HeadParams


@dataclass(frozen=True)
class LossTerms:
    total: Tensor
    focal: Tensor
    regression: Tensor


def init_params(config: ExperimentConfig) -> NetworkParams:
    """Deterministic initial parameters for a config"""
    rng = np.random.default_rng([config.seed, 0x5EED])
    C = config.channels
    if config.use_cpbt:
        view = CpbtParams.init(rng, C, config.depth_bins, config.radial_bins, config.cpbt_layers)
    else:
        view = BaselineParams.init(rng, C, config.depth_bins, config.train_resolution, config.cpbt_layers)
    return NetworkParams(
        encoder=init_encoder(rng, config.patch_size, C),
        view=view,
        mbie=MbieParams.init(rng, C, len(config.mbie_scale_factors), config.mbie_heads,
                             config.mbie_points, config.mbie_layers),
        head=HeadParams.init(rng, C, config.n_classes),
    )


class PolarBevNet:
    """Holds a config, its camera rig and the network parameters"""

    def __init__(self, config: ExperimentConfig, params: Optional[NetworkParams] = None,
                 rig: Optional[CameraRig] = None):
        self.config = config
        self.rig = rig if rig is not None else build_rig(config.rig_spec())
        self.params = params if params is not None else init_params(config)
        self.polar_spec = config.polar_spec()

    @cached_property
    def assignment(self):
        return assign_columns_to_rays(self.rig, self.config.azimuth_bins)

    @cached_property
    def key_index(self) -> KeyIndex:
        cfg = self.config
        return build_key_index(self.assignment, self.rig, cfg.image_height // cfg.patch_size,
                               cfg.image_width // cfg.patch_size, cfg.patch_size)

    def parameters(self) -> List[Tensor]:
        return parameter_list(self.params)

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return list(named_tensors(self.params))

    def state(self) -> Dict[str, np.ndarray]:
        return state_dict(self.params)

    def load(self, state: Dict[str, np.ndarray]) -> None:
        load_state(self.params, state)

    # ------------------------------------------------------------ stages

    def encode(self, images: Sequence[np.ndarray]) -> List[Tensor]:
        return [encode_image(img, self.params.encoder, self.config.patch_size) for img in images]

    def view_transform(self, features: Sequence[Tensor]) -> PolarFeatureMap | BevFeatureMap:
        cfg = self.config
        if cfg.use_cpbt:
            return cpbt_forward(features, self.rig, self.assignment, self.polar_spec, self.params.view,
                                cfg.cpbt_heads, cfg.patch_size, self.key_index)
        data = baseline_forward(features, self.rig, self.assignment, self.params.view,
                                cfg.train_resolution, cfg.extent, cfg.cpbt_heads, cfg.patch_size,
                                self.key_index)
        return BevFeatureMap(data, cfg.bev_grid(cfg.train_resolution))

    def pyramid(self, source: PolarFeatureMap | BevFeatureMap, resolution: int) -> MbiePyramid:
        """Cartesian maps at round(T·f) for every scale factor"""
        maps = []
        for size in self.config.pyramid_resolutions(resolution):
            grid = self.config.bev_grid(size)
            if isinstance(source, PolarFeatureMap):
                maps.append(polar_to_cartesian(source, build_sampling_grid(grid, source.spec)))
            else:
                maps.append(resize_bev(source, grid))
        return MbiePyramid(tuple(maps))

    def forward(self, images: Sequence[np.ndarray], resolution: int) -> HeadOutput:
        cfg = self.config
        pyramid = self.pyramid(self.view_transform(self.encode(images)), resolution)
        if cfg.use_mbie:
            pyramid = mbie_forward(pyramid, self.params.mbie.layers, cfg.mbie_heads, cfg.mbie_points)
        bev = fuse_to_target(pyramid, cfg.bev_grid(resolution), self.params.mbie.fuse)
        return det_head.head_forward(bev, self.params.head)

    def loss(self, images: Sequence[np.ndarray], scene: SceneGT, resolution: int | None = None) -> LossTerms:
        cfg = self.config
        resolution = resolution or cfg.train_resolution
        out = self.forward(images, resolution)
        grid = cfg.bev_grid(resolution)
        focal = det_head.focal_loss(out.heatmap, det_head.heatmap_targets(scene, grid, cfg.n_classes))
        reg = det_head.regression_loss(out.regression, scene, grid)
        return LossTerms(total=nc.add(focal, nc.scale(reg, cfg.regression_weight)), focal=focal, regression=reg)

    def detect(self, images: Sequence[np.ndarray], resolution: int) -> List[Detection]:
        out = self.forward(images, resolution)
        return det_head.decode(out, out.grid, self.config.score_threshold, self.config.max_detections)

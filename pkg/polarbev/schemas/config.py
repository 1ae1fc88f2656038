"""Experiment configuration: one flat JSON object, unknown keys rejected"""
import hashlib
import json
import math
from pathlib import Path
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from polarbev.core.errors import ConfigurationError
from polarbev.schemas.grid import CartesianGridSpec, PolarGridSpec
from polarbev.schemas.scene import DEFAULT_SIZE_PRIORS, RigSpec, SceneSpec

MIN_RESOLUTION = 8
EVAL_SCENE_OFFSET = 1_000_000


def default_sigma_max(extent: float) -> float:
    """√2·L rounded up to one decimal so the polar range covers the square's corners"""
    return math.ceil(math.sqrt(2.0) * extent * 10.0 - 1e-9) / 10.0


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = Field(default=0, description="the only source of randomness")
    extent: float = Field(default=8.0, gt=0.0, description="perception half-range L in meters")

    # rig and images
    n_cameras: int = Field(default=4, ge=1)
    camera_fov_deg: float = Field(default=100.0, gt=0.0, lt=180.0)
    camera_headings_deg: Optional[Tuple[float, ...]] = Field(default=None)
    camera_height: float = Field(default=1.0)
    image_width: int = Field(default=64, ge=4)
    image_height: int = Field(default=32, ge=4)
    patch_size: int = Field(default=4, ge=1, description="encoder stride in pixels")

    # polar grid and view transformer
    azimuth_bins: int = Field(default=64, ge=4)
    radial_bins: int = Field(default=24, ge=2)
    sigma_min: float = Field(default=0.0, ge=0.0)
    sigma_max: Optional[float] = Field(default=None, description="defaults to √2·L rounded up")
    channels: int = Field(default=32, ge=2)
    depth_bins: int = Field(default=8, ge=2)
    cpbt_heads: int = Field(default=2, ge=1)
    cpbt_layers: int = Field(default=1, ge=1)

    # multi-scale BEV encoder
    mbie_scale_factors: Tuple[float, ...] = Field(default=(0.25, 0.5, 1.0))
    mbie_heads: int = Field(default=2, ge=1)
    mbie_points: int = Field(default=2, ge=1)
    mbie_layers: int = Field(default=1, ge=1)

    # scenes
    n_classes: int = Field(default=2, ge=1)
    min_objects: int = Field(default=1, ge=0)
    max_objects: int = Field(default=4, ge=0)
    train_scenes: int = Field(default=256, ge=1)
    eval_scenes: int = Field(default=64, ge=1)

    # head and resolutions
    train_resolution: int = Field(default=32, ge=MIN_RESOLUTION)
    eval_resolutions: Tuple[int, ...] = Field(default=(16, 24, 32, 48, 64))
    score_threshold: float = Field(default=0.3, gt=0.0, lt=1.0)
    max_detections: int = Field(default=64, ge=1)

    # optimisation
    learning_rate: float = Field(default=1e-3, gt=0.0)
    beta1: float = Field(default=0.9, gt=0.0, lt=1.0)
    beta2: float = Field(default=0.999, gt=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0.0)
    epochs: int = Field(default=20, ge=0)
    batch_size: int = Field(default=4, ge=1)
    regression_weight: float = Field(default=0.25, ge=0.0, description="λ in focal + λ·L1")

    # variants
    use_cpbt: bool = Field(default=True, description="False selects the Cartesian-interpolation baseline")
    use_mbie: bool = Field(default=True)

    @model_validator(mode="after")
    def check_consistency(self):
        if not self.eval_resolutions:
            raise ValueError("at least one eval resolution is required")
        if any(r < MIN_RESOLUTION for r in self.eval_resolutions):
            raise ValueError(f"eval resolutions must be >= {MIN_RESOLUTION}")
        if len(self.mbie_scale_factors) < 2:
            raise ValueError("the multi-scale encoder needs at least two scales")
        if 1.0 not in self.mbie_scale_factors:
            raise ValueError("scale factor 1.0 is required so the head resolution is reachable")
        if list(self.mbie_scale_factors) != sorted(set(self.mbie_scale_factors)):
            raise ValueError("scale factors must be strictly increasing")
        if any(not 0.0 < f <= 1.0 for f in self.mbie_scale_factors):
            raise ValueError("scale factors must lie in (0, 1]")
        if self.channels % 2:
            raise ValueError("channels must be even for sinusoidal embeddings")
        for heads in (self.cpbt_heads, self.mbie_heads):
            if self.channels % heads:
                raise ValueError("attention heads must divide channels")
        if self.image_width % self.patch_size or self.image_height % self.patch_size:
            raise ValueError("image size must be a multiple of patch_size")
        if self.min_objects > self.max_objects:
            raise ValueError("min_objects exceeds max_objects")
        if self.n_classes > len(DEFAULT_SIZE_PRIORS):
            raise ValueError("no size priors for the requested class count")
        if self.camera_headings_deg is not None and len(self.camera_headings_deg) != self.n_cameras:
            raise ValueError("camera_headings_deg needs one entry per camera")
        if self.sigma_max is not None and self.sigma_max <= self.sigma_min:
            raise ValueError("sigma_max must exceed sigma_min")
        return self

    @property
    def resolved_sigma_max(self) -> float:
        return self.sigma_max if self.sigma_max is not None else default_sigma_max(self.extent)

    def polar_spec(self) -> PolarGridSpec:
        return PolarGridSpec(azimuth_bins=self.azimuth_bins, radial_bins=self.radial_bins,
                             sigma_min=self.sigma_min, sigma_max=self.resolved_sigma_max)

    def rig_spec(self) -> RigSpec:
        return RigSpec(n_cameras=self.n_cameras, fov_deg=self.camera_fov_deg,
                       headings_deg=self.camera_headings_deg, mount_height=self.camera_height,
                       image_width=self.image_width, image_height=self.image_height)

    def scene_spec(self) -> SceneSpec:
        return SceneSpec(seed=self.seed, min_objects=self.min_objects, max_objects=self.max_objects,
                         extent=self.extent, n_classes=self.n_classes, rig=self.rig_spec())

    def bev_grid(self, resolution: int) -> CartesianGridSpec:
        return CartesianGridSpec.square(resolution, self.extent)

    def pyramid_resolutions(self, target: int) -> List[int]:
        """Scales round(T·f); the target itself is the finest scale"""
        sizes = [max(2, int(round(target * f))) for f in self.mbie_scale_factors]
        if any(a >= b for a, b in zip(sizes, sizes[1:])):
            raise ConfigurationError("scale factors collapse at this resolution",
                                     resolution=target, sizes=sizes)
        return sizes

    def variant(self, **changes) -> "ExperimentConfig":
        """Copy with some keys replaced, re-validated"""
        return ExperimentConfig.model_validate({**self.model_dump(), **changes})

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


def load_config(path: Path) -> ExperimentConfig:
    """Read a flat JSON config file"""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigurationError("config file not found", path=str(path))
    except OSError as e:
        raise ConfigurationError(f"config file cannot be read: {e.strerror}", path=str(path))
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config is not valid JSON: {e.msg}", path=str(path), line=e.lineno)
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a flat JSON object", path=str(path))
    return ExperimentConfig.model_validate(raw)

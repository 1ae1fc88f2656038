import math
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Box(BaseModel):
    """BEV box in the ego frame"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    x: float = Field(..., description="meters, ego forward")
    y: float = Field(..., description="meters, ego left")
    w: float = Field(..., gt=0.0, description="width in meters")
    l: float = Field(..., gt=0.0, description="length in meters")
    yaw: float = Field(..., description="radians in (-pi, pi]")
    cls: int = Field(..., ge=0, description="class id")

    @field_validator("yaw")
    @classmethod
    def check_yaw(cls, v: float) -> float:
        if not -math.pi < v <= math.pi:
            raise ValueError("yaw must lie in (-pi, pi]")
        return v

    @property
    def diagonal(self) -> float:
        return math.hypot(self.w, self.l)


class SceneGT(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    boxes: Tuple[Box, ...] = ()


class Detection(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    x: float
    y: float
    w: float = Field(..., gt=0.0)
    l: float = Field(..., gt=0.0)
    yaw: float
    cls: int = Field(..., ge=0)
    score: float = Field(..., gt=0.0, lt=1.0)


class SizePrior(BaseModel):
    """Uniform width/length ranges for one class"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    width: Tuple[float, float]
    length: Tuple[float, float]

    @model_validator(mode="after")
    def check_ranges(self):
        for lo, hi in (self.width, self.length):
            if not 0.0 < lo <= hi:
                raise ValueError("size ranges need 0 < lo <= hi")
        return self


DEFAULT_SIZE_PRIORS = (
    SizePrior(width=(1.6, 2.0), length=(3.6, 4.6)),
    SizePrior(width=(0.8, 1.2), length=(1.2, 2.0)),
)


class RigSpec(BaseModel):
    """Desk camera rig: identical pinholes on a horizontal ring"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_cameras: int = Field(default=4, ge=1)
    fov_deg: float = Field(default=100.0, gt=0.0, lt=180.0)
    headings_deg: Optional[Tuple[float, ...]] = Field(
        default=None, description="defaults to evenly spaced headings starting at 0")
    mount_height: float = Field(default=1.0, description="camera height above ground, meters")
    image_width: int = Field(default=64, ge=4)
    image_height: int = Field(default=32, ge=4)

    @model_validator(mode="after")
    def check_headings(self):
        if self.headings_deg is not None and len(self.headings_deg) != self.n_cameras:
            raise ValueError("headings_deg needs one entry per camera")
        return self

    def headings(self) -> List[float]:
        if self.headings_deg is not None:
            return list(self.headings_deg)
        return [360.0 * k / self.n_cameras for k in range(self.n_cameras)]


class SceneSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int
    min_objects: int = Field(default=1, ge=0)
    max_objects: int = Field(default=4, ge=0)
    extent: float = Field(..., gt=0.0)
    n_classes: int = Field(default=2, ge=1)
    size_priors: Tuple[SizePrior, ...] = DEFAULT_SIZE_PRIORS
    min_range: float = Field(default=1.5, ge=0.0, description="closest object center to the ego origin")
    max_attempts: int = Field(default=200, ge=1, description="rejection budget per object")
    rig: RigSpec = RigSpec()

    @model_validator(mode="after")
    def check_counts(self):
        if self.min_objects > self.max_objects:
            raise ValueError("min_objects exceeds max_objects")
        if len(self.size_priors) < self.n_classes:
            raise ValueError("one size prior per class is required")
        return self

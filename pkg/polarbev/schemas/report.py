import math
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field


class MetricsReport(BaseModel):
    """Detection quality at one BEV resolution"""

    model_config = ConfigDict(extra="forbid")

    mAP: float = Field(..., ge=0.0, le=1.0)
    mATE: float = Field(..., ge=0.0, description="meters")
    mASE: float = Field(..., ge=0.0, le=1.0)
    mAOE: float = Field(..., ge=0.0, le=math.pi, description="radians")
    nds3: float = Field(..., ge=0.0, le=1.0, description="NDS over the three implemented TP errors")
    nds5: Optional[float] = Field(default=None, description="five-error NDS, only with supplied mAVE/mAAE")
    per_class_ap: Dict[str, float] = Field(default_factory=dict)
    excluded_classes: List[int] = Field(default_factory=list, description="classes without ground truth")
    thresholds: List[float] = Field(default_factory=list, description="center-distance thresholds, meters")


class ResolutionResult(BaseModel):
    resolution: int
    metrics: MetricsReport


class LatencyStats(BaseModel):
    resolution: int
    frames: int = Field(..., ge=1)
    median_ms: float
    p90_ms: float


class RunReport(BaseModel):
    """Deterministic outcome of a run; wall-clock figures live in TimingReport"""

    model_config = ConfigDict(extra="forbid")

    command: str
    version: str
    seed: int
    config: dict
    config_hash: str
    data_hash: Optional[str] = None
    loss_curve: List[float] = Field(default_factory=list)
    results: List[ResolutionResult] = Field(default_factory=list)
    notes: List[str] = Field(default_factory=list)


class TimingReport(BaseModel):
    version: str
    latency: List[LatencyStats] = Field(default_factory=list)


class AblationRow(BaseModel):
    use_cpbt: bool
    use_mbie: bool
    mAP: float
    nds3: float
    data_hash: str


class AblationTable(BaseModel):
    version: str
    seed: int
    resolution: int
    rows: List[AblationRow]
    monotone: bool


class ComparisonRow(BaseModel):
    resolution: int
    polar_mAP: float
    baseline_mAP: float
    polar_drop: float = Field(..., description="relative mAP drop against the polar native mAP")
    baseline_drop: float


class ComparisonTable(BaseModel):
    version: str
    seed: int
    native_resolution: int
    polar_native_mAP: float
    baseline_native_mAP: float
    rows: List[ComparisonRow]

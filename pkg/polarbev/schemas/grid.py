from pydantic import BaseModel, ConfigDict, Field, model_validator


class PolarGridSpec(BaseModel):
    """Polar BEV grid: azimuth over [0, 2π), range over [sigma_min, sigma_max]"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    azimuth_bins: int = Field(..., ge=4, description="A_p")
    radial_bins: int = Field(..., ge=2, description="R_p")
    sigma_min: float = Field(default=0.0, ge=0.0, description="meters")
    sigma_max: float = Field(..., gt=0.0, description="meters")

    @model_validator(mode="after")
    def check_range(self):
        if not self.sigma_min < self.sigma_max:
            raise ValueError("sigma_min must be below sigma_max")
        return self


class CartesianGridSpec(BaseModel):
    """Square-extent Cartesian BEV grid over [-L, L]²; rows follow ego x, columns ego y"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    height: int = Field(..., ge=2, description="rows (ego x)")
    width: int = Field(..., ge=2, description="columns (ego y)")
    extent: float = Field(..., gt=0.0, description="half side L in meters")

    @classmethod
    def square(cls, resolution: int, extent: float) -> "CartesianGridSpec":
        return cls(height=resolution, width=resolution, extent=extent)

    @property
    def cell_x(self) -> float:
        return 2.0 * self.extent / self.height

    @property
    def cell_y(self) -> float:
        return 2.0 * self.extent / self.width

"""Exception hierarchy shared by every polarbev module.

Each error carries a machine-readable ``code`` and a human ``detail`` so the
CLI can turn any failure into a JSON error object.
"""
from typing import Any


class PolarBevError(Exception):
    """Base class for all polarbev errors"""

    code = "polarbev_error"
    exit_code = 1

    def __init__(self, detail: str, **context: Any):
        super().__init__(detail)
        self.detail = detail
        self.context = context

    def to_dict(self) -> dict[str, Any]:
        payload: dict[str, Any] = {"error": self.code, "detail": self.detail}
        if self.context:
            payload["context"] = {k: _jsonable(v) for k, v in self.context.items()}
        return payload


class ConfigurationError(PolarBevError, ValueError):
    """Invalid configuration, spec or parameter shape"""

    code = "configuration_error"
    exit_code = 2


class DimensionError(PolarBevError, ValueError):
    """Tensor extents do not agree"""

    code = "dimension_error"


class NumericError(PolarBevError, ArithmeticError):
    """NaN or Inf reached a place that requires finite values"""

    code = "numeric_error"


class BehindCameraError(PolarBevError, ValueError):
    """Point has non-positive depth in the camera frame"""

    code = "behind_camera"


class ContractViolation(PolarBevError, ValueError):
    """Caller broke an operation precondition"""

    code = "contract_violation"


class GenerationError(PolarBevError):
    """Synthetic scene could not be generated within its rejection budget"""

    code = "generation_error"


class TrainingError(PolarBevError):
    """Training aborted (non-finite loss)"""

    code = "training_error"


class CheckpointError(PolarBevError):
    """Checkpoint missing, corrupt or inconsistent with its config"""

    code = "checkpoint_error"


def _jsonable(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return str(value)

import json
import logging
import sys
import traceback
from typing import Optional, Sequence

from pydantic import BaseModel, ValidationError

from polarbev.api.api import command_router
from polarbev.core.errors import ConfigurationError, PolarBevError
from polarbev.core.settings import configure_logging, get_settings

logger = logging.getLogger("polarbev")


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")
    sys.stdout.flush()


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command; errors become a JSON object on stdout and a non-zero exit code"""
    argv = list(sys.argv[1:] if argv is None else argv)
    configure_logging()
    request_info = {
        "argv": argv,
        "env": get_settings().env,
    }
    try:
        command, result = command_router.dispatch(argv)
    except ValidationError as e:
        error = ConfigurationError("config validation failed",
                                   errors=[f"{'.'.join(map(str, err['loc']))}: {err['msg']}" for err in e.errors()])
        logger.error(f"Command rejected\nRequest: {json.dumps(request_info, indent=2)}\n"
                     f"Error: {json.dumps(error.to_dict())}\n")
        _emit(error.to_dict())
        return error.exit_code
    except PolarBevError as e:
        logger.error(f"Command failed\nRequest: {json.dumps(request_info, indent=2)}\n"
                     f"Error: {json.dumps(e.to_dict())}\n")
        _emit(e.to_dict())
        return e.exit_code
    except Exception as e:
        logger.error(
            f"Command failed with exception\n"
            f"Request: {json.dumps(request_info, indent=2)}\n"
            f"Error: {str(e)}\n"
            f"Traceback: {traceback.format_exc()}"
        )
        _emit({"error": "internal_error", "detail": str(e)})
        return 1

    if isinstance(result, BaseModel):
        _emit({"command": command, "result": result.model_dump(mode="json")})
    return 0


if __name__ == "__main__":
    sys.exit(main())

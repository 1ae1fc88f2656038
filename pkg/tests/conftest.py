import json
import os
from pathlib import Path

import numpy as np
import pytest

# test environment before the package reads its settings
os.environ["POLARBEV_ENV"] = "test"

from polarbev.core.settings import get_settings  # noqa: E402
from polarbev.geometry.camgeom import build_rig  # noqa: E402
from polarbev.schemas.config import ExperimentConfig  # noqa: E402

GOLDEN_DIR = Path(__file__).parent / "golden"

TINY_CONFIG = {
    "seed": 7,
    "extent": 8.0,
    "image_width": 32,
    "image_height": 16,
    "patch_size": 4,
    "azimuth_bins": 16,
    "radial_bins": 6,
    "channels": 8,
    "depth_bins": 4,
    "cpbt_heads": 2,
    "mbie_scale_factors": [0.5, 1.0],
    "mbie_heads": 2,
    "mbie_points": 2,
    "max_objects": 2,
    "train_scenes": 4,
    "eval_scenes": 2,
    "train_resolution": 8,
    "eval_resolutions": [8, 12, 16],
    "max_detections": 16,
    "epochs": 1,
    "batch_size": 2,
}


def pytest_addoption(parser):
    parser.addoption("--update-golden", action="store_true", default=False,
                     help="rewrite tests/golden/ from the current outputs")


def pytest_collection_modifyitems(config, items):
    get_settings.cache_clear()
    if get_settings().run_slow:
        return
    skip_slow = pytest.mark.skip(reason="set POLARBEV_RUN_SLOW=1 to run acceptance experiments")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tiny_config():
    """Small enough for a full forward/backward in well under a second"""
    return ExperimentConfig.model_validate(TINY_CONFIG)


@pytest.fixture
def tiny_rig(tiny_config):
    return build_rig(tiny_config.rig_spec())


@pytest.fixture
def config_file(tmp_path, tiny_config):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(tiny_config.model_dump(mode="json")))
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class GoldenStore:
    """JSON values pinned under one directory; a missing file fails unless recording"""

    def __init__(self, directory: Path, update: bool = False):
        self.directory = directory
        self.update = update

    def check(self, name, value):
        path = self.directory / f"{name}.json"
        if self.update:
            self.directory.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(value, indent=2, sort_keys=True) + "\n")
            return value
        if not path.exists():
            pytest.fail(f"golden value {path.name} is missing; record it with pytest --update-golden")
        return json.loads(path.read_text())


@pytest.fixture
def golden(request):
    """Compare a JSON-able value with tests/golden/<name>.json"""
    update = request.config.getoption("--update-golden") or get_settings().update_golden
    return GoldenStore(GOLDEN_DIR, update).check

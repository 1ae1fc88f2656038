"""Checkpoint persistence: canonical JSON so save -> load -> save is byte-identical"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict

import numpy as np
from pydantic import ValidationError

from polarbev.core.errors import CheckpointError
from polarbev.models.network import PolarBevNet
from polarbev.schemas.config import ExperimentConfig

CHECKPOINT_FORMAT = "polarbev-checkpoint/1"

logger = logging.getLogger("polarbev.checkpoints")


@dataclass
class Checkpoint:
    config: ExperimentConfig
    state: Dict[str, np.ndarray]
    version: str
    meta: Dict[str, Any] = field(default_factory=dict)

    def network(self) -> PolarBevNet:
        """Network for this checkpoint's config with its parameters loaded"""
        net = PolarBevNet(self.config)
        net.load(self.state)
        return net


def encode_checkpoint(ckpt: Checkpoint) -> str:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": ckpt.version,
        "config": ckpt.config.model_dump(mode="json"),
        "config_hash": ckpt.config.config_hash(),
        "meta": ckpt.meta,
        "params": {
            name: {"shape": list(value.shape), "data": np.asarray(value, dtype=np.float64).ravel().tolist()}
            for name, value in ckpt.state.items()
        },
    }
    # floats are written with repr, which round-trips exactly
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False)


def decode_checkpoint(text: str) -> Checkpoint:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"checkpoint is not valid JSON: {e.msg}")
    if not isinstance(raw, dict) or raw.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError("unknown checkpoint format", found=str(raw.get("format")) if isinstance(raw, dict) else None)
    try:
        config = ExperimentConfig.model_validate(raw["config"])
        params = raw["params"]
        version = str(raw["version"])
        stored_hash = raw["config_hash"]
    except KeyError as e:
        raise CheckpointError(f"checkpoint lacks field {e.args[0]!r}")
    except ValidationError as e:
        raise CheckpointError("checkpoint config does not validate", errors=e.error_count())
    if stored_hash != config.config_hash():
        raise CheckpointError("config hash mismatch", stored=stored_hash, computed=config.config_hash())
    state = {}
    for name, entry in params.items():
        data = np.asarray(entry["data"], dtype=np.float64)
        shape = tuple(entry["shape"])
        if data.size != int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError("parameter data does not fill its shape", name=name, shape=shape)
        state[name] = data.reshape(shape)
    return Checkpoint(config=config, state=state, version=version, meta=dict(raw.get("meta", {})))


def save_checkpoint(path: Path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(encode_checkpoint(ckpt), encoding="utf-8")
    logger.info(json.dumps({"event": "checkpoint_saved", "path": str(path),
                            "config_hash": ckpt.config.config_hash()}))
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise CheckpointError("checkpoint file not found", path=str(path))
    except OSError as e:
        raise CheckpointError(f"checkpoint file cannot be read: {e.strerror}", path=str(path))
    return decode_checkpoint(text)


def checkpoint_of(net: PolarBevNet, version: str, **meta: Any) -> Checkpoint:
    return Checkpoint(config=net.config, state=net.state(), version=version, meta=meta)

"""Deterministic synthetic scenes and a flat-shaded multi-view renderer"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from PIL import Image

from polarbev.core.errors import ContractViolation, GenerationError
from polarbev.geometry.camgeom import CameraRig, project_to_image, to_camera_frame
from polarbev.schemas.config import EVAL_SCENE_OFFSET, ExperimentConfig
from polarbev.schemas.scene import Box, SceneGT, SceneSpec

logger = logging.getLogger("polarbev.synthscene")

BACKGROUND = 0.5
OBJECT_HEIGHT = 1.5
NEAR_PLANE = 0.05
CENTER_FRACTION = 0.9
CLASS_COLORS = (
    (0.9, 0.2, 0.2),
    (0.2, 0.3, 0.9),
    (0.2, 0.8, 0.3),
    (0.9, 0.8, 0.1),
)


@dataclass(frozen=True)
class SceneSample:
    index: int
    scene: SceneGT
    images: Tuple[np.ndarray, ...]


def gen_scene(spec: SceneSpec, index: int) -> SceneGT:
    """Counted-rejection sampling of non-overlapping boxes, a pure function of (seed, index)"""
    rng = np.random.default_rng([spec.seed, index])
    n_objects = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    half = CENTER_FRACTION * spec.extent
    boxes: List[Box] = []
    for _ in range(n_objects):
        cls = int(rng.integers(spec.n_classes))
        prior = spec.size_priors[cls]
        w = float(rng.uniform(*prior.width))
        l = float(rng.uniform(*prior.length))
        yaw = float(rng.uniform(-math.pi, math.pi))
        if yaw <= -math.pi:
            yaw = math.pi
        diag = math.hypot(w, l)
        for _attempt in range(spec.max_attempts):
            x, y = (float(v) for v in rng.uniform(-half, half, size=2))
            if math.hypot(x, y) < spec.min_range:
                continue
            if all(math.hypot(x - b.x, y - b.y) >= (diag + b.diagonal) / 2.0 for b in boxes):
                boxes.append(Box(x=x, y=y, w=w, l=l, yaw=yaw, cls=cls))
                break
        else:
            raise GenerationError("rejection budget exhausted", seed=spec.seed, index=index,
                                  placed=len(boxes))
    return SceneGT(boxes=tuple(boxes))


def box_corners(box: Box, z: float) -> np.ndarray:
    """Four BEV corners of a box at height z, [4, 3]"""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    local = np.array([[1, 1], [1, -1], [-1, -1], [-1, 1]], dtype=np.float64) * [box.l / 2, box.w / 2]
    xy = local @ np.array([[c, s], [-s, c]]) + [box.x, box.y]
    return np.column_stack([xy, np.full(4, z)])


def class_color(cls: int) -> np.ndarray:
    return np.asarray(CLASS_COLORS[cls % len(CLASS_COLORS)])


def render_views(scene: SceneGT, rig: CameraRig, image_size: Tuple[int, int] | None = None) -> List[np.ndarray]:
    """One [H, W, 3] image per camera; painter's order far to near over mid-gray"""
    width, height = image_size or rig.image_size
    corners = [np.vstack([box_corners(b, 0.0), box_corners(b, OBJECT_HEIGHT)]) for b in scene.boxes]
    images = []
    for cam in rig.cameras:
        img = np.full((height, width, 3), BACKGROUND)
        drawable = []
        for box, pts in zip(scene.boxes, corners):
            depths = np.array([to_camera_frame(p, cam)[2] for p in pts])
            if (depths <= NEAR_PLANE).any():
                continue
            center_depth = float(to_camera_frame([box.x, box.y, OBJECT_HEIGHT / 2], cam)[2])
            drawable.append((center_depth, box, pts))
        drawable.sort(key=lambda item: -item[0])
        for depth, box, pts in drawable:
            uv = np.array([project_to_image(p, cam)[:2] for p in pts])
            u0 = max(0, int(math.ceil(uv[:, 0].min() - 0.5)))
            u1 = min(width - 1, int(math.floor(uv[:, 0].max() - 0.5)))
            v0 = max(0, int(math.ceil(uv[:, 1].min() - 0.5)))
            v1 = min(height - 1, int(math.floor(uv[:, 1].max() - 0.5)))
            if u0 > u1 or v0 > v1:
                continue
            img[v0:v1 + 1, u0:u1 + 1] = class_color(box.cls) * min(1.0, 2.0 / depth)
        images.append(img)
    return images


def dump_views(images: Sequence[np.ndarray], directory: Path, prefix: str) -> List[Path]:
    """Write views as 8-bit PNG files for inspection"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, img in enumerate(images):
        path = directory / f"{prefix}_cam{k}.png"
        Image.fromarray(np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)).save(path)
        paths.append(path)
    return paths


def build_dataset(config: ExperimentConfig, split: str, rig: CameraRig) -> List[SceneSample]:
    """Train indices start at 0, eval indices at EVAL_SCENE_OFFSET; failed scenes are skipped"""
    if split == "train":
        start, count = 0, config.train_scenes
    elif split == "eval":
        start, count = EVAL_SCENE_OFFSET, config.eval_scenes
    else:
        raise ContractViolation(f"unknown split {split!r}", split=split)
    spec = config.scene_spec()
    samples = []
    for index in range(start, start + count):
        try:
            scene = gen_scene(spec, index)
        except GenerationError as e:
            logger.warning(json.dumps({"event": "scene_skipped", "index": index, **e.to_dict()}))
            continue
        samples.append(SceneSample(index, scene, tuple(render_views(scene, rig))))
    return samples


def dataset_hash(samples: Sequence[SceneSample]) -> str:
    digest = hashlib.sha256()
    for sample in samples:
        digest.update(str(sample.index).encode())
        digest.update(sample.scene.model_dump_json().encode())
        for img in sample.images:
            digest.update(np.ascontiguousarray(img).tobytes())
    return digest.hexdigest()

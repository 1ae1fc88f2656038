"""Image encoder: non-overlapping patch embedding, one linear map per patch"""
from __future__ import annotations

import numpy as np

from polarbev.core import numcore as nc
from polarbev.core.errors import DimensionError
from polarbev.core.numcore import Tensor
from polarbev.models.params import Linear


def patchify(image: np.ndarray, patch: int) -> np.ndarray:
    """[H, W, 3] -> [H/p, W/p, p·p·3]"""
    image = np.asarray(image, dtype=np.float64)
    h, w, c = image.shape
    if h % patch or w % patch:
        raise DimensionError("image size is not a multiple of the patch size",
                             shape=image.shape, patch=patch)
    hf, wf = h // patch, w // patch
    return image.reshape(hf, patch, wf, patch, c).transpose(0, 2, 1, 3, 4).reshape(hf, wf, patch * patch * c)


def init_encoder(rng: np.random.Generator, patch: int, channels: int) -> Linear:
    return Linear.init(rng, patch * patch * 3, channels)


def encode_image(image: np.ndarray, params: Linear, patch: int) -> Tensor:
    """Feature map [H/p, W/p, C]; feature column c spans pixel columns [c·p, (c+1)·p)"""
    return nc.linear(patchify(image, patch), params.W, params.b)

"""Central finite-difference check of the analytic backward passes"""
from __future__ import annotations

import logging
import math
from typing import Callable, List, Sequence

import numpy as np
from pydantic import BaseModel, Field

from polarbev.core.errors import ConfigurationError, NumericError
from polarbev.core.numcore import Tape, Tensor

logger = logging.getLogger("polarbev.gradcheck")

REL_DENOMINATOR_FLOOR = 1e-8


class GradCheckReport(BaseModel):
    """Worst disagreement between analytic and numeric gradients"""

    max_abs_err: float = Field(..., ge=0.0)
    max_rel_err: float = Field(..., ge=0.0)
    worst_index: int = Field(..., ge=0, description="flat index over all checked parameters")
    checked: int = Field(..., ge=0, description="number of coordinates checked")


def _scalar(loss: Tensor) -> float:
    value = loss.item()
    if not math.isfinite(value):
        raise NumericError("non-finite loss under finite differences")
    return value


def _coordinates(params: Sequence[Tensor], rng: np.random.Generator, max_coords_per_param: int | None,
                 n_points: int | None) -> List[np.ndarray]:
    """Flat coordinates to check, per parameter"""
    sizes = [p.size for p in params]
    if n_points is not None:
        total = sum(sizes)
        chosen = np.sort(rng.choice(total, size=min(n_points, total), replace=False))
        bounds = np.cumsum([0] + sizes)
        return [chosen[(chosen >= lo) & (chosen < hi)] - lo for lo, hi in zip(bounds[:-1], bounds[1:])]
    coords = []
    for size in sizes:
        if max_coords_per_param is not None and size > max_coords_per_param:
            coords.append(np.sort(rng.choice(size, size=max_coords_per_param, replace=False)))
        else:
            coords.append(np.arange(size))
    return coords


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords_per_param: int | None = None,
    seed: int = 0,
    n_points: int | None = None,
) -> GradCheckReport:
    """Compare tape gradients of ``f`` with (f(θ+εe) − f(θ−εe)) / 2ε.

    ``f`` takes no arguments and reads ``params`` by closure. Parameters are
    perturbed in place and restored. With ``max_coords_per_param`` only a
    seeded random subset of each large parameter is checked. ``n_points``
    instead draws that many seeded coordinates over all parameters together.
    """
    if eps <= 0:
        raise ConfigurationError("eps must be positive", eps=eps)
    if n_points is not None and n_points < 1:
        raise ConfigurationError("n_points must be positive", n_points=n_points)
    params = list(params)
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f()
    _scalar(loss)
    tape.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    max_abs, max_rel, worst, checked, offset = 0.0, 0.0, 0, 0, 0
    for p, grad, coords in zip(params, analytic, _coordinates(params, rng, max_coords_per_param, n_points)):
        for k in coords:
            idx = np.unravel_index(int(k), p.shape)
            original = p.data[idx]
            p.data[idx] = original + eps
            plus = _scalar(f())
            p.data[idx] = original - eps
            minus = _scalar(f())
            p.data[idx] = original
            numeric = (plus - minus) / (2.0 * eps)
            a = float(grad[idx])
            abs_err = abs(a - numeric)
            rel_err = abs_err / max(abs(a), abs(numeric), REL_DENOMINATOR_FLOOR)
            if rel_err > max_rel or (rel_err == max_rel and abs_err > max_abs):
                worst = offset + int(k)
            max_abs = max(max_abs, abs_err)
            max_rel = max(max_rel, rel_err)
            checked += 1
        offset += p.size
        p.zero_grad()

    report = GradCheckReport(max_abs_err=max_abs, max_rel_err=max_rel,
                             worst_index=worst, checked=checked)
    logger.debug("grad check %s", report.model_dump_json())
    return report

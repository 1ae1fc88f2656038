"""Run a network over a scene set: detections, metrics and per-frame latency"""
from __future__ import annotations

import json
import logging
import time
from typing import List, Sequence, Tuple

import numpy as np

from polarbev.core.errors import ConfigurationError
from polarbev.data.synthscene import SceneSample
from polarbev.evaluation.metrics import evaluate_scenes
from polarbev.models.network import PolarBevNet
from polarbev.schemas.config import MIN_RESOLUTION
from polarbev.schemas.report import LatencyStats, MetricsReport, ResolutionResult
from polarbev.schemas.scene import Detection

logger = logging.getLogger("polarbev.evaluation")


def check_resolutions(resolutions: Sequence[int]) -> List[int]:
    resolutions = [int(r) for r in resolutions]
    if not resolutions:
        raise ConfigurationError("at least one resolution is required")
    low = [r for r in resolutions if r < MIN_RESOLUTION]
    if low:
        raise ConfigurationError(f"resolutions must be >= {MIN_RESOLUTION}", resolutions=low)
    return resolutions


def latency_stats(resolution: int, seconds: Sequence[float]) -> LatencyStats:
    ms = np.asarray(seconds, dtype=np.float64) * 1e3
    return LatencyStats(resolution=resolution, frames=len(ms), median_ms=float(np.median(ms)),
                        p90_ms=float(np.percentile(ms, 90)))


def detect_scenes(net: PolarBevNet, samples: Sequence[SceneSample],
                  resolution: int) -> Tuple[List[List[Detection]], List[float]]:
    """Detections per scene, in scene order, with the wall-clock time of each frame"""
    detections, seconds = [], []
    for sample in samples:
        start = time.perf_counter()
        detections.append(net.detect(sample.images, resolution))
        seconds.append(time.perf_counter() - start)
    return detections, seconds


def evaluate_network(net: PolarBevNet, samples: Sequence[SceneSample],
                     resolution: int) -> Tuple[MetricsReport, LatencyStats]:
    dets, seconds = detect_scenes(net, samples, resolution)
    cfg = net.config
    metrics = evaluate_scenes(dets, [s.scene for s in samples], cfg.extent, cfg.n_classes)
    logger.info(json.dumps({"event": "evaluated", "resolution": resolution, "scenes": len(samples),
                            "mAP": metrics.mAP, "nds3": metrics.nds3}))
    return metrics, latency_stats(resolution, seconds)


def evaluate_resolutions(net: PolarBevNet, samples: Sequence[SceneSample],
                         resolutions: Sequence[int]) -> Tuple[List[ResolutionResult], List[LatencyStats]]:
    results, timings = [], []
    for res in check_resolutions(resolutions):
        metrics, timing = evaluate_network(net, samples, res)
        results.append(ResolutionResult(resolution=res, metrics=metrics))
        timings.append(timing)
    return results, timings

"""bench: wall-clock inference latency per BEV resolution"""
from __future__ import annotations

import argparse
import json
import logging
import time
from pathlib import Path
from typing import Sequence

from polarbev.api.routing import CommandRouter, argument, parse_resolutions
from polarbev.core.errors import ConfigurationError
from polarbev.core.settings import describe_version
from polarbev.data.synthscene import gen_scene, render_views
from polarbev.db.checkpoints import load_checkpoint
from polarbev.db.reports import write_timing
from polarbev.evaluation.runner import check_resolutions, latency_stats
from polarbev.models.network import PolarBevNet
from polarbev.schemas.config import EVAL_SCENE_OFFSET
from polarbev.schemas.report import TimingReport

router = CommandRouter()

logger = logging.getLogger("polarbev.bench")

MIN_FRAMES = 50
DEFAULT_WARMUP = 5


def bench(net: PolarBevNet, resolutions: Sequence[int], frames: int = MIN_FRAMES,
          warmup: int = DEFAULT_WARMUP) -> TimingReport:
    """Median and p90 of full-pipeline inference on one fixed evaluation scene"""
    if frames < MIN_FRAMES:
        raise ConfigurationError(f"at least {MIN_FRAMES} timed frames are required", frames=frames)
    if warmup < 0:
        raise ConfigurationError("warmup must be non-negative", warmup=warmup)
    scene = gen_scene(net.config.scene_spec(), EVAL_SCENE_OFFSET)
    images = render_views(scene, net.rig)
    rows = []
    for res in check_resolutions(resolutions):
        for _ in range(warmup):
            net.detect(images, res)
        seconds = []
        for _ in range(frames):
            start = time.perf_counter()
            net.detect(images, res)
            seconds.append(time.perf_counter() - start)
        rows.append(latency_stats(res, seconds))
        logger.info(json.dumps({"event": "bench", **rows[-1].model_dump()}))
    return TimingReport(version=describe_version(), latency=rows)


@router.command(
    "bench",
    summary="Time inference at several BEV resolutions",
    arguments=[
        argument("--ckpt", type=Path, required=True),
        argument("--res", type=parse_resolutions, required=True),
        argument("--frames", type=int, default=MIN_FRAMES),
        argument("--warmup", type=int, default=DEFAULT_WARMUP),
        argument("--report-dir", type=Path, default=None),
    ],
)
def bench_command(args: argparse.Namespace) -> TimingReport:
    net = load_checkpoint(args.ckpt).network()
    timing = bench(net, args.res, args.frames, args.warmup)
    if args.report_dir is not None:
        write_timing(args.report_dir, timing)
    return timing

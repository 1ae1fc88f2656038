"""train: end-to-end optimisation on synthetic scenes, then a checkpoint"""
from __future__ import annotations

import argparse
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from polarbev.api.routing import CommandRouter, argument
from polarbev.core import numcore as nc
from polarbev.core.errors import NumericError, TrainingError
from polarbev.core.settings import describe_version
from polarbev.data.synthscene import SceneSample, build_dataset, dataset_hash, dump_views
from polarbev.db.checkpoints import Checkpoint, checkpoint_of, save_checkpoint
from polarbev.db.reports import write_run_report
from polarbev.evaluation.runner import evaluate_resolutions
from polarbev.models.network import PolarBevNet
from polarbev.models.optim import Adam
from polarbev.schemas.config import ExperimentConfig, load_config
from polarbev.schemas.report import RunReport

router = CommandRouter()

logger = logging.getLogger("polarbev.train")

SHUFFLE_STREAM = 0xDA7A


@dataclass
class TrainingRun:
    net: PolarBevNet
    loss_curve: List[float]
    data_hash: str

    def checkpoint(self, version: str) -> Checkpoint:
        return checkpoint_of(self.net, version, loss_curve=self.loss_curve, data_hash=self.data_hash)


def train_step(net: PolarBevNet, optimizer: Adam, batch: Sequence[SceneSample], step: int) -> float:
    """One optimizer step over a batch; per-sample tapes keep memory flat"""
    optimizer.zero_grad()
    total = 0.0
    for sample in batch:
        with nc.Tape() as tape:
            try:
                terms = net.loss(sample.images, sample.scene)
            except NumericError as e:
                raise TrainingError("non-finite value in the forward pass", step=step,
                                    scene=sample.index, cause=e.detail)
            value = terms.total.item()
            if not math.isfinite(value):
                raise TrainingError("non-finite loss", step=step, scene=sample.index,
                                    focal=terms.focal.item(), regression=terms.regression.item())
            tape.backward(nc.scale(terms.total, 1.0 / len(batch)))
        total += value
    try:
        optimizer.step()
    except NumericError as e:
        raise TrainingError("parameter update diverged", step=step, cause=e.detail)
    return total / len(batch)


def train(config: ExperimentConfig, samples: Optional[Sequence[SceneSample]] = None,
          net: Optional[PolarBevNet] = None) -> TrainingRun:
    """Deterministic given the config seed; the loss curve holds one mean per epoch"""
    net = net or PolarBevNet(config)
    if samples is None:
        samples = build_dataset(config, "train", net.rig)
    samples = list(samples)
    optimizer = Adam(net.parameters(), lr=config.learning_rate, beta1=config.beta1,
                     beta2=config.beta2, eps=config.adam_eps)
    rng = np.random.default_rng([config.seed, SHUFFLE_STREAM])
    curve: List[float] = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(samples))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [samples[k] for k in order[start:start + config.batch_size]]
            losses.append(train_step(net, optimizer, batch, step) * len(batch))
            step += 1
        curve.append(float(sum(losses) / max(1, len(samples))))
        logger.info(json.dumps({"event": "epoch", "epoch": epoch, "steps": step, "loss": curve[-1]}))
    return TrainingRun(net=net, loss_curve=curve, data_hash=dataset_hash(samples))


@router.command(
    "train",
    summary="Train a network on synthetic scenes and write a checkpoint",
    arguments=[
        argument("--config", type=Path, required=True, help="flat JSON experiment config"),
        argument("--out", type=Path, required=True, help="checkpoint path"),
        argument("--report-dir", type=Path, default=None, help="write report.json and metrics.csv here"),
        argument("--dump-views", type=Path, default=None, help="write PNGs of the first training scene"),
    ],
)
def train_command(args: argparse.Namespace) -> RunReport:
    config = load_config(args.config)
    net = PolarBevNet(config)
    samples = build_dataset(config, "train", net.rig)
    if args.dump_views is not None and samples:
        dump_views(samples[0].images, args.dump_views, f"scene{samples[0].index}")
    run = train(config, samples, net)
    version = describe_version()
    save_checkpoint(args.out, run.checkpoint(version))
    # end-of-training evaluation at the head's native resolution
    results, _ = evaluate_resolutions(run.net, build_dataset(config, "eval", net.rig),
                                      [config.train_resolution])
    report = RunReport(
        command="train",
        version=version,
        seed=config.seed,
        config=config.model_dump(mode="json"),
        config_hash=config.config_hash(),
        data_hash=run.data_hash,
        loss_curve=run.loss_curve,
        results=results,
        notes=["AP uses 101 recall points without the nuScenes recall and precision floors",
               "nds3 averages the three implemented TP errors; nds5 needs supplied mAVE and mAAE"],
    )
    if args.report_dir is not None:
        write_run_report(args.report_dir, report)
    return report

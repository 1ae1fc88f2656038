"""ablate: neither module, +CPBT, +CPBT+MBIE on identical scenes"""
from __future__ import annotations

import argparse
from pathlib import Path
from typing import Optional

from polarbev.api.endpoints.train import train
from polarbev.api.routing import CommandRouter, argument
from polarbev.core.settings import describe_version
from polarbev.data.synthscene import build_dataset, dataset_hash
from polarbev.db.reports import write_ablation, write_warning
from polarbev.evaluation.runner import evaluate_network
from polarbev.geometry.camgeom import build_rig
from polarbev.schemas.config import ExperimentConfig, load_config
from polarbev.schemas.report import AblationRow, AblationTable

router = CommandRouter()

ABLATION_VARIANTS = (
    (False, False),
    (True, False),
    (True, True),
)


def ablate(config: ExperimentConfig, report_dir: Optional[Path] = None) -> AblationTable:
    rig = build_rig(config.rig_spec())
    samples = build_dataset(config, "train", rig)
    eval_samples = build_dataset(config, "eval", rig)
    data_hash = dataset_hash(samples)
    rows = []
    for use_cpbt, use_mbie in ABLATION_VARIANTS:
        run = train(config.variant(use_cpbt=use_cpbt, use_mbie=use_mbie), samples)
        metrics, _ = evaluate_network(run.net, eval_samples, config.train_resolution)
        rows.append(AblationRow(use_cpbt=use_cpbt, use_mbie=use_mbie, mAP=metrics.mAP,
                                nds3=metrics.nds3, data_hash=run.data_hash))
    monotone = all(a.mAP <= b.mAP for a, b in zip(rows, rows[1:]))
    if not monotone:
        write_warning(report_dir, "ablation_monotonicity",
                      {"mAP": [r.mAP for r in rows], "data_hash": data_hash})
    return AblationTable(version=describe_version(), seed=config.seed, resolution=config.train_resolution,
                         rows=rows, monotone=monotone)


@router.command(
    "ablate",
    summary="Ablate the polar view transformer and the multi-scale encoder",
    arguments=[
        argument("--config", type=Path, required=True),
        argument("--report-dir", type=Path, default=None),
    ],
)
def ablate_command(args: argparse.Namespace) -> AblationTable:
    table = ablate(load_config(args.config), args.report_dir)
    if args.report_dir is not None:
        write_ablation(args.report_dir, table)
    return table

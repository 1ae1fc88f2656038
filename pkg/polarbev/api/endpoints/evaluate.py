"""eval-multires and compare: one training, many deployment resolutions"""
from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path
from typing import Optional, Sequence, Tuple

from polarbev.api.endpoints.train import train
from polarbev.api.routing import CommandRouter, argument, parse_resolutions
from polarbev.core.settings import describe_version
from polarbev.data.synthscene import build_dataset
from polarbev.db.checkpoints import Checkpoint, load_checkpoint
from polarbev.db.reports import write_comparison, write_run_report, write_timing
from polarbev.evaluation.runner import check_resolutions, evaluate_network, evaluate_resolutions
from polarbev.models.network import PolarBevNet
from polarbev.schemas.config import ExperimentConfig, load_config
from polarbev.schemas.report import ComparisonRow, ComparisonTable, RunReport, TimingReport

router = CommandRouter()

logger = logging.getLogger("polarbev.evaluate")


def eval_multires(ckpt: Checkpoint, resolutions: Sequence[int],
                  baseline: bool = False) -> Tuple[RunReport, TimingReport]:
    """Evaluate one checkpoint at every requested resolution.

    With ``baseline`` the Cartesian-interpolation variant of the checkpoint's
    config is trained on the same scenes and evaluated instead, unless the
    checkpoint already holds that variant.
    """
    resolutions = check_resolutions(resolutions)
    config = ckpt.config
    notes = []
    data_hash = ckpt.meta.get("data_hash")
    loss_curve = list(ckpt.meta.get("loss_curve", []))
    if baseline and config.use_cpbt:
        config = config.variant(use_cpbt=False)
        run = train(config)
        net, data_hash, loss_curve = run.net, run.data_hash, run.loss_curve
        notes.append("baseline: Cartesian-interpolation variant trained on the checkpoint's scenes")
    else:
        net = ckpt.network()
    for res in resolutions:
        config.pyramid_resolutions(res)
    samples = build_dataset(config, "eval", net.rig)
    results, timings = evaluate_resolutions(net, samples, resolutions)
    version = describe_version()
    report = RunReport(
        command="eval-multires",
        version=version,
        seed=config.seed,
        config=config.model_dump(mode="json"),
        config_hash=config.config_hash(),
        data_hash=data_hash,
        loss_curve=loss_curve,
        results=results,
        notes=notes,
    )
    return report, TimingReport(version=version, latency=timings)


def relative_drop(native: float, value: float) -> float:
    """Fractional mAP loss against the native-resolution mAP; 0 when the native mAP is 0"""
    if native <= 0.0:
        return 0.0
    return (native - value) / native


def compare(config: ExperimentConfig, resolutions: Sequence[int]) -> ComparisonTable:
    """Train the polar model and the baseline on the same scenes; tabulate mAP drops"""
    resolutions = check_resolutions(resolutions)
    polar_cfg = config.variant(use_cpbt=True)
    base_cfg = config.variant(use_cpbt=False)
    polar_net = PolarBevNet(polar_cfg)
    samples = build_dataset(polar_cfg, "train", polar_net.rig)
    eval_samples = build_dataset(polar_cfg, "eval", polar_net.rig)
    native = config.train_resolution
    maps = {}
    for name, cfg, net in (("polar", polar_cfg, polar_net), ("baseline", base_cfg, None)):
        run = train(cfg, samples, net)
        maps[name] = {res: evaluate_network(run.net, eval_samples, res)[0].mAP
                      for res in [native, *resolutions]}
    rows = [
        ComparisonRow(
            resolution=res,
            polar_mAP=maps["polar"][res],
            baseline_mAP=maps["baseline"][res],
            polar_drop=relative_drop(maps["polar"][native], maps["polar"][res]),
            baseline_drop=relative_drop(maps["baseline"][native], maps["baseline"][res]),
        )
        for res in resolutions
    ]
    table = ComparisonTable(version=describe_version(), seed=config.seed, native_resolution=native,
                            polar_native_mAP=maps["polar"][native],
                            baseline_native_mAP=maps["baseline"][native], rows=rows)
    logger.info(json.dumps({"event": "compared", **table.model_dump(mode="json")}))
    return table


@router.command(
    "eval-multires",
    summary="Evaluate a checkpoint at several BEV resolutions",
    arguments=[
        argument("--ckpt", type=Path, required=True, help="checkpoint written by train"),
        argument("--res", type=parse_resolutions, default=None,
                 help="comma-separated resolutions (default: the config's eval_resolutions)"),
        argument("--baseline", action="store_true", help="evaluate the Cartesian-interpolation baseline"),
        argument("--report-dir", type=Path, default=None),
    ],
)
def eval_multires_command(args: argparse.Namespace) -> RunReport:
    ckpt = load_checkpoint(args.ckpt)
    report, timing = eval_multires(ckpt, args.res or ckpt.config.eval_resolutions, args.baseline)
    if args.report_dir is not None:
        write_run_report(args.report_dir, report)
        write_timing(args.report_dir, timing)
    return report


@router.command(
    "compare",
    summary="Train the polar model and the baseline, then compare their resolution drops",
    arguments=[
        argument("--config", type=Path, required=True),
        argument("--res", type=parse_resolutions, default=None),
        argument("--report-dir", type=Path, default=None),
    ],
)
def compare_command(args: argparse.Namespace) -> ComparisonTable:
    config = load_config(args.config)
    resolutions: Optional[Sequence[int]] = args.res
    if resolutions is None:
        resolutions = [r for r in config.eval_resolutions if r != config.train_resolution]
    table = compare(config, resolutions)
    if args.report_dir is not None:
        write_comparison(args.report_dir, table)
    return table

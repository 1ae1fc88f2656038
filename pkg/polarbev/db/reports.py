"""Report files: deterministic JSON and CSV, wall-clock timing kept apart"""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import List, Optional

import pandas as pd
from pydantic import BaseModel

from polarbev.schemas.report import AblationTable, ComparisonTable, RunReport, TimingReport

METRICS_COLUMNS = ["resolution", "mAP", "mATE", "mASE", "mAOE", "NDS3", "NDS5_if_available"]

logger = logging.getLogger("polarbev.reports")


def _write_json(path: Path, model: BaseModel) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model.model_dump(mode="json"), indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def metrics_frame(report: RunReport) -> pd.DataFrame:
    rows = [
        {
            "resolution": r.resolution,
            "mAP": r.metrics.mAP,
            "mATE": r.metrics.mATE,
            "mASE": r.metrics.mASE,
            "mAOE": r.metrics.mAOE,
            "NDS3": r.metrics.nds3,
            "NDS5_if_available": r.metrics.nds5,
        }
        for r in report.results
    ]
    return pd.DataFrame(rows, columns=METRICS_COLUMNS)


def write_run_report(directory: Path, report: RunReport) -> List[Path]:
    """``report.json`` plus ``metrics.csv`` with the fixed column order"""
    directory = Path(directory)
    paths = [_write_json(directory / "report.json", report)]
    csv_path = directory / "metrics.csv"
    metrics_frame(report).to_csv(csv_path, index=False, float_format="%.6f", na_rep="")
    paths.append(csv_path)
    logger.info(json.dumps({"event": "report_written", "command": report.command,
                            "paths": [str(p) for p in paths]}))
    return paths


def write_timing(directory: Path, timing: TimingReport) -> Path:
    return _write_json(Path(directory) / "timing.json", timing)


def write_ablation(directory: Path, table: AblationTable) -> List[Path]:
    directory = Path(directory)
    paths = [_write_json(directory / "ablation.json", table)]
    frame = pd.DataFrame([row.model_dump() for row in table.rows],
                         columns=["use_cpbt", "use_mbie", "mAP", "nds3", "data_hash"])
    frame.to_csv(directory / "ablation.csv", index=False, float_format="%.6f")
    paths.append(directory / "ablation.csv")
    return paths


def write_comparison(directory: Path, table: ComparisonTable) -> List[Path]:
    directory = Path(directory)
    paths = [_write_json(directory / "comparison.json", table)]
    frame = pd.DataFrame([row.model_dump() for row in table.rows],
                         columns=["resolution", "polar_mAP", "baseline_mAP", "polar_drop", "baseline_drop"])
    frame.to_csv(directory / "comparison.csv", index=False, float_format="%.6f")
    paths.append(directory / "comparison.csv")
    return paths


def write_warning(directory: Optional[Path], name: str, payload: dict) -> Optional[Path]:
    """Soft-check failures are logged and, with a report directory, kept as an artifact"""
    logger.warning(json.dumps({"event": "soft_check_failed", "check": name, **payload}))
    if directory is None:
        return None
    path = Path(directory) / f"warning_{name}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"check": name, **payload}, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path

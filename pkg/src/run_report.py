import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Union

import pandas as pd
from termcolor import colored

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["epoch", "train_ce", "val_ce", "val_acc", "seconds"]
MANIFEST_COLUMNS = ["path", "label", "split", "length"]


def _json_lines(df: pd.DataFrame) -> str:
    text = df.to_json(orient="records", lines=True, double_precision=15)
    return text if text.endswith("\n") else text + "\n"


def append_metrics(path: Union[str, Path], record: Dict[str, Any]) -> None:
    """Append one epoch record as a JSON line"""
    row = pd.DataFrame([{col: record.get(col) for col in METRIC_COLUMNS}])
    with open(path, "a", encoding="utf-8") as f:
        f.write(_json_lines(row))


def read_metrics(path: Union[str, Path]) -> pd.DataFrame:
    if not Path(path).exists() or Path(path).stat().st_size == 0:
        return pd.DataFrame(columns=METRIC_COLUMNS)
    return pd.read_json(path, lines=True)


def params_in_millions(count: int) -> float:
    return round(count / 1e6, 6)


def write_report(path: Union[str, Path], report: Dict[str, Any]) -> None:
    """
    Write the final run report as pretty JSON.

    Parameter counts are echoed in millions next to the exact values.
    """
    data = dict(report)
    for key in ("trainable_params", "total_params"):
        if key in data and data[key] is not None:
            data[f"{key}_m"] = params_in_millions(int(data[key]))
    if "total_params_m" in data:
        data["params_m"] = data["total_params_m"]
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False)
            f.write("\n")
        logger.info(f"Wrote report {path}")
    except Exception as e:
        logger.error(f"Error writing report {path}: {str(e)}")
        print(colored(f"❌ Error writing report: {str(e)}", "red"))
        raise


def write_manifest(path: Union[str, Path], records: List[Dict[str, Any]]) -> int:
    """Write manifest rows sorted by path; returns the row count"""
    df = pd.DataFrame(records, columns=MANIFEST_COLUMNS)
    df = df.sort_values("path", kind="mergesort").reset_index(drop=True)
    with open(path, "w", encoding="utf-8") as f:
        if len(df):
            f.write(_json_lines(df))
    logger.info(f"Wrote manifest {path} ({len(df)} rows)")
    return len(df)

import os
from pathlib import Path
from typing import Dict
import logging
from termcolor import colored

# Constants
MODEL_FILE = "model.qnn"
METRICS_FILE = "metrics.jsonl"
REPORT_FILE = "report.json"
EVAL_REPORT_FILE = "eval_report.json"
MANIFEST_FILE = "manifest.jsonl"

logger = logging.getLogger(__name__)

def ensure_run_dir(path: str) -> Path:
    """Create the run output directory (and parents) if needed"""
    try:
        run_dir = Path(path)
        if not run_dir.exists():
            os.makedirs(run_dir, mode=0o755, exist_ok=True)
            print(colored(f"✓ Created run directory at {run_dir}", "green"))
        elif not run_dir.is_dir():
            raise NotADirectoryError(f"{run_dir} exists and is not a directory")
        return run_dir

    except Exception as e:
        logger.error(f"Failed to ensure run directory: {str(e)}")
        print(colored(f"⚠️ Failed to ensure run directory: {str(e)}", "red"))
        raise

def artifact_paths(run_dir: str) -> Dict[str, Path]:
    """
    File locations of every artifact a run can write.

    Args:
        run_dir: Run output directory

    Returns:
        Dict mapping artifact kind (model, metrics, report, eval_report, manifest) to its path
    """
    run_dir = Path(run_dir)
    return {
        "model": run_dir / MODEL_FILE,
        "metrics": run_dir / METRICS_FILE,
        "report": run_dir / REPORT_FILE,
        "eval_report": run_dir / EVAL_REPORT_FILE,
        "manifest": run_dir / MANIFEST_FILE,
    }

def reset_metrics(run_dir: str) -> None:
    """Remove a previous metrics log so a rerun starts from an empty file"""
    metrics = artifact_paths(run_dir)["metrics"]
    if metrics.exists():
        metrics.unlink()
        logger.info(f"Removed previous metrics log {metrics}")

"""Model container: a zip archive with ``metadata.json`` and one ``.npy`` blob per tensor.

Entries are written in sorted order with a fixed timestamp, so the same
model always produces the same bytes.
"""
import io
import json
import logging
import zipfile
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import xxhash
from termcolor import colored

from src.errors import FormatError, InvalidArgumentError
from src.hybrid import HybridModel, ModelConfig, ModelKind, build_model

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
METADATA_ENTRY = "metadata.json"
TENSOR_DIR = "tensors/"
ZIP_TIMESTAMP = (1980, 1, 1, 0, 0, 0)
TENSOR_DTYPE = "<f8"


def _entry(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=ZIP_TIMESTAMP)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    return info


def _npy_bytes(tensor: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(tensor, dtype=TENSOR_DTYPE), allow_pickle=False)
    return buf.getvalue()


def model_metadata(model: HybridModel, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    tensors = model.named_tensors()
    return {
        "format_version": FORMAT_VERSION,
        "kind": model.kind.value,
        "config": model.config.model_dump(),
        "seed": model.seed,
        "freeze_mask": model.freeze_mask,
        "tensors": {path: list(t.shape) for path, t in sorted(tensors.items())},
        "extra": extra or {},
    }


def save_model(model: HybridModel, path: Union[str, Path], extra: Optional[Dict[str, Any]] = None) -> str:
    """Write the container and return its checksum."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        metadata = json.dumps(model_metadata(model, extra), indent=2, sort_keys=True)
        with zipfile.ZipFile(path, "w") as zf:
            zf.writestr(_entry(METADATA_ENTRY), metadata)
            for name, tensor in sorted(model.named_tensors().items()):
                zf.writestr(_entry(f"{TENSOR_DIR}{name}.npy"), _npy_bytes(tensor))
    except Exception as e:
        logger.error(f"Error saving model to {path}: {str(e)}")
        print(colored(f"❌ Error saving model: {str(e)}", "red"))
        raise
    digest = checksum(path)
    logger.info(f"Saved {model.kind.value} model to {path} ({digest})")
    return digest


def read_metadata(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    try:
        with zipfile.ZipFile(path, "r") as zf:
            metadata = json.loads(zf.read(METADATA_ENTRY).decode("utf-8"))
    except FileNotFoundError:
        raise
    except (zipfile.BadZipFile, KeyError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"not a model container: {e}", path=str(path))
    if metadata.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {metadata.get('format_version')}", path=str(path))
    return metadata


def load_model(path: Union[str, Path]) -> HybridModel:
    """Rebuild the model from its metadata and overwrite every tensor from the archive."""
    path = Path(path)
    metadata = read_metadata(path)
    try:
        model = build_model(
            ModelKind(metadata["kind"]),
            ModelConfig(**metadata["config"]),
            int(metadata["seed"]),
        )
        state = {}
        with zipfile.ZipFile(path, "r") as zf:
            for name in metadata["tensors"]:
                with zf.open(f"{TENSOR_DIR}{name}.npy") as f:
                    state[name] = np.load(io.BytesIO(f.read()), allow_pickle=False)
        model.load_state_dict(state)
        for component, flag in metadata["freeze_mask"].items():
            model.set_trainable(component, bool(flag))
    except (KeyError, ValueError, InvalidArgumentError) as e:
        logger.error(f"Malformed model container {path}: {str(e)}")
        raise FormatError(f"malformed model container: {e}", path=str(path))
    logger.info(f"Loaded {model.kind.value} model from {path}")
    return model


def checksum(obj: Union[HybridModel, str, Path], prefix: str = "") -> str:
    """xxhash64 of a container file, or of a model's tensors whose path starts with `prefix`."""
    h = xxhash.xxh64()
    if isinstance(obj, HybridModel):
        for name, tensor in sorted(obj.named_tensors().items()):
            if name.startswith(prefix):
                h.update(name.encode("utf-8"))
                h.update(np.ascontiguousarray(tensor, dtype=TENSOR_DTYPE).tobytes())
    else:
        with open(obj, "rb") as f:
            h.update(f.read())
    return h.hexdigest()

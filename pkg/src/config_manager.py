import logging
import os
from dataclasses import asdict, dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv
from termcolor import colored

from src.errors import InvalidArgumentError
from src.gradopt import DEFAULT_EPS, OptimizerKind
from src.noisesim import NoiseChannel, NoisePlacement, NoiseSpec

logger = logging.getLogger(__name__)

DEFAULT_LOG_FILE = "qnn_scr.log"
BASELINE_EPOCHS = 30
FINE_TUNE_EPOCHS = 15


class Regime(str, Enum):
    BASELINE_CNN_DNN = "baseline_cnn_dnn"
    CNN_QNN_SCRATCH = "cnn_qnn_scratch"
    CNN_QNN_2 = "cnn_qnn_2"
    CNN_QNN_3 = "cnn_qnn_3"

    @property
    def needs_source(self) -> bool:
        return self in (Regime.CNN_QNN_2, Regime.CNN_QNN_3)


class GradMethod(str, Enum):
    PARAMETER_SHIFT = "shift"
    FINITE_DIFF = "fd"


def default_epochs(regime: Regime) -> int:
    """Baselines train longer than the transfer fine-tuning regimes."""
    return FINE_TUNE_EPOCHS if Regime(regime).needs_source else BASELINE_EPOCHS


def parse_noise(text: Optional[str], placement: NoisePlacement = NoisePlacement.AFTER_EVERY_GATE) -> Optional[NoiseSpec]:
    """'depolarizing:0.01' -> NoiseSpec; None, '' or 'none' -> None."""
    if text is None or str(text).strip().lower() in ("", "none"):
        return None
    try:
        channel, prob = str(text).split(":", 1)
        return NoiseSpec(channel=NoiseChannel(channel.strip()), probability=float(prob), placement=placement)
    except Exception as e:
        raise InvalidArgumentError(f"invalid noise spec '{text}' (expected <channel>:<probability>): {e}")


@dataclass
class RunConfig:
    """Settings for one CLI run"""
    data_root: Optional[str] = None
    out_dir: str = "runs/latest"
    from_model: Optional[str] = None
    model_path: Optional[str] = None
    regime: Regime = Regime.BASELINE_CNN_DNN
    split: str = "test"
    seed: int = 0
    batch_size: int = 256
    epochs: Optional[int] = None
    optimizer: OptimizerKind = OptimizerKind.ADAM
    lr_classical: float = 1e-3
    lr_quantum: float = 1e-2
    n_wires: int = 8
    n_layers: int = 4
    grad_method: GradMethod = GradMethod.PARAMETER_SHIFT
    eps: float = DEFAULT_EPS
    noise: Optional[str] = None
    noise_placement: NoisePlacement = NoisePlacement.AFTER_EVERY_GATE
    min_classes: int = 35
    test_size: int = 6500
    workers: int = 4
    quiet: bool = False
    log_file: str = DEFAULT_LOG_FILE

    @property
    def effective_epochs(self) -> int:
        return self.epochs if self.epochs is not None else default_epochs(self.regime)

    @property
    def noise_spec(self) -> Optional[NoiseSpec]:
        return parse_noise(self.noise, self.noise_placement)

    def validate(self) -> List[str]:
        """Return a list of problems; empty when the config is usable"""
        problems = []
        if self.batch_size < 1:
            problems.append(f"batch_size must be positive, got {self.batch_size}")
        if self.epochs is not None and self.epochs < 0:
            problems.append(f"epochs must be non-negative, got {self.epochs}")
        if self.n_wires < 1 or self.n_layers < 1:
            problems.append("wires and layers must be positive")
        if self.eps <= 0:
            problems.append(f"eps must be positive, got {self.eps}")
        if self.lr_classical <= 0 or self.lr_quantum <= 0:
            problems.append("learning rates must be positive")
        if self.split not in ("validation", "test"):
            problems.append(f"split must be 'validation' or 'test', got {self.split}")
        if self.data_root is not None and not Path(self.data_root).is_dir():
            problems.append(f"dataset root not found: {self.data_root}")
        try:
            self.noise_spec
        except InvalidArgumentError as e:
            problems.append(str(e))
        return problems

    def to_dict(self) -> Dict[str, Any]:
        """Fully resolved config, enums as plain strings"""
        data = asdict(self)
        for key, value in data.items():
            if isinstance(value, Enum):
                data[key] = value.value
        data["effective_epochs"] = self.effective_epochs
        return data


def _env_overrides() -> Dict[str, Any]:
    env_map = {
        "QNN_SEED": ("seed", int),
        "QNN_BATCH_SIZE": ("batch_size", int),
        "QNN_WIRES": ("n_wires", int),
        "QNN_LAYERS": ("n_layers", int),
        "QNN_EPOCHS": ("epochs", int),
        "QNN_GRAD": ("grad_method", GradMethod),
        "QNN_EPS": ("eps", float),
        "QNN_LR": ("lr_classical", float),
        "QNN_QLR": ("lr_quantum", float),
        "QNN_OPTIMIZER": ("optimizer", OptimizerKind),
        "QNN_NOISE": ("noise", str),
        "QNN_WORKERS": ("workers", int),
        "QNN_LOG_FILE": ("log_file", str),
    }
    values = {}
    for var, (name, cast) in env_map.items():
        raw = os.getenv(var)
        if raw is not None and raw != "":
            values[name] = cast(raw)
    return values


class ConfigManager:
    """Resolves a RunConfig from the environment and explicit overrides"""

    def __init__(self, **kwargs):
        load_dotenv()
        known = {f.name for f in fields(RunConfig)}
        self.config = RunConfig()

        try:
            for key, value in _env_overrides().items():
                setattr(self.config, key, value)
                logger.info(f"Config from environment: {key}={value}")
        except Exception as e:
            logger.error(f"Error reading environment configuration: {str(e)}")
            print(colored(f"⚠️ Ignoring environment configuration: {str(e)}", "yellow"))
            self.config = RunConfig()

        # Explicit overrides win over the environment
        for key, value in kwargs.items():
            if value is None or key not in known:
                continue
            setattr(self.config, key, _coerce(key, value))
            logger.info(f"Config override: {key}={value}")

        logger.info("Configuration loaded successfully")

    def get_config(self) -> RunConfig:
        """Get current configuration settings"""
        return self.config

    def validate(self) -> List[str]:
        problems = self.config.validate()
        for problem in problems:
            logger.error(f"Invalid configuration: {problem}")
        return problems


def _coerce(key: str, value: Any) -> Any:
    enum_fields = {
        "regime": Regime,
        "grad_method": GradMethod,
        "optimizer": OptimizerKind,
        "noise_placement": NoisePlacement,
    }
    if key in enum_fields and not isinstance(value, Enum):
        return enum_fields[key](value)
    return value

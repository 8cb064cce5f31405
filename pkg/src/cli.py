"""Command-line front end: train, eval, gradcheck, manifest and synth.

Exit codes: 0 success, 1 check failure, 2 usage error, 3 numeric failure.
"""
import argparse
import logging
import sys
import time
from typing import Dict, List, Optional, Tuple

import numpy as np
from termcolor import colored

from src.audiodata import generate_tone_dataset, load_dataset, manifest_records
from src.classicalnn import (
    CLASSICAL_CHECK_EPS,
    ConvBlockConfig,
    Conv1DBlock,
    Dense,
    Activation,
    Mode,
    gradient_check,
    init_conv_params,
    init_dense_params,
)
from src.config_manager import ConfigManager, GradMethod, Regime, RunConfig
from src.encoder import FeatureVector
from src.errors import (
    CapacityError,
    DatasetError,
    FormatError,
    InvalidArgumentError,
    NumericError,
)
from src.file_manager import artifact_paths, ensure_run_dir, reset_metrics
from src.gradopt import OptimizerKind, finite_diff_grad, parameter_shift_grad, relative_error
from src.hybrid import (
    ModelConfig,
    ModelKind,
    OptimizerConfig,
    TrainRegime,
    build_model,
    evaluate,
    model_gradient_check,
    prepare_model,
    train,
)
from src.model_store import checksum, load_model, read_metadata, save_model
from src.noisesim import NoiseChannel, NoisePlacement
from src.run_report import append_metrics, write_manifest, write_report
from src.vqc import VqcConfig, init_params, qnn_forward

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3

GRADCHECK_THRESHOLD = 1e-4
GRADCHECK_CIRCUITS = 10


class UsageError(Exception):
    """Bad flag combination detected after argument parsing."""


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="Random seed (default 0)")
    common.add_argument("--out", dest="out_dir", help="Output directory for artifacts")
    common.add_argument("--quiet", action="store_true", default=None, help="Disable progress bars")
    common.add_argument("--log-file", dest="log_file", help="Log file (default qnn_scr.log)")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", dest="data_root", help="Dataset root (one folder per command)")
    data.add_argument("--batch-size", dest="batch_size", type=int, help="Mini-batch size (default 256)")
    data.add_argument("--classes", dest="min_classes", type=int, help="Minimum number of class folders (default 35)")
    data.add_argument("--test-size", dest="test_size", type=int, help="Test draw size without a testing list")
    data.add_argument("--workers", type=int, help="WAV decoding threads")

    parser = argparse.ArgumentParser(prog="qnn-scr", description="Hybrid CNN-QNN spoken command recognition")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", parents=[common, data], help="Train a model under one regime")
    p_train.add_argument("--regime", choices=[r.value for r in Regime], default=Regime.BASELINE_CNN_DNN.value)
    p_train.add_argument("--from", dest="from_model", help="Pre-trained CNN-DNN container (transfer regimes)")
    p_train.add_argument("--epochs", type=int, help="Epochs (default 30 baseline, 15 fine-tuning)")
    p_train.add_argument("--wires", dest="n_wires", type=int, help="Qubits (default 8)")
    p_train.add_argument("--layers", dest="n_layers", type=int, help="VQC layers (default 4)")
    p_train.add_argument("--grad", dest="grad_method", choices=[g.value for g in GradMethod])
    p_train.add_argument("--eps", type=float, help="Finite-difference step (default 1e-3)")
    p_train.add_argument("--optimizer", choices=[o.value for o in OptimizerKind])
    p_train.add_argument("--lr", dest="lr_classical", type=float, help="Classical learning rate")
    p_train.add_argument("--qlr", dest="lr_quantum", type=float, help="VQC learning rate")

    p_eval = sub.add_parser("eval", parents=[common, data], help="Evaluate a saved model")
    p_eval.add_argument("--model", dest="model_path", required=True, help="Model container")
    p_eval.add_argument("--split", choices=["validation", "test"])
    p_eval.add_argument("--noise", help="<channel>:<probability>, channels: "
                        + ", ".join(c.value for c in NoiseChannel))
    p_eval.add_argument("--noise-placement", dest="noise_placement", choices=[p.value for p in NoisePlacement])

    p_grad = sub.add_parser("gradcheck", parents=[common], help="Gradient agreement suite")
    p_grad.add_argument("--eps", type=float, help="Finite-difference step for the circuit checks")
    p_grad.add_argument("--circuits", type=int, default=GRADCHECK_CIRCUITS, help="Random circuits to check")

    sub.add_parser("manifest", parents=[common, data], help="Write the dataset audit manifest")

    p_synth = sub.add_parser("synth", parents=[common], help="Write the synthetic tone dataset")
    p_synth.add_argument("--classes", dest="n_classes", type=int, default=4)
    p_synth.add_argument("--clips", dest="clips_per_class", type=int, default=50)
    p_synth.add_argument("--duration", type=float, default=0.5)
    p_synth.add_argument("--test-per-class", dest="test_per_class", type=int, default=10)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "circuits")}
    manager = ConfigManager(**overrides)
    problems = manager.validate()
    if problems:
        raise UsageError("; ".join(problems))
    return manager.get_config()


def setup_logging(log_file: str) -> None:
    logging.basicConfig(
        filename=log_file,
        level=logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _load_data(cfg: RunConfig):
    if not cfg.data_root:
        raise UsageError("--data is required")
    return load_dataset(
        cfg.data_root,
        seed=cfg.seed,
        min_classes=cfg.min_classes,
        test_size=cfg.test_size,
        workers=cfg.workers,
        progress=not cfg.quiet,
    )


def cmd_train(args: argparse.Namespace, cfg: RunConfig) -> int:
    if cfg.regime.needs_source and not cfg.from_model:
        raise UsageError(f"regime {cfg.regime.value} requires --from <model file>")
    started = time.perf_counter()
    dataset = _load_data(cfg)

    source = None
    if cfg.regime.needs_source:
        source = load_model(cfg.from_model)
        if source.kind != ModelKind.CNN_DNN:
            raise UsageError("--from must point to a CNN-DNN model")
        if source.config.n_classes != dataset.n_classes:
            raise UsageError(
                f"source model has {source.config.n_classes} classes, dataset has {dataset.n_classes}"
            )

    model_config = ModelConfig(n_wires=cfg.n_wires, n_layers=cfg.n_layers, n_classes=dataset.n_classes)
    regime = TrainRegime(name=cfg.regime, source_model=source)
    model = prepare_model(regime, model_config, cfg.seed, calibration=dataset.part("train"))

    run_dir = ensure_run_dir(cfg.out_dir)
    paths = artifact_paths(run_dir)
    reset_metrics(run_dir)

    model, reports = train(
        model,
        dataset,
        regime,
        OptimizerConfig(kind=cfg.optimizer, lr_classical=cfg.lr_classical, lr_quantum=cfg.lr_quantum),
        cfg.effective_epochs,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        grad_method=cfg.grad_method,
        eps=cfg.eps,
        on_epoch=lambda record: append_metrics(paths["metrics"], record),
        progress=not cfg.quiet,
    )
    digest = save_model(model, paths["model"], extra={"label_names": dataset.label_names, "regime": cfg.regime.value})

    final_part = "test" if dataset.part("test") else "validation"
    final = evaluate(model, dataset.part(final_part), batch_size=cfg.batch_size)
    best_val = min(reports, key=lambda r: r.cross_entropy)
    write_report(paths["report"], {
        "command": "train",
        "config": cfg.to_dict(),
        "kind": model.kind.value,
        "regime": cfg.regime.value,
        "split_counts": dataset.split.counts(),
        "label_names": dataset.label_names,
        "validation": best_val.model_dump(),
        "final_split": final_part,
        "final": final.model_dump(),
        "trainable_params": model.trainable_count(),
        "total_params": model.total_count(),
        "vqc_params": model.vqc_count(),
        "model_checksum": digest,
        "wall_seconds": time.perf_counter() - started,
    })
    print(colored(f"✓ {final_part}: CE={final.cross_entropy:.4f} acc={final.accuracy:.4f} "
                  f"({model.trainable_count()} trainable / {model.total_count()} total parameters)", "green"))
    print(colored(f"✓ Model saved to {paths['model']}", "green"))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, cfg: RunConfig) -> int:
    model = load_model(cfg.model_path)
    noise = cfg.noise_spec
    if noise is not None and model.kind != ModelKind.CNN_QNN:
        raise UsageError("--noise is only valid for CNN-QNN models")
    dataset = _load_data(cfg)
    if model.config.n_classes != dataset.n_classes:
        raise UsageError(f"model has {model.config.n_classes} classes, dataset has {dataset.n_classes}")
    part = dataset.part(cfg.split)
    if not part:
        raise UsageError(f"split '{cfg.split}' is empty")

    print(colored(f"→ Evaluating {model.kind.value} on {cfg.split} ({len(part)} utterances)"
                  + (f" with {noise.label()} noise" if noise else ""), "blue"))
    report = evaluate(model, part, noise=noise, batch_size=cfg.batch_size)
    run_dir = ensure_run_dir(cfg.out_dir)
    write_report(artifact_paths(run_dir)["eval_report"], {
        "command": "eval",
        "config": cfg.to_dict(),
        "kind": model.kind.value,
        "model_metadata": read_metadata(cfg.model_path)["extra"],
        "model_checksum": checksum(cfg.model_path),
        "split": cfg.split,
        "report": report.model_dump(),
        "trainable_params": model.trainable_count(),
        "total_params": model.total_count(),
        "vqc_params": model.vqc_count(),
    })
    print(colored(f"✓ CE={report.cross_entropy:.6f} acc={report.accuracy:.4f} "
                  f"trainable={report.trainable_param_count} total={model.total_count()}", "green"))
    return EXIT_OK


def circuit_gradient_suite(seed: int, eps: float, n_circuits: int) -> Tuple[float, str]:
    """Finite differences vs parameter shift on random small circuits."""
    worst, where = 0.0, ""
    for trial in range(n_circuits):
        rng = np.random.default_rng(seed + trial)
        cfg = VqcConfig(n_wires=int(rng.integers(1, 5)), n_layers=int(rng.integers(1, 4)))
        features = FeatureVector(values=rng.uniform(-0.9, 0.9, cfg.n_wires))
        weights = rng.standard_normal(cfg.n_wires)
        params = init_params(cfg, rng, scale=np.pi)

        def loss_at(flat: np.ndarray) -> float:
            p = params.model_copy(update={"angles": flat.reshape(params.angles.shape)})
            return float(weights @ qnn_forward(features, p, cfg).values)

        flat = params.flatten()
        err, idx = relative_error(finite_diff_grad(loss_at, flat, eps).values, parameter_shift_grad(loss_at, flat).values)
        logger.info(f"Circuit {trial} ({cfg.n_wires} wires, {cfg.n_layers} layers): rel err {err:.3e}")
        if err >= worst:
            worst, where = err, f"circuit {trial} ({cfg.n_wires}w x {cfg.n_layers}l) parameter {idx}"
    return worst, where


def classical_gradient_suite(seed: int) -> Dict[str, Tuple[float, int]]:
    rng = np.random.default_rng(seed)
    conv_cfg = ConvBlockConfig(in_channels=2, out_channels=3, kernel=5, stride=2, pool=2)
    conv = Conv1DBlock(conv_cfg, init_conv_params(conv_cfg, rng))
    dense = Dense(init_dense_params(6, 4, rng), Activation.RELU)
    results = {}
    for name, layer, x in (
        ("conv", conv, rng.standard_normal((3, 2, 40))),
        ("dense", dense, rng.standard_normal((5, 6))),
    ):
        for tensor, value in gradient_check(layer, x, rng, Mode.TRAIN, CLASSICAL_CHECK_EPS).items():
            results[f"{name}.{tensor}"] = value
    return results


def tiny_model_check(seed: int) -> Tuple[float, str]:
    config = ModelConfig(
        conv_blocks=[ConvBlockConfig(in_channels=1, out_channels=4, kernel=8, stride=4, pool=2)],
        n_wires=2,
        n_layers=1,
        n_classes=3,
    )
    model = build_model(ModelKind.CNN_QNN, config, seed)
    rng = np.random.default_rng(seed)
    waveforms = rng.standard_normal((3, 1, 64))
    labels = np.array([0, 1, 2])
    return model_gradient_check(model, waveforms, labels)


def cmd_gradcheck(args: argparse.Namespace, cfg: RunConfig) -> int:
    print(colored(f"→ Gradient suite (seed={cfg.seed}, eps={cfg.eps:g})", "blue"))
    results: List[Tuple[str, float, str]] = []

    err, where = circuit_gradient_suite(cfg.seed, cfg.eps, args.circuits)
    results.append(("finite difference vs parameter shift", err, where))
    for name, (layer_err, idx) in classical_gradient_suite(cfg.seed).items():
        results.append((f"classical {name}", layer_err, f"index {idx}"))
    err, where = tiny_model_check(cfg.seed)
    results.append(("tiny CNN-QNN end to end", err, where))

    worst = max(results, key=lambda r: r[1])
    for name, err, where in results:
        color = "green" if err < GRADCHECK_THRESHOLD else "red"
        print(colored(f"  {name}: max rel err {err:.3e} ({where})", color))
    if worst[1] >= GRADCHECK_THRESHOLD:
        logger.error(f"Gradient check failed: {worst}")
        print(colored(f"❌ {worst[0]} exceeds {GRADCHECK_THRESHOLD:g}: {worst[1]:.3e} at {worst[2]}", "red"))
        return EXIT_CHECK_FAILED
    print(colored(f"✓ Max relative error {worst[1]:.3e} < {GRADCHECK_THRESHOLD:g}", "green"))
    return EXIT_OK


def cmd_manifest(args: argparse.Namespace, cfg: RunConfig) -> int:
    dataset = _load_data(cfg)
    run_dir = ensure_run_dir(cfg.out_dir)
    path = artifact_paths(run_dir)["manifest"]
    rows = write_manifest(path, manifest_records(dataset, cfg.data_root))
    counts = dataset.split.counts()
    print(colored(f"✓ {len(dataset.label_names)} labels, {rows} utterances "
                  f"(train {counts['train']}, validation {counts['validation']}, test {counts['test']})", "green"))
    print(colored(f"✓ Manifest written to {path}", "green"))
    return EXIT_OK


def cmd_synth(args: argparse.Namespace, cfg: RunConfig) -> int:
    root = ensure_run_dir(cfg.out_dir)
    written = generate_tone_dataset(
        str(root),
        n_classes=args.n_classes,
        clips_per_class=args.clips_per_class,
        duration=args.duration,
        test_per_class=args.test_per_class,
        seed=cfg.seed,
    )
    print(colored(f"✓ Wrote {len(written)} clips ({args.n_classes} classes) to {root}", "green"))
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "manifest": cmd_manifest,
    "synth": cmd_synth,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    try:
        cfg = resolve_config(args)
        setup_logging(cfg.log_file)
        logger.info(f"Running {args.command} with {cfg.to_dict()}")
        return COMMANDS[args.command](args, cfg)
    except (UsageError, InvalidArgumentError, DatasetError, FormatError, CapacityError, FileNotFoundError) as e:
        logger.error(f"Usage error in {args.command}: {str(e)}")
        print(colored(f"❌ {str(e)}", "red"))
        return EXIT_USAGE
    except NumericError as e:
        logger.error(f"Numeric failure in {args.command}: {str(e)} (epoch={e.epoch}, batch={e.batch}, index={e.index})")
        print(colored(f"❌ Numeric failure: {str(e)}", "red"))
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

import zipfile

import numpy as np
import pytest
from termcolor import colored

from src.classicalnn import ConvBlockConfig
from src.config_manager import Regime
from src.errors import FormatError
from src.hybrid import ModelConfig, ModelKind, build_model, transfer_cnn
from src.model_store import METADATA_ENTRY, checksum, load_model, read_metadata, save_model

SMALL = ModelConfig(
    conv_blocks=[ConvBlockConfig(in_channels=1, out_channels=4, kernel=16, stride=8, pool=2)],
    dnn_hidden=[8],
    n_wires=3,
    n_layers=2,
    n_classes=3,
)


@pytest.mark.parametrize("kind", [ModelKind.CNN_DNN, ModelKind.CNN_QNN])
def test_round_trip_is_bit_exact(tmp_path, kind):
    print(colored(f"\n=== Round trip of a {kind.value} container ===", "blue"))
    model = build_model(kind, SMALL, seed=5)
    save_model(model, tmp_path / "m.qnn")
    loaded = load_model(tmp_path / "m.qnn")
    assert loaded.kind == kind
    original, restored = model.named_tensors(), loaded.named_tensors()
    assert sorted(original) == sorted(restored)
    for name, tensor in original.items():
        assert restored[name].tobytes() == tensor.tobytes(), name
    assert checksum(loaded) == checksum(model)
    print(colored(f"✓ {len(original)} tensors restored", "green"))


def test_same_model_gives_same_bytes(tmp_path):
    model = build_model(ModelKind.CNN_QNN, SMALL, seed=2)
    first = save_model(model, tmp_path / "a.qnn")
    second = save_model(model, tmp_path / "b.qnn")
    assert first == second
    assert (tmp_path / "a.qnn").read_bytes() == (tmp_path / "b.qnn").read_bytes()


def test_loaded_model_predicts_identically(tmp_path, rng):
    model = build_model(ModelKind.CNN_QNN, SMALL, seed=9)
    save_model(model, tmp_path / "m.qnn")
    x = rng.standard_normal((2, 1, 400))
    assert np.array_equal(load_model(tmp_path / "m.qnn").forward(x), model.forward(x))


def test_freeze_mask_and_extra_survive(tmp_path):
    source = build_model(ModelKind.CNN_DNN, SMALL, seed=1)
    model = transfer_cnn(source, Regime.CNN_QNN_2)
    save_model(model, tmp_path / "t.qnn", extra={"label_names": ["a", "b", "c"]})
    loaded = load_model(tmp_path / "t.qnn")
    assert loaded.freeze_mask == {"cnn": False, "compressor": False, "vqc": True}
    assert loaded.trainable_count() == model.trainable_count() == 18
    assert read_metadata(tmp_path / "t.qnn")["extra"] == {"label_names": ["a", "b", "c"]}


def test_rejects_non_zip(tmp_path):
    bad = tmp_path / "bad.qnn"
    bad.write_bytes(b"definitely not a zip archive")
    with pytest.raises(FormatError):
        load_model(bad)


def test_rejects_unknown_version(tmp_path):
    path = tmp_path / "v.qnn"
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr(METADATA_ENTRY, '{"format_version": 99}')
    with pytest.raises(FormatError):
        read_metadata(path)


def test_rejects_missing_tensor(tmp_path):
    model = build_model(ModelKind.CNN_DNN, SMALL, seed=0)
    save_model(model, tmp_path / "m.qnn")
    metadata = read_metadata(tmp_path / "m.qnn")
    path = tmp_path / "broken.qnn"
    with zipfile.ZipFile(tmp_path / "m.qnn") as src, zipfile.ZipFile(path, "w") as dst:
        for name in src.namelist():
            if not name.startswith("tensors/cnn.block1.weights"):
                dst.writestr(name, src.read(name))
    assert "cnn.block1.weights" in metadata["tensors"]
    with pytest.raises(FormatError):
        load_model(path)


def test_missing_file_is_not_a_format_error(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_model(tmp_path / "nope.qnn")


def test_prefix_checksum_tracks_one_component():
    model = build_model(ModelKind.CNN_QNN, SMALL, seed=4)
    cnn_before = checksum(model, "cnn.")
    vqc_before = checksum(model, "head.vqc")
    model.head.vqc_params.angles[...] += 0.1
    assert checksum(model, "cnn.") == cnn_before
    assert checksum(model, "head.vqc") != vqc_before

import pytest

from src.config_manager import (
    BASELINE_EPOCHS,
    FINE_TUNE_EPOCHS,
    ConfigManager,
    GradMethod,
    Regime,
    RunConfig,
    default_epochs,
    parse_noise,
)
from src.errors import InvalidArgumentError
from src.noisesim import NoiseChannel, NoisePlacement


@pytest.fixture(autouse=True)
def clean_env(monkeypatch, tmp_path):
    for var in ("QNN_SEED", "QNN_BATCH_SIZE", "QNN_WIRES", "QNN_LAYERS", "QNN_EPOCHS", "QNN_GRAD",
                "QNN_EPS", "QNN_LR", "QNN_QLR", "QNN_OPTIMIZER", "QNN_NOISE", "QNN_WORKERS", "QNN_LOG_FILE"):
        monkeypatch.delenv(var, raising=False)
    # keep load_dotenv away from any .env in the checkout
    monkeypatch.chdir(tmp_path)


def test_parse_noise():
    spec = parse_noise("depolarizing:0.01")
    assert spec.channel == NoiseChannel.DEPOLARIZING
    assert spec.probability == pytest.approx(0.01)
    assert spec.placement == NoisePlacement.AFTER_EVERY_GATE
    assert parse_noise(None) is None
    assert parse_noise("none") is None
    assert parse_noise("bit_flip:0.2", NoisePlacement.BEFORE_MEASUREMENT).placement == NoisePlacement.BEFORE_MEASUREMENT


@pytest.mark.parametrize("text", ["depolarizing", "bogus:0.1", "depolarizing:1.5", "depolarizing:x"])
def test_parse_noise_rejects(text):
    with pytest.raises(InvalidArgumentError):
        parse_noise(text)


def test_default_epochs():
    assert default_epochs(Regime.BASELINE_CNN_DNN) == BASELINE_EPOCHS
    assert default_epochs(Regime.CNN_QNN_SCRATCH) == BASELINE_EPOCHS
    assert default_epochs(Regime.CNN_QNN_2) == FINE_TUNE_EPOCHS
    assert default_epochs("cnn_qnn_3") == FINE_TUNE_EPOCHS


def test_defaults():
    cfg = ConfigManager().get_config()
    assert cfg.batch_size == 256
    assert cfg.n_wires == 8 and cfg.n_layers == 4
    assert cfg.grad_method == GradMethod.PARAMETER_SHIFT
    assert cfg.effective_epochs == BASELINE_EPOCHS


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("QNN_SEED", "42")
    monkeypatch.setenv("QNN_GRAD", "fd")
    cfg = ConfigManager().get_config()
    assert cfg.seed == 42
    assert cfg.grad_method == GradMethod.FINITE_DIFF


def test_kwargs_win_over_environment(monkeypatch):
    monkeypatch.setenv("QNN_BATCH_SIZE", "32")
    cfg = ConfigManager(batch_size=8, regime="cnn_qnn_3", epochs=None, unknown_flag=1).get_config()
    assert cfg.batch_size == 8
    assert cfg.regime == Regime.CNN_QNN_3
    assert cfg.effective_epochs == FINE_TUNE_EPOCHS


def test_bad_environment_falls_back_to_defaults(monkeypatch):
    monkeypatch.setenv("QNN_SEED", "not-a-number")
    assert ConfigManager().get_config().seed == 0


def test_validate(tmp_path):
    assert RunConfig().validate() == []
    problems = ConfigManager(batch_size=0, eps=-1.0, noise="depolarizing:2", data_root=str(tmp_path / "x")).validate()
    assert len(problems) == 4
    assert RunConfig(split="train").validate()


def test_to_dict_is_plain():
    data = RunConfig(regime=Regime.CNN_QNN_2).to_dict()
    assert data["regime"] == "cnn_qnn_2"
    assert data["effective_epochs"] == FINE_TUNE_EPOCHS

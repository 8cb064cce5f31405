import numpy as np
import pytest
from termcolor import colored

from src.classicalnn import (
    DEFAULT_CONV_BLOCKS,
    Activation,
    ConvBlockConfig,
    Conv1DBlock,
    Dense,
    FeatureExtractor,
    Mode,
    build_dnn_head,
    cnn_extract,
    conv_block_forward,
    dense_forward,
    gradient_check,
    init_conv_params,
    init_dense_params,
    softmax_ce,
    softmax_ce_batch,
)
from src.errors import InvalidArgumentError, StateError


@pytest.fixture
def cnn_params(rng):
    return [init_conv_params(cfg, rng) for cfg in DEFAULT_CONV_BLOCKS]


def test_time_lengths_for_one_second_clip(cnn_params):
    extractor = FeatureExtractor(DEFAULT_CONV_BLOCKS, cnn_params)
    assert extractor.time_lengths(8000) == [124, 30, 7, 1]


def test_short_clip_keeps_one_frame(cnn_params):
    extractor = FeatureExtractor(DEFAULT_CONV_BLOCKS, cnn_params)
    assert extractor.time_lengths(4000) == [61, 14, 3, 1]


def test_cnn_extract_shapes(rng, cnn_params):
    single = cnn_extract(rng.standard_normal((1, 8000)), cnn_params)
    assert single.shape == (64,)
    batch = cnn_extract(rng.standard_normal((3, 1, 8000)), cnn_params)
    assert batch.shape == (3, 64)


def test_cnn_extract_rejects_short_waveform(rng, cnn_params):
    with pytest.raises(InvalidArgumentError):
        cnn_extract(rng.standard_normal((1, 40)), cnn_params)


def test_min_length_reaches_every_block(cnn_params):
    extractor = FeatureExtractor(DEFAULT_CONV_BLOCKS, cnn_params)
    assert extractor.min_length() == 3776
    assert extractor.time_lengths(3776) == [58, 14, 3, 1]
    assert extractor.time_lengths(100) == [58, 14, 3, 1]


@pytest.mark.parametrize("length", [100, 2400, 3000])
def test_cnn_extract_pads_short_waveforms(rng, cnn_params, length):
    x = rng.standard_normal((1, length))
    feats = cnn_extract(x, cnn_params)
    assert feats.shape == (64,)
    padded = np.pad(x, ((0, 0), (0, 3776 - length)))
    assert np.allclose(feats, cnn_extract(padded, cnn_params), atol=1e-12)


def test_short_input_gradient_matches_input_shape(rng, cnn_params):
    extractor = FeatureExtractor(DEFAULT_CONV_BLOCKS, cnn_params)
    out = extractor.forward(rng.standard_normal((2, 1, 2400)), Mode.TRAIN)
    dx, grads = extractor.backward(np.ones_like(out), need_input_grad=True)
    assert dx.shape == (2, 1, 2400)
    assert len(grads) == 4


def test_eval_mode_is_deterministic(rng, cnn_params):
    x = rng.standard_normal((1, 1, 8000))
    batch = np.concatenate([x, x])
    feats = cnn_extract(batch, cnn_params, Mode.EVAL)
    assert np.array_equal(feats[0], feats[1])


def test_dense_forward(rng):
    params = init_dense_params(3, 2, rng)
    x = np.array([1.0, -1.0, 0.5])
    expected = params.weights @ x + params.bias
    assert np.allclose(dense_forward(x, params), expected)
    assert np.allclose(dense_forward(x, params, Activation.RELU), np.maximum(expected, 0.0))


def test_dnn_head_widths(rng):
    head = build_dnn_head([64, 128, 256, 512, 35], rng)
    assert head.widths == [64, 128, 256, 512, 35]
    assert [layer.activation for layer in head.layers] == [
        Activation.RELU, Activation.RELU, Activation.NONE, Activation.NONE,
    ]


def test_softmax_ce_uniform_logits():
    loss, grad = softmax_ce(np.zeros(35), 4)
    assert loss == pytest.approx(np.log(35))
    assert grad.sum() == pytest.approx(0.0, abs=1e-12)
    mean, dlogits, losses = softmax_ce_batch(np.zeros((4, 5)), np.array([0, 1, 2, 3]))
    assert mean == pytest.approx(np.log(5))
    assert dlogits.shape == (4, 5)
    assert np.allclose(losses, np.log(5))


def test_softmax_ce_label_range():
    with pytest.raises(InvalidArgumentError):
        softmax_ce(np.zeros(3), 3)
    with pytest.raises(InvalidArgumentError):
        softmax_ce_batch(np.zeros((2, 3)), np.array([0, -1]))


@pytest.mark.parametrize("mode", [Mode.TRAIN, Mode.EVAL])
def test_conv_block_gradients(rng, mode):
    print(colored(f"\n=== Conv block gradient check ({mode.value}) ===", "blue"))
    cfg = ConvBlockConfig(in_channels=2, out_channels=3, kernel=5, stride=2, pool=2)
    block = Conv1DBlock(cfg, init_conv_params(cfg, rng))
    results = gradient_check(block, rng.standard_normal((3, 2, 40)), rng, mode)
    for name, (err, idx) in results.items():
        assert err < 1e-5, f"{name} relative error {err:.2e} at {idx}"
    print(colored(f"✓ Worst error {max(e for e, _ in results.values()):.2e}", "green"))


def test_dense_gradients(rng):
    layer = Dense(init_dense_params(6, 4, rng), Activation.RELU)
    results = gradient_check(layer, rng.standard_normal((5, 6)), rng)
    assert all(err < 1e-5 for err, _ in results.values())


def test_frozen_block_keeps_running_stats(rng):
    cfg = DEFAULT_CONV_BLOCKS[0]
    params = init_conv_params(cfg, rng)
    params.trainable = False
    before = params.bn_running_mean.copy(), params.bn_running_var.copy()
    block = Conv1DBlock(cfg, params)
    out = block.forward(rng.standard_normal((2, 1, 2000)), Mode.TRAIN)
    _, grads = block.backward(np.ones_like(out))
    assert np.array_equal(params.bn_running_mean, before[0])
    assert np.array_equal(params.bn_running_var, before[1])
    assert all(not np.any(g) for g in grads.values())


def test_trainable_block_updates_running_stats(rng):
    cfg = DEFAULT_CONV_BLOCKS[0]
    params = init_conv_params(cfg, rng)
    Conv1DBlock(cfg, params).forward(rng.standard_normal((2, 1, 2000)) + 3.0, Mode.TRAIN)
    assert np.any(params.bn_running_mean != 0.0)


def test_backward_requires_forward(rng):
    layer = Dense(init_dense_params(2, 2, rng))
    with pytest.raises(StateError):
        layer.backward(np.ones(2))


def test_parameter_counts(cnn_params):
    assert sum(p.count() for p in cnn_params) == 33952


def test_conv_block_forward_single_and_batch(rng):
    cfg = DEFAULT_CONV_BLOCKS[0]
    params = init_conv_params(cfg, rng)
    x = rng.standard_normal((1, 8000))
    single = conv_block_forward(x, cfg, params)
    assert single.shape == (32, 124)
    batch = conv_block_forward(np.stack([x, x]), cfg, params)
    assert np.allclose(batch[1], single, atol=1e-12)


def test_train_mode_batch_norm_standardizes_channels(rng):
    cfg = DEFAULT_CONV_BLOCKS[0]
    block = Conv1DBlock(cfg, init_conv_params(cfg, rng))
    block.forward(3.0 + 2.0 * rng.standard_normal((4, 1, 4000)), Mode.TRAIN)
    xhat = block.normalized
    assert np.allclose(xhat.mean(axis=(0, 2)), 0.0, atol=1e-10)
    assert np.allclose(xhat.var(axis=(0, 2)), 1.0, atol=1e-3)

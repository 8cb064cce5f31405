import numpy as np
import pytest
from scipy.io import wavfile
from termcolor import colored

from src.audiodata import (
    TESTING_LIST,
    Utterance,
    generate_tone_dataset,
    ingest,
    load_wav,
    make_batches,
    manifest_records,
    pad_batch,
    resample_16k_to_8k,
    split_dataset,
)
from src.errors import DatasetError, FormatError, InvalidArgumentError


def _write(path, data, rate=16000):
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), rate, data)
    return path


def _utt(n, label=0, rate=8000, value=1.0):
    return Utterance(samples=np.full(n, value), sample_rate=rate, label=label)


def test_load_wav_scales_pcm(tmp_path):
    data = (np.arange(16000) % 200 - 100).astype(np.int16)
    utt = load_wav(str(_write(tmp_path / "yes" / "a.wav", data)), ["no", "yes"])
    assert len(utt) == 16000
    assert utt.sample_rate == 16000
    assert utt.label == 1
    assert utt.label_name == "yes"
    assert np.allclose(utt.samples, data / 32768.0)


def test_load_wav_all_zero(tmp_path):
    utt = load_wav(str(_write(tmp_path / "up" / "z.wav", np.zeros(800, dtype=np.int16))))
    assert not np.any(utt.samples)


def test_load_wav_rejects_stereo_and_float(tmp_path):
    stereo = _write(tmp_path / "a" / "s.wav", np.zeros((100, 2), dtype=np.int16))
    floats = _write(tmp_path / "a" / "f.wav", np.zeros(100, dtype=np.float32))
    with pytest.raises(FormatError):
        load_wav(str(stereo))
    with pytest.raises(FormatError):
        load_wav(str(floats))


def test_load_wav_rejects_garbage(tmp_path):
    bad = tmp_path / "a" / "bad.wav"
    bad.parent.mkdir()
    bad.write_bytes(b"not a wav file at all")
    with pytest.raises(FormatError) as exc:
        load_wav(str(bad))
    assert exc.value.path == str(bad)


@pytest.mark.parametrize("n", [1, 2, 15, 62, 63, 64, 101, 16000])
def test_resample_lengths(n):
    assert len(resample_16k_to_8k(_utt(n, rate=16000))) == (n + 1) // 2


def test_resample_rejects_other_rates():
    with pytest.raises(InvalidArgumentError):
        resample_16k_to_8k(_utt(100, rate=8000))


@pytest.mark.parametrize("n", [15, 16000])
def test_resample_passes_dc_up_to_the_edges(n):
    out = resample_16k_to_8k(_utt(n, rate=16000, value=0.5))
    assert np.allclose(out.samples, 0.5, atol=1e-3)


def test_resample_keeps_sample_alignment():
    # a slow ramp passes the low-pass unchanged, so output k sits on input 2k
    ramp = np.linspace(-0.5, 0.5, 2001)
    out = resample_16k_to_8k(Utterance(samples=ramp, sample_rate=16000))
    assert np.allclose(out.samples, ramp[::2], atol=1e-3)


def test_resample_keeps_one_khz_tone():
    print(colored("\n=== Testing 1 kHz tone through the resampler ===", "blue"))
    t = np.arange(16000) / 16000.0
    out = resample_16k_to_8k(Utterance(samples=0.8 * np.sin(2 * np.pi * 1000 * t), sample_rate=16000))
    interior = out.samples[32:-32]
    n = np.arange(32, 32 + len(interior))
    amplitude = 2.0 / len(interior) * abs(np.sum(interior * np.exp(-2j * np.pi * 1000 * n / 8000)))
    assert amplitude == pytest.approx(0.8, rel=0.02)
    print(colored(f"✓ Amplitude {amplitude:.4f}", "green"))


def test_resample_is_deterministic():
    x = _utt(1000, rate=16000, value=0.1)
    assert resample_16k_to_8k(x).samples.tobytes() == resample_16k_to_8k(x).samples.tobytes()


def test_ingest_handles_both_rates(tmp_path):
    a = _write(tmp_path / "c" / "a.wav", np.ones(1600, dtype=np.int16), rate=16000)
    b = _write(tmp_path / "c" / "b.wav", np.ones(800, dtype=np.int16), rate=8000)
    c = _write(tmp_path / "c" / "c.wav", np.ones(800, dtype=np.int16), rate=22050)
    assert ingest(str(a)).sample_rate == 8000
    assert len(ingest(str(b))) == 800
    with pytest.raises(FormatError):
        ingest(str(c))


def test_make_batches_sizes_and_padding():
    utts = [_utt(8000 if i % 2 == 0 else 7000, label=i % 3) for i in range(10)]
    batches = make_batches(utts, 4, seed=0, shuffle=False)
    assert [len(labels) for _, labels in batches] == [4, 4, 2]
    waves, labels = batches[0]
    assert waves.shape == (4, 1, 8000)
    assert not np.any(waves[1, 0, 7000:])
    assert np.count_nonzero(waves[1]) == 7000
    assert list(labels) == [0, 1, 2, 0]


def test_make_batches_seeded_shuffle():
    utts = [_utt(10 + i, label=i) for i in range(12)]
    first = [list(labels) for _, labels in make_batches(utts, 5, seed=4)]
    again = [list(labels) for _, labels in make_batches(utts, 5, seed=4)]
    other = [list(labels) for _, labels in make_batches(utts, 5, seed=5)]
    assert first == again
    assert first != other


def test_make_batches_errors():
    with pytest.raises(InvalidArgumentError):
        make_batches([], 4)
    with pytest.raises(InvalidArgumentError):
        make_batches([_utt(5)], 0)


def test_pad_batch_min_length():
    assert pad_batch([_utt(10)], min_length=80).shape == (1, 1, 80)


def test_split_uses_testing_list(tone_root):
    split = split_dataset(str(tone_root), seed=0, min_classes=2)
    assert split.label_names == ["tone_00", "tone_01"]
    assert len(split.test) == 10
    listed = (tone_root / TESTING_LIST).read_text().split()
    assert sorted(listed) == sorted(
        f"{split.label_names[split.labels[i]]}/{split.paths[i].split('/')[-1]}" for i in split.test
    )
    dev = len(split.development)
    assert dev == 30
    assert abs(len(split.train) - 0.9 * dev) <= 1
    assert not set(split.train) & set(split.validation)
    assert not set(split.test) & set(split.development)


def test_split_is_seeded(tone_root):
    a = split_dataset(str(tone_root), seed=1, min_classes=2)
    b = split_dataset(str(tone_root), seed=1, min_classes=2)
    c = split_dataset(str(tone_root), seed=2, min_classes=2)
    assert a.train == b.train and a.validation == b.validation
    assert a.validation != c.validation


def test_split_fallback_draw(tmp_path):
    generate_tone_dataset(str(tmp_path), n_classes=2, clips_per_class=10, duration=0.05, test_per_class=1)
    (tmp_path / TESTING_LIST).unlink()
    split = split_dataset(str(tmp_path), seed=0, min_classes=2)
    assert len(split.test) == round(0.368 * 20)
    assert len(split.test) + len(split.development) == 20
    small = split_dataset(str(tmp_path), seed=0, min_classes=2, test_size=3)
    assert len(small.test) == 3


def test_split_errors(tmp_path, tone_root):
    with pytest.raises(DatasetError):
        split_dataset(str(tone_root), min_classes=35)
    with pytest.raises(DatasetError):
        split_dataset(str(tmp_path / "missing"))


def test_tone_generator_layout(tmp_path):
    written = generate_tone_dataset(str(tmp_path), n_classes=3, clips_per_class=4, duration=0.1, test_per_class=1, seed=0)
    assert len(written) == 12
    assert len((tmp_path / TESTING_LIST).read_text().split()) == 3
    rate, data = wavfile.read(str(tmp_path / written[0]))
    assert rate == 8000 and data.dtype == np.int16 and len(data) == 800
    with pytest.raises(InvalidArgumentError):
        generate_tone_dataset(str(tmp_path), clips_per_class=2, test_per_class=2)


def test_dataset_parts_and_manifest(tone_dataset, tone_root):
    assert tone_dataset.n_classes == 2
    assert all(u.sample_rate == 8000 and len(u) == 4000 for u in tone_dataset.utterances)
    counts = tone_dataset.split.counts()
    assert sum(counts.values()) == 40
    records = manifest_records(tone_dataset, str(tone_root))
    assert len(records) == 40
    assert {r["split"] for r in records} == {"train", "validation", "test"}
    assert records[0]["path"].startswith("tone_00/")
    assert all(r["length"] == 4000 for r in records)

"""Speech-command dataset ingestion: WAV decoding, 16 kHz -> 8 kHz resampling,
split management and zero-padded batching.

The expected layout is one folder per command word, each holding 16-bit
PCM mono WAV files, plus an optional ``testing_list.txt`` with
``<label>/<file>.wav`` lines.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator
from scipy.io import wavfile
from scipy.signal import firwin, upfirdn
from termcolor import colored

from src.errors import DatasetError, FormatError, InvalidArgumentError

logger = logging.getLogger(__name__)

SOURCE_RATE = 16000
TARGET_RATE = 8000
FILTER_TAPS = 63
FILTER_CUTOFF_HZ = 3600.0
PCM_SCALE = 32768.0
TESTING_LIST = "testing_list.txt"
DEFAULT_TEST_SIZE = 6500
TEST_SHARE = 0.368
VALIDATION_SHARE = 0.1
MIN_CLASSES = 35

SPLIT_NAMES = ("train", "validation", "test")


class Utterance(BaseModel):
    """One decoded clip."""
    samples: np.ndarray
    sample_rate: int = Field(gt=0)
    label: int = Field(default=0, ge=0)
    label_name: str = ""
    source_path: str = ""

    model_config = {
        "arbitrary_types_allowed": True
    }

    @field_validator("samples", mode="before")
    @classmethod
    def as_float(cls, v):
        arr = np.asarray(v, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("utterance samples must be one-dimensional")
        return arr

    def __len__(self) -> int:
        return int(self.samples.shape[0])


class DatasetSplit(BaseModel):
    """File listing plus train/validation/test index lists into it."""
    paths: List[str]
    labels: List[int]
    label_names: List[str]
    train: List[int] = Field(default_factory=list)
    validation: List[int] = Field(default_factory=list)
    test: List[int] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_disjoint(self) -> "DatasetSplit":
        if len(self.paths) != len(self.labels):
            raise ValueError("paths and labels must align")
        train, val, test = set(self.train), set(self.validation), set(self.test)
        if train & val or train & test or val & test:
            raise ValueError("train, validation and test indices overlap")
        return self

    @property
    def development(self) -> List[int]:
        return sorted(self.train + self.validation)

    def indices(self, part: str) -> List[int]:
        if part not in SPLIT_NAMES:
            raise InvalidArgumentError(f"unknown split part '{part}'")
        return getattr(self, part)

    def counts(self) -> Dict[str, int]:
        return {part: len(self.indices(part)) for part in SPLIT_NAMES}


@dataclass
class Dataset:
    """Decoded utterances (aligned with `split.paths`) and their split."""
    utterances: List[Utterance]
    split: DatasetSplit

    @property
    def label_names(self) -> List[str]:
        return self.split.label_names

    @property
    def n_classes(self) -> int:
        return len(self.split.label_names)

    def part(self, name: str) -> List[Utterance]:
        return [self.utterances[i] for i in self.split.indices(name)]

    @classmethod
    def from_parts(
        cls,
        train: Sequence[Utterance],
        validation: Sequence[Utterance] = (),
        test: Sequence[Utterance] = (),
        label_names: Optional[Sequence[str]] = None,
    ) -> "Dataset":
        """In-memory dataset, mostly for tests."""
        utterances = [*train, *validation, *test]
        if label_names is None:
            label_names = [str(i) for i in range(max(u.label for u in utterances) + 1)]
        a, b = len(train), len(train) + len(validation)
        split = DatasetSplit(
            paths=[u.source_path or f"mem/{i}" for i, u in enumerate(utterances)],
            labels=[u.label for u in utterances],
            label_names=list(label_names),
            train=list(range(a)),
            validation=list(range(a, b)),
            test=list(range(b, len(utterances))),
        )
        return cls(utterances=list(utterances), split=split)


# ---------------------------------------------------------------------------
# Decoding and resampling
# ---------------------------------------------------------------------------

def load_wav(path: str, label_names: Optional[Sequence[str]] = None) -> Utterance:
    """Decode a 16-bit PCM mono WAV, scaling samples by 1/32768.

    The label is the parent folder name, mapped to its index in
    `label_names` when given.
    """
    path = Path(path)
    try:
        rate, data = wavfile.read(str(path))
    except (ValueError, EOFError, OSError) as e:
        logger.error(f"Failed to decode {path}: {str(e)}")
        raise FormatError(f"cannot decode WAV: {e}", path=str(path))
    if data.dtype != np.int16:
        raise FormatError(f"expected 16-bit PCM, got {data.dtype}", path=str(path))
    if data.ndim != 1:
        raise FormatError(f"expected mono audio, got {data.shape[1]} channels", path=str(path))

    label_name = path.parent.name
    label = 0
    if label_names is not None:
        if label_name not in label_names:
            raise DatasetError(f"unknown label folder '{label_name}' for {path}")
        label = list(label_names).index(label_name)
    return Utterance(
        samples=data.astype(np.float64) / PCM_SCALE,
        sample_rate=int(rate),
        label=label,
        label_name=label_name,
        source_path=str(path),
    )


def antialias_filter() -> np.ndarray:
    return firwin(FILTER_TAPS, FILTER_CUTOFF_HZ, fs=SOURCE_RATE, window="hamming")


def resample_16k_to_8k(u: Utterance) -> Utterance:
    """Low-pass (63-tap Hamming windowed sinc, 3.6 kHz) then keep every other sample.

    Output sample k is the filter centred on input sample 2k, so N input
    samples give ceil(N / 2) outputs. The ends are extended by odd
    reflection, which keeps constant and linear signals intact up to the
    first and last sample.
    """
    if u.sample_rate != SOURCE_RATE:
        raise InvalidArgumentError(f"expected a {SOURCE_RATE} Hz utterance, got {u.sample_rate} Hz")
    if len(u) == 0:
        return u.model_copy(update={"sample_rate": TARGET_RATE})
    half = FILTER_TAPS // 2
    if len(u) > 1:
        padded = np.pad(u.samples, half, mode="reflect", reflect_type="odd")
    else:
        padded = np.pad(u.samples, half, mode="edge")
    # full-convolution index 2 * (half + k) is centred on input sample 2k
    decimated = upfirdn(antialias_filter(), padded, up=1, down=2)
    n_out = (len(u.samples) + 1) // 2
    samples = decimated[half : half + n_out].copy()
    return u.model_copy(update={"samples": samples, "sample_rate": TARGET_RATE})


def ingest(path: str, label_names: Optional[Sequence[str]] = None) -> Utterance:
    """load_wav plus resampling; 8 kHz files pass through."""
    utterance = load_wav(path, label_names)
    if utterance.sample_rate == SOURCE_RATE:
        return resample_16k_to_8k(utterance)
    if utterance.sample_rate != TARGET_RATE:
        raise FormatError(f"unsupported sample rate {utterance.sample_rate}", path=str(path))
    return utterance


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

def label_folders(root: Path) -> List[str]:
    return sorted(
        p.name for p in root.iterdir()
        if p.is_dir() and not p.name.startswith((".", "_"))
    )


def _read_list(path: Path) -> set:
    with open(path, "r", encoding="utf-8") as f:
        return {line.strip().replace("\\", "/") for line in f if line.strip()}


def split_dataset(
    root: str,
    seed: int = 0,
    min_classes: int = MIN_CLASSES,
    test_size: int = DEFAULT_TEST_SIZE,
) -> DatasetSplit:
    """Deterministic train/validation/test split of a folder-per-label tree.

    The test part comes from ``testing_list.txt`` when present, otherwise
    from a seeded draw of ``min(test_size, round(0.368 * total))`` files.
    The remaining development files are shuffled with `seed` and split
    90/10 into train and validation.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root not found: {root}")
    names = label_folders(root)
    if len(names) < min_classes:
        raise DatasetError(f"found {len(names)} class folders, at least {min_classes} required")

    rel_paths: List[str] = []
    labels: List[int] = []
    for index, name in enumerate(names):
        for wav in sorted((root / name).glob("*.wav")):
            rel_paths.append(f"{name}/{wav.name}")
            labels.append(index)
    if not rel_paths:
        raise DatasetError(f"no WAV files under {root}")

    rng = np.random.default_rng(seed)
    testing_list = root / TESTING_LIST
    if testing_list.exists():
        listed = _read_list(testing_list)
        test = [i for i, p in enumerate(rel_paths) if p in listed]
        logger.info(f"Test split from {TESTING_LIST}: {len(test)} files")
    else:
        n_test = min(test_size, int(round(TEST_SHARE * len(rel_paths))))
        test = sorted(rng.permutation(len(rel_paths))[:n_test].tolist())
        logger.info(f"Test split drawn with seed {seed}: {len(test)} files")

    test_set = set(test)
    development = np.array([i for i in range(len(rel_paths)) if i not in test_set], dtype=np.int64)
    shuffled = development[rng.permutation(len(development))]
    n_val = int(round(VALIDATION_SHARE * len(shuffled)))
    validation = sorted(shuffled[:n_val].tolist())
    train = sorted(shuffled[n_val:].tolist())

    return DatasetSplit(
        paths=[str(root / p) for p in rel_paths],
        labels=labels,
        label_names=names,
        train=train,
        validation=validation,
        test=test,
    )


def load_dataset(
    root: str,
    seed: int = 0,
    min_classes: int = MIN_CLASSES,
    test_size: int = DEFAULT_TEST_SIZE,
    workers: int = 4,
    progress: bool = False,
) -> Dataset:
    """Split the tree and decode every file (thread pool, order preserved)."""
    split = split_dataset(root, seed, min_classes, test_size)
    print(colored(f"→ Decoding {len(split.paths)} utterances from {root}", "blue"))
    try:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            utterances = list(pool.map(lambda p: ingest(p, split.label_names), split.paths))
    except Exception as e:
        logger.error(f"Error loading dataset {root}: {str(e)}")
        print(colored(f"❌ Error loading dataset: {str(e)}", "red"))
        raise
    counts = split.counts()
    print(colored(f"✓ Loaded {len(split.label_names)} classes: {counts}", "green"))
    logger.info(f"Loaded dataset {root}: {counts}")
    return Dataset(utterances=utterances, split=split)


def manifest_records(dataset: Dataset, root: Optional[str] = None) -> List[Dict[str, object]]:
    """One record per utterance: path (relative to `root` when given), label, split, length."""
    part_of: Dict[int, str] = {}
    for part in SPLIT_NAMES:
        for i in dataset.split.indices(part):
            part_of[i] = part
    return [
        {
            "path": Path(path).relative_to(root).as_posix() if root else path,
            "label": dataset.split.label_names[dataset.split.labels[i]],
            "split": part_of.get(i, "unused"),
            "length": len(dataset.utterances[i]),
        }
        for i, path in enumerate(dataset.split.paths)
    ]


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------

def pad_batch(utterances: Sequence[Utterance], min_length: int = 0) -> np.ndarray:
    """``[B, 1, L]`` with each row right-padded with zeros to the longest utterance."""
    length = max(max(len(u) for u in utterances), min_length)
    out = np.zeros((len(utterances), 1, length), dtype=np.float64)
    for row, u in enumerate(utterances):
        out[row, 0, :len(u)] = u.samples
    return out


def make_batches(
    utterances: Sequence[Utterance],
    batch_size: int,
    seed: int = 0,
    shuffle: bool = True,
    min_length: int = 0,
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """(waveforms, labels) batches; the last batch may be partial."""
    if len(utterances) == 0:
        raise InvalidArgumentError("cannot batch an empty split")
    if batch_size < 1:
        raise InvalidArgumentError(f"batch_size must be positive, got {batch_size}")
    order = np.random.default_rng(seed).permutation(len(utterances)) if shuffle else np.arange(len(utterances))
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = [utterances[i] for i in order[start:start + batch_size]]
        labels = np.array([u.label for u in chunk], dtype=np.int64)
        batches.append((pad_batch(chunk, min_length), labels))
    return batches


# ---------------------------------------------------------------------------
# Synthetic tone dataset
# ---------------------------------------------------------------------------

def tone_frequencies(n_classes: int) -> np.ndarray:
    return np.linspace(300.0, 3400.0, n_classes) if n_classes > 1 else np.array([1000.0])


def generate_tone_dataset(
    root: str,
    n_classes: int = 4,
    clips_per_class: int = 50,
    duration: float = 0.5,
    sample_rate: int = TARGET_RATE,
    test_per_class: int = 10,
    seed: int = 0,
) -> List[str]:
    """Write one folder of constant tones per class and a testing list.

    Each clip gets a seeded amplitude and phase jitter plus low white
    noise. Returns the written paths relative to `root`.
    """
    if n_classes < 1 or clips_per_class < 1:
        raise InvalidArgumentError("need at least one class and one clip per class")
    if not 0 <= test_per_class < clips_per_class:
        raise InvalidArgumentError("test_per_class must leave development clips")
    root = Path(root)
    rng = np.random.default_rng(seed)
    t = np.arange(int(round(duration * sample_rate))) / sample_rate
    written: List[str] = []
    testing: List[str] = []
    for k, freq in enumerate(tone_frequencies(n_classes)):
        name = f"tone_{k:02d}"
        (root / name).mkdir(parents=True, exist_ok=True)
        for clip in range(clips_per_class):
            amplitude = 0.5 + rng.uniform(-0.1, 0.1)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            wave = amplitude * np.sin(2.0 * np.pi * freq * t + phase) + 0.01 * rng.standard_normal(t.shape)
            pcm = np.clip(np.round(wave * PCM_SCALE), -32768, 32767).astype(np.int16)
            rel = f"{name}/clip_{clip:03d}.wav"
            wavfile.write(str(root / rel), sample_rate, pcm)
            written.append(rel)
            if clip >= clips_per_class - test_per_class:
                testing.append(rel)
    with open(root / TESTING_LIST, "w", encoding="utf-8") as f:
        f.write("".join(f"{line}\n" for line in testing))
    logger.info(f"Wrote {len(written)} synthetic clips to {root}")
    return written


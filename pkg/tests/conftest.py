"""Shared fixtures: synthetic tone datasets written as 8 kHz WAV trees."""
import numpy as np
import pytest
from termcolor import colored

from src.audiodata import generate_tone_dataset, load_dataset


@pytest.fixture(scope="session")
def tone_root(tmp_path_factory):
    """2 classes x 20 clips of 0.5 s, 5 test clips per class"""
    root = tmp_path_factory.mktemp("tones2")
    print(colored("\n=== Writing synthetic tone dataset (2 x 20) ===", "blue"))
    generate_tone_dataset(str(root), n_classes=2, clips_per_class=20, duration=0.5, test_per_class=5, seed=3)
    return root


@pytest.fixture(scope="session")
def tone_dataset(tone_root):
    return load_dataset(str(tone_root), seed=0, min_classes=2, workers=2)


@pytest.fixture(scope="session")
def tone_root_4(tmp_path_factory):
    """4 classes x 50 clips of 0.5 s, 10 test clips per class"""
    root = tmp_path_factory.mktemp("tones4")
    print(colored("\n=== Writing synthetic tone dataset (4 x 50) ===", "blue"))
    generate_tone_dataset(str(root), n_classes=4, clips_per_class=50, duration=0.5, test_per_class=10, seed=11)
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

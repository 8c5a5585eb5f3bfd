import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"
GOLDEN = Path(__file__).resolve().parent / "golden"

sys.path.insert(0, str(Path(__file__).resolve().parent))

from sept.encoder import TextEncoder
from sept.prompting import ClassSet, NeighborSet, PromptSpace, TemplatePool


@pytest.fixture(scope="session")
def small_encoder():
    return TextEncoder(dim=8, hidden=16, vocab_size=512, max_len=16, seed=7)


@pytest.fixture(scope="session")
def toy_classes():
    return ClassSet.from_names(["dog", "rain", "siren", "piano"])


@pytest.fixture(scope="session")
def toy_neighbors():
    return NeighborSet.build([
        ["dog sound", "barking dog", "dog noise"],
        ["rain sound", "steady rain", "rain noise"],
        ["siren sound", "wailing siren", "siren noise"],
        ["piano sound", "piano chord", "piano noise"],
    ])


@pytest.fixture(scope="session")
def toy_pool():
    return TemplatePool(templates=(
        "This is a sound of {class}",
        "a recording of {class}",
        "the noise made by {class}",
    ))


@pytest.fixture(scope="session")
def toy_space(small_encoder, toy_classes, toy_neighbors):
    return PromptSpace(small_encoder, toy_classes, m_ctx=2, neighbors=toy_neighbors)


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def golden_dir():
    return GOLDEN


def random_unit(rng, d):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)

import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from voxsr.networks import DecoderConfig, EncoderConfig, ModelConfig, init_model  # noqa: E402
from voxsr.volume_io import Volume  # noqa: E402

torch.set_num_threads(1)

ACCEPTANCE_LINES: list[str] = []


def tiny_config(variant="rdn", channels=4, hidden=16):
    enc = EncoderConfig(variant=variant, base_channels=4, num_blocks=1, convs_per_block=2,
                        growth_rate=4, out_channels=channels)
    return ModelConfig(enc, DecoderConfig(in_features=channels + 3, hidden=hidden))


@pytest.fixture
def tiny_model():
    return init_model(tiny_config(), rng_seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_volume(rng):
    return Volume(rng.random((6, 7, 5)).astype(np.float32), (0.7, 0.8, 0.9))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

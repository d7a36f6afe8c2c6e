import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tgvad.detection import ModelConfig
from tgvad.encoders import EncoderConfig
from tgvad.msbt import MsbtConfig

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_encoder():
    return EncoderConfig(d_embed=8, n_heads=2)


@pytest.fixture
def tiny_model_config(tiny_encoder):
    """Two modalities, D_E=8, two fusion layers starting from two tokens."""
    return ModelConfig(
        modalities=("T", "R"),
        input_dims={"T": 5, "R": 3},
        encoder=tiny_encoder,
        msbt=MsbtConfig(fusion_layers=2, bottleneck_tokens=2),
        global_layers=1,
        score_hidden=(6, 4),
        seed=7,
    )


@pytest.fixture
def tiny_features(rng):
    return {"T": rng.normal(size=(4, 5)), "R": rng.normal(size=(4, 3))}


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

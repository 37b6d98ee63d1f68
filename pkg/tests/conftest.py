import numpy as np
import pytest

from duffin.data import make_dataset, scenario
from duffin.model import ModelConfig, build_model
from duffin.trainer import TrainConfig, train

# Desk-scale toy geometry: 16x16 truncated images from 256 subcarriers, T=16.
TOY_GEOMETRY = dict(ns=16, nt=16, nc=256)
TOY_MODEL = ModelConfig(ns=16, nt=16, feature_channels=16)


def toy_train_config(epochs: int, **kw) -> TrainConfig:
    base = dict(epochs=epochs, batch_size=2, val_fraction=0.0, warmup=max(1, epochs // 7), eval_every=epochs)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def toy_indoor():
    return make_dataset(scenario("indoor", seed=1, **TOY_GEOMETRY), 32)


@pytest.fixture(scope="session")
def trained_toy(toy_indoor):
    """A toy model trained for 60 epochs on ``toy_indoor`` (about -16 dB)."""
    return train(build_model(TOY_MODEL, seed=0), toy_indoor, toy_train_config(60)).model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# One verdict line per acceptance criterion, printed after the run.
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])

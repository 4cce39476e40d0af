import numpy as np
import pytest

from fdfo.datasets import DatasetSpec
from fdfo.pretrain import ModelConfig, PretrainConfig, pretrain
from fdfo.rewards import CombinedReward, RewardSpec

# shared pretraining budgets; the acceptance thresholds were checked against these exact nets
RING8_STEPS = 8000
GAUSS1D_STEPS = 20000


@pytest.fixture(scope="session")
def ring8_spec():
    return DatasetSpec("ring8")


@pytest.fixture(scope="session")
def ring8_net(ring8_spec):
    net, _, _ = pretrain(ring8_spec, ModelConfig(), PretrainConfig(steps=RING8_STEPS, log_every=0), seed=0)
    return net


@pytest.fixture(scope="session")
def gauss1d_spec():
    return DatasetSpec("gauss1d", sigma_d=1.0)


@pytest.fixture(scope="session")
def gauss1d_net(gauss1d_spec):
    net, _, losses = pretrain(gauss1d_spec, ModelConfig(), PretrainConfig(steps=GAUSS1D_STEPS, log_every=0), seed=0)
    return net


@pytest.fixture(scope="session")
def halfplane():
    return CombinedReward(((RewardSpec("sigmoid_halfplane", direction=(0.0, 1.0), gain=2.0), 1.0),))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)

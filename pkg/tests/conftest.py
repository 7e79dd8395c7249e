import sys

import numpy as np
import pytest

from cpnet.dataio import AttributeTable, EmbeddingTable, SplitSpec, validate_bundle
from cpnet.synth import SynthConfig, generate
from cpnet.training import SgdConfig, pretrain


@pytest.fixture(scope="session")
def default_synth():
    return generate(SynthConfig())


@pytest.fixture(scope="session")
def default_bundle(default_synth):
    return default_synth[0]


@pytest.fixture(scope="session")
def small_synth():
    return generate(SynthConfig(M=8, d=12, n_base=10, n_val=6, n_novel=6, per_class=20, sigma=0.3, seed=5))


@pytest.fixture(scope="session")
def pretrained_default(default_bundle):
    return pretrain(default_bundle, SgdConfig.pretrain_defaults())


@pytest.fixture
def toy_bundle():
    """4 classes with 4 records each; class c sits near the c-th axis."""
    rs = np.random.default_rng(0)
    labels = np.repeat([1, 2, 3, 4], 4)
    feats = np.eye(4)[labels - 1] + 0.01 * rs.normal(size=(16, 4))
    attrs = AttributeTable((1, 2, 3, 4), np.eye(4) + 0.1)
    return validate_bundle(EmbeddingTable(feats, labels), attrs, SplitSpec({1, 2}, {3}, {4}))


def pytest_terminal_summary(terminalreporter):
    mod = next((m for name, m in list(sys.modules.items()) if name.split(".")[-1] == "test_acceptance"), None)
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])

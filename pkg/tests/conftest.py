from __future__ import annotations

import time

import numpy as np
import pytest

from lcsurrogate import dataset, lcsim, mlp

SEED = 7
SPLIT = (16000, 6500, 4500)

# criterion number -> (passed, detail); filled by the acceptance tests
ACCEPTANCE: dict[int, tuple[bool, str]] = {}
# fixture name -> seconds spent building it
BUILD_SECONDS: dict[str, float] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def noiseless_device():
    return lcsim.DeviceConfig(depolarization=0.0)


@pytest.fixture(scope="session")
def twin_data(noiseless_device):
    """27,000 noiseless twin samples split 16,000 / 6,500 / 4,500."""
    data = dataset.generate(27000, "random", None, noiseless_device, SEED)
    return dataset.split(data, dataset.SplitSpec(*SPLIT, seed=SEED))


@pytest.fixture(scope="session")
def direct_model(twin_data):
    train, val, _ = twin_data
    t0 = time.perf_counter()
    model = mlp.train_direct(train, val, mlp.TrainConfig(seed=SEED))
    BUILD_SECONDS["direct_model"] = time.perf_counter() - t0
    return model


@pytest.fixture(scope="session")
def compound_model(twin_data, direct_model):
    train, val, _ = twin_data
    t0 = time.perf_counter()
    model = mlp.train_compound(direct_model, train, val, mlp.compound_config(seed=SEED))
    BUILD_SECONDS["compound_model"] = time.perf_counter() - t0
    return model

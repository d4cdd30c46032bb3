import os
import tempfile

# log 檔不要寫進原始碼目錄
os.environ.setdefault("LAB_LOG_DIR", tempfile.mkdtemp(prefix="lab-log-"))

import numpy as np
import pytest

from static.payload import MultiplierSettings, SuiteConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def strict_pair():
    from function.harness import gen_pair
    return gen_pair(0, 2, 0.25)


@pytest.fixture
def pair4():
    from function.harness import gen_pair
    return gen_pair(1, 4, 0.25)


@pytest.fixture
def small_settings():
    return MultiplierSettings(grid_sizes=[8, 16], restarts=4, iters=200, trials=4)


@pytest.fixture
def small_config(tmp_path):
    return SuiteConfig(
        dims=[2], n_instances=1, out=str(tmp_path),
        battery={"kinds": ["resolvent_powers", "lower_poles"], "count": 2},
        domination_vectors=2000,
        multiplier={"grid_sizes": [8, 16], "restarts": 4, "iters": 200, "trials": 4},
    )

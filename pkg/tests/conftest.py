import os

import numpy as np
import pytest

from gprinv.config import RunConfig, validate


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """A fast scene/survey configuration for 8^3 test datasets."""
    from gprinv.config import config_from_dict

    return config_from_dict({
        "scene": {"object_counts": [1, 2], "seed": 3, "n_scenes": 4},
        "survey": {"time_window": 6e-9, "time_samples": 64},
        "grid": {"dims": [8, 8, 8]},
        "model": {"denoiser": {"m": 1, "channels": 2, "reduction": 2},
                  "inverter": {"n": 1, "channels": 2, "msfa": True}},
        "train": {"epochs": 2, "batch_size": 2},
        "fine_tune": {"epochs": 1, "batch_size": 2},
    })


@pytest.fixture
def default_config():
    return validate(RunConfig())


def pytest_report_header(config):
    from gprinv import BACKEND

    return f"gprinv kernel backend: {BACKEND} (GPRINV_BACKEND={os.environ.get('GPRINV_BACKEND', '')!r})"

import dataclasses

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pcn.datagen import DATA_PRESETS, build_dataset, perturb_dataset
from pcn.model import preset
from pcn.training import TRAIN_PRESETS, train

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """The toy preset: 4 shapes x 8 views, N=1024, s=64."""
    return build_dataset(DATA_PRESETS["toy"], tmp_path_factory.mktemp("toy"))


@pytest.fixture(scope="session")
def overfit_dataset(tmp_path_factory):
    """Four shapes seen from one view each, the memorisation set."""
    cfg = dataclasses.replace(DATA_PRESETS["toy"], views=1)
    return build_dataset(cfg, tmp_path_factory.mktemp("overfit"))


@pytest.fixture(scope="session")
def robust_model(toy_dataset, tmp_path_factory):
    """Toy model trained on clean pairs plus a copy with depth noise and 1% far outliers (no occlusion)."""
    noisy = perturb_dataset(toy_dataset, tmp_path_factory.mktemp("toy-noisy"), 0.01, 0.0, 0.01, seed=0)
    params, _ = train(preset("toy"), TRAIN_PRESETS["toy"], toy_dataset.load() + noisy.load())
    return params


# criterion number -> (title, passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:>2}. {title}: {detail}")

# tests/conftest.py - Shared fixtures: planted models, calibration data, temp files
import numpy as np
import pytest

import config
from modelio.calibration import CalibrationBatch, random_embeddings, save_calibration
from modelio.container import save_model
from tests.factories import planted_model


@pytest.fixture(autouse=True)
def _quiet_progress(monkeypatch):
    monkeypatch.setattr(config, "SHOW_PROGRESS", False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def planted():
    return planted_model()


@pytest.fixture
def batch():
    return CalibrationBatch(random_embeddings(64, 16, seed=7), "fixture")


@pytest.fixture
def held_out():
    return CalibrationBatch(random_embeddings(64, 16, seed=99), "held-out")


@pytest.fixture
def calib_file(tmp_path):
    path = tmp_path / "calib.bin"
    save_calibration(random_embeddings(400, 16, seed=3), path, source_id="fixture")
    return path


@pytest.fixture
def planted_file(tmp_path, planted):
    path = tmp_path / "planted.bin"
    save_model(planted, path)
    return path

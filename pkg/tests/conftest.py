import numpy as np
import pytest

from qcs_sim.frames import phase_singlet
from qcs_sim.qmath import DensityMatrix


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


@pytest.fixture
def singlet():
    return DensityMatrix.from_pure(phase_singlet(0.0))


@pytest.fixture
def output_env(tmp_path, monkeypatch):
    """Point the default output directory at a temporary folder."""
    monkeypatch.setenv("QCS_OUTPUT_DIR", str(tmp_path))
    monkeypatch.setenv("QCS_LOG_LEVEL", "WARNING")
    monkeypatch.delenv("QCS_SEED", raising=False)
    monkeypatch.delenv("QCS_WORKERS", raising=False)
    return tmp_path

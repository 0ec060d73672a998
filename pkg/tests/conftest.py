from __future__ import annotations

import numpy as np
import pytest

from asyncpca import build_spectral_model

# The reference spectrum used throughout: descending, unit gaps, d=4.
LAM = (4.0, 3.0, 2.0, 1.0)

SADDLE = np.array([0.0, 1.0, 0.0, 0.0])


@pytest.fixture(scope="session")
def model():
    return build_spectral_model(LAM)


def unit(vec) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64)
    return v / np.linalg.norm(v)

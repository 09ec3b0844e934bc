from __future__ import annotations

import numpy as np
import pytest

from dyname.data import SeriesStore, split_indices


def store_from(values: np.ndarray) -> SeriesStore:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    pretrain_end, val_end = split_indices(values.shape[0])
    names = [f"ch{i}" for i in range(values.shape[1])]
    return SeriesStore(values, names, pretrain_end, val_end)


@pytest.fixture
def sine_store() -> SeriesStore:
    t = np.arange(1000)
    return store_from(np.sin(2 * np.pi * t / 24))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)

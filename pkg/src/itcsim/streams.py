"""Keyed random streams.

Every stream is a PCG64 generator seeded from a ``SeedSequence`` whose
entropy is the master seed followed by a domain tag and integer keys, so a
stream depends only on *what* it is for, never on scheduling order.
"""
from __future__ import annotations

import numpy as np

_DATA = 0
_BOOTSTRAP = 1
_CALIBRATION = 2

METHOD_KEYS = {"bucher": 0, "maic": 1, "gcomp": 2}


def _stream(master_seed: int, *keys: int) -> np.random.Generator:
    if master_seed < 0:
        raise ValueError("master seed must be a non-negative integer")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([master_seed, *keys])))


def data_stream(master_seed: int, replicate: int, study_index: int) -> np.random.Generator:
    return _stream(master_seed, _DATA, replicate, study_index)


def bootstrap_stream(master_seed: int, replicate: int, method: str, resample: int) -> np.random.Generator:
    return _stream(master_seed, _BOOTSTRAP, replicate, METHOD_KEYS[method], resample)


def calibration_stream(master_seed: int, study_index: int) -> np.random.Generator:
    return _stream(master_seed, _CALIBRATION, study_index)

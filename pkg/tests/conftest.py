"""Shared fixtures. The oracle takes ~1 min to train, so it is trained once
per session and cached on disk for repeated local runs."""

from pathlib import Path

import pytest

from tegan.metrics import load_oracle, save_oracle, train_oracle

CACHE = Path(__file__).resolve().parent.parent / ".cache" / "test_oracle.pt"


@pytest.fixture(scope="session")
def oracle():
    if CACHE.exists():
        try:
            return load_oracle(CACHE)
        except Exception:
            CACHE.unlink()
    o = train_oracle(seed=0)
    save_oracle(CACHE, o)
    return o


@pytest.fixture(scope="session")
def oracle_path(oracle):
    return str(CACHE)

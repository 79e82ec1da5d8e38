import os

import pytest


@pytest.fixture
def tmp_cache(tmp_path, monkeypatch):
    """Point the reference cache at a throwaway directory."""
    cache = tmp_path / "cache"
    monkeypatch.setenv("LLOD_CACHE_DIR", str(cache))
    return cache


def pytest_configure(config):
    # keep the long-running reference cache stable across invocations
    os.environ.setdefault("LLOD_CACHE_DIR",
                          os.path.join(os.path.dirname(__file__), "..",
                                       ".llod_cache"))

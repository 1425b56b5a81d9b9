import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

import tables  # noqa: E402
from weights import make_weight  # noqa: E402


@pytest.fixture(scope="session", autouse=True)
def isolated_cache(tmp_path_factory):
    """Point the table cache at a per-session directory."""
    original = tables.CACHE_DIR
    tables.CACHE_DIR = tmp_path_factory.mktemp("tables")
    tables.reset_cache_stats()
    yield tables.CACHE_DIR
    tables.CACHE_DIR = original
    tables.reset_cache_stats()


@pytest.fixture(scope="session")
def table_for():
    """Session-wide table builder: table_for("sphere", 64)."""
    built = {}

    def build(family: str, n: int):
        key = (family, n)
        if key not in built:
            built[key] = tables.load_or_build(make_weight(family), n)
        return built[key]

    return build

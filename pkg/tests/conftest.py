from __future__ import annotations

import pytest

from plate_bench.forge import ForgeSpec, forge_dataset
from plate_bench.manifest import DatasetManifest


@pytest.fixture(scope="session")
def small_forged(tmp_path_factory) -> tuple[DatasetManifest, str]:
    """A 20-image forged dataset shared by backend/harness tests."""
    out = tmp_path_factory.mktemp("forged-small")
    manifest = forge_dataset(ForgeSpec(seed=11, count=20), out)
    return manifest, str(out)

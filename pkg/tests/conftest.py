import importlib
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


def _backends():
    mods = [importlib.import_module("proxyscope._pure")]
    try:
        mods.append(importlib.import_module("proxyscope._speedups"))
    except ImportError:
        pass
    return mods


BACKENDS = _backends()


@pytest.fixture(params=BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def backend(request):
    """Each kernel implementation in turn."""
    return request.param

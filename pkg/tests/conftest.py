import sys
from pathlib import Path

import pytest

from hairbench import engine

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(autouse=True)
def _float64_default():
    """Gradient checks require 64-bit mode; make every test start there."""
    engine.set_precision("float64")
    yield
    engine.set_precision("float64")

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from pcq.netcore import ParamStore  # noqa: E402


@pytest.fixture
def store() -> ParamStore:
    return ParamStore(seed=0)

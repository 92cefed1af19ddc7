import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from knnprune.core import Datastore  # noqa: E402


def make_store(keys, known, values=None, vocab_size=16):
    keys = np.asarray(keys, dtype=np.float32)
    if keys.ndim == 1:
        keys = keys[:, None]
    if values is None:
        values = np.zeros(keys.shape[0], dtype=np.int64)
    return Datastore.from_arrays(keys, values, known, vocab_size=vocab_size)


@pytest.fixture
def line_store():
    """dim-1 keys {0, 1, 2, 10}; the entry at 2.0 is unknown."""
    return make_store([0.0, 1.0, 2.0, 10.0], [True, True, False, True], values=[0, 1, 2, 3])


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

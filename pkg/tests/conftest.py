import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def speech_8k():
    """4 s of real read speech (CMU Arctic), resampled to 8 kHz."""
    from dpsrecon.audio import read_wav, resample

    x, rate = read_wav(DATA / "arctic_a0007.wav")
    return resample(x, rate, 8000)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)

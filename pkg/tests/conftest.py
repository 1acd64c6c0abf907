import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ecgrecon.synthetic import synthetic_windows, write_synthetic_corpus  # noqa: E402

ACCEPTANCE_RESULTS: list[tuple[str, str, str]] = []


def record_acceptance(criterion: str, status: str, detail: str = "") -> None:
    ACCEPTANCE_RESULTS.append((criterion, status, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for crit, status, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"[{status:4s}] {crit}" + (f" -- {detail}" if detail else ""))


@pytest.fixture(scope="session")
def windows():
    return synthetic_windows(24, seed=7)


@pytest.fixture(scope="session")
def synthetic_raw(tmp_path_factory):
    root = tmp_path_factory.mktemp("raw")
    write_synthetic_corpus(root / "ptbxl", "ptbxl", 30, seed=1)
    # 30 s, 31 s, 41 s -> 3 + 3 + 5 windows at 125 Hz
    write_synthetic_corpus(root / "ptb", "ptb", 3, seed=2, durations=[30.0, 31.0, 41.0])
    return root


@pytest.fixture(scope="session")
def processed(synthetic_raw, tmp_path_factory):
    from ecgrecon.dataio import prepare_corpus

    out = tmp_path_factory.mktemp("processed")
    prepare_corpus(synthetic_raw / "ptbxl", "ptbxl", out, seed=0)
    prepare_corpus(synthetic_raw / "ptb", "ptb", out, seed=0)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

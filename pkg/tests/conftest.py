import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from shdbench.data import SyntheticConfig, generate_synthetic_cohort  # noqa: E402
from shdbench.data.manifest import Cohort  # noqa: E402


def pytest_configure(config):
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_synthetic():
    """400-record cohort (320/40/40) held in memory."""
    return generate_synthetic_cohort(SyntheticConfig(n=400, seed=3))


@pytest.fixture(scope="session")
def small_cohort(small_synthetic):
    return Cohort(small_synthetic.manifest, small_synthetic.store)


@pytest.fixture(scope="session")
def cohort_dir(tmp_path_factory):
    """A 300-record cohort written to disk."""
    out = tmp_path_factory.mktemp("cohort")
    generate_synthetic_cohort(SyntheticConfig(n=300, seed=5), out)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(name: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

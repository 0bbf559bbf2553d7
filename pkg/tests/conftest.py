import numpy as np
import pytest
import torch

from uqdm import checkpoint
from uqdm.diffusion import UQDM


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_model():
    """Untrained float64 swirl model, round-tripped through a checkpoint."""
    torch.manual_seed(0)
    return checkpoint.from_bytes(checkpoint.to_bytes(UQDM(2, T=4, hidden=64)))


_criteria = {}


@pytest.fixture
def report():
    """Record one acceptance line; the terminal summary lists them all."""

    def _report(number: int, ok: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _criteria[number] = line
        print(line, flush=True)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_criteria):
            terminalreporter.write_line(_criteria[n])

import numpy as np
import pytest

from bitforge.bitcore import PlanarImage


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# small enough that a full train/eval cycle takes seconds
TINY = dict(
    synth_count=6, synth_size=32, patch_size=16, batch_size=4, patches_per_epoch=8, epochs_total=4,
    sr_count=3, sr_size=32, sr_patch=16, sr_batch=2, sr_epochs=2, sr_steps_per_epoch=2,
    trunk_width=8, res_blocks=1, fused_width=16, ira_blocks=1, holdout_fraction=0.34,
)


def random_image(rng, depth, height=8, width=8):
    return PlanarImage(rng.integers(0, 1 << depth, size=(3, height, width)), depth)


def constant_image(value, depth, height=16, width=16):
    return PlanarImage(np.full((3, height, width), value), depth)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion; printed again in the run summary."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

from __future__ import annotations

import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from noma import field as nf  # noqa: E402
from noma import taskgen as tg  # noqa: E402
from noma.training import TrainConfig  # noqa: E402


@pytest.fixture(scope="session")
def small_mug():
    """A low-resolution mug task shared by the optimization tests."""
    return tg.make_task("mug", 123, frame_count_range=(8, 8), resolution=48, gt_res=48)


@pytest.fixture(scope="session")
def small_arch():
    return nf.FieldArch(hash_levels=4, features_per_level=2, log2_table_size=10,
                        base_resolution=4, per_level_scale=1.6, hidden_width=16)


@pytest.fixture(scope="session")
def small_cfg():
    return TrainConfig(n_rays=64, n_coarse=16, n_samples=16)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []
SESSION_START = time.perf_counter()


def pytest_collection_modifyitems(items):
    # the acceptance suite runs last so its wall-time check covers the whole run
    items.sort(key=lambda item: item.fspath.basename == "test_acceptance.py")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

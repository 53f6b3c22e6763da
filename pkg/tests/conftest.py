import numpy as np
import pytest

from weak2mask.annotation_io import load_dataset_index, load_gt_label
from weak2mask.synthetic import make_synthetic_voc


@pytest.fixture(scope="session")
def synthetic_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("synvoc")
    make_synthetic_voc(root, n_images=20, size=64, seed=0)
    return root


@pytest.fixture(scope="session")
def synthetic_index(synthetic_root):
    return load_dataset_index(synthetic_root, "train")


@pytest.fixture
def gt_lookup(synthetic_index):
    return lambda image_id: load_gt_label(synthetic_index, image_id)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "skipped"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance" not in getattr(rep, "nodeid", ""):
                continue
            verdict = [l for l in rep.capstdout.splitlines() if l.startswith("[")]
            name = rep.nodeid.split("::")[-1]
            number = name.split("_")[1].lstrip("c")
            fallback = f"[{'SKIP' if outcome == 'skipped' else outcome.upper()}] criterion {number}: {name}"
            lines.append((name, verdict[-1] if verdict else fallback))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)

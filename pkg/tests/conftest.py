import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sonarp.pipelines import RUNNERS, ExperimentSpec  # noqa: E402

SMALL = {
    "classification": {
        "data": {"val_per_class": 2, "test_per_class": 10},
        "sweeps": {"spc": [1]},
        "options": {"repeats": 3},
    },
    "transfer": {
        "data": {"val_per_class": 1, "test_per_class": 4, "feature_spc": 4},
        "network": {"n_modules": 1, "filters": 4},
        "train": {"epochs": 2},
        "sweeps": {"spc": [2, 3]},
        "options": {"layers": ["mp1", "fc1_relu"]},
    },
    "matching": {
        "data": {"n_classes": 2, "objects_per_class": 14},
    },
    "proposals": {
        "data": {"train_frames": 2, "test_frames": 3},
        "train": {"epochs": 1},
        "sweeps": {"t_o": [0.0, 0.1, 0.3, 0.5, 0.7, 0.9], "k": [1, 2, 3, 5, 10, 20],
                   "s_t": [None, 0.3, 0.5, 0.7, 0.9]},
        "options": {"tm_baseline": True, "templates_per_class": 1},
    },
    "detector": {
        "data": {"train_frames": 1, "test_frames": 1},
        "train": {"epochs": 1},
        "sweeps": {"t_o": [0.1, 0.5, 0.9], "gamma": [1.0]},
        "options": {"svm": True},
    },
    "tracker": {
        "data": {"n_classes": 2, "objects_per_class": 14, "train_frames": 2},
        "options": {"n_frames": 4, "objectness_train": {"epochs": 1}, "matcher_train": {"epochs": 1}},
        "sweeps": {"o_t": [0.1, 0.3, 0.5, 0.7, 0.9]},
    },
}


def small_spec(kind, out, seed=0, **over):
    d = {"kind": kind, "seed": seed, "out": str(out), **{k: dict(v) for k, v in SMALL[kind].items()}}
    for k, v in over.items():
        d[k] = {**d.get(k, {}), **v} if isinstance(v, dict) else v
    return ExperimentSpec.from_dict(d)


class SmallRuns:
    """Each small pipeline run once per session, twice when a rerun is asked for."""

    def __init__(self, root: Path):
        self.root = root
        self.cache = {}

    def get(self, kind, rep=0):
        key = (kind, rep)
        if key not in self.cache:
            spec = small_spec(kind, self.root / f"{kind}_{rep}")
            self.cache[key] = (RUNNERS[kind](spec), spec)
        return self.cache[key]


@pytest.fixture(scope="session")
def small_runs(tmp_path_factory):
    return SmallRuns(tmp_path_factory.mktemp("runs"))


# acceptance summary lines, filled by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")

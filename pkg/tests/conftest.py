import sys
import time
from pathlib import Path

import pytest

from ris_amc.cnn import Architecture, TrainConfig, build_model, train
from ris_amc.impairments import DatasetSpec, generate_dataset

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "scripts"))

# CI-scale training: 500 frames per class, default impairments and architecture
REDUCED_SPEC = DatasetSpec(frames_per_class=500, master_seed=0)
REDUCED_TRAIN = TrainConfig(batch_size=32)

_RESULTS = {}


def record(criterion, ok, detail):
    """Remember one acceptance verdict for the terminal summary."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    _RESULTS[criterion] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_RESULTS):
            terminalreporter.write_line(_RESULTS[k])


def run_reduced():
    """(dataset, TrainResult, seconds) for the reduced run."""
    t0 = time.perf_counter()
    ds = generate_dataset(REDUCED_SPEC)
    res = train(build_model(Architecture(), seed=0), ds, REDUCED_TRAIN)
    return ds, res, time.perf_counter() - t0


@pytest.fixture(scope="session")
def reduced_run():
    return run_reduced()


@pytest.fixture(scope="session")
def reduced_model(reduced_run):
    return reduced_run[1].best

import pytest

from sidestream.experiment import Dataset, SweepConfig
from sidestream.synth import SynthSpec, generate

SMALL_GRID = ((0.5, 2.0, 8.0), (2.0**-5, 2.0**-3))


@pytest.fixture(scope="session")
def small_synth():
    return generate(SynthSpec(n_stimuli=180, seed=11))


@pytest.fixture
def small_dataset(small_synth):
    ds = small_synth
    return Dataset(ds.voxels, ds.rois, ds.labeling, {"synth": ds.features})


def small_sweep_config(**overrides):
    kw = dict(categories=["humans", "buildings"], roi_names=list(SynthSpec().roi_layout),
              combos=[("EBA",), ("PPA",), ("EBA", "PPA")], seed=3, n_partitions=2, n_problems=2,
              inner_folds=3, grid=SMALL_GRID)
    kw.update(overrides)
    return SweepConfig(**kw)


ACCEPTANCE_LINES: list[str] = []


def acceptance_line(number, name: str, passed: bool, detail: str) -> bool:
    line = f"criterion {number:<3} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

import numpy as np
import pytest

from vidclearn.synthdata import Dataset, gen_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("small_data")
    gen_dataset(3, 3, seed=0, out_dir=root)
    return Dataset(root)


@pytest.fixture(scope="session")
def desk_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk_data")
    gen_dataset(12, 6, seed=0, out_dir=root)
    return Dataset(root)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, title, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:>2}. {title}: {detail}")

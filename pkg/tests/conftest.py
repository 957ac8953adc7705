import numpy as np
import pytest

from margin_lab import dataset as ds


@pytest.fixture(scope="session")
def data_dir(tmp_path_factory):
    """Directory holding the IDX corpus (real MNIST if MARGIN_LAB_DATA points
    at one, otherwise the deterministic synthetic stand-in in ./data)."""
    target = ds.default_data_dir()
    info = ds.ensure_dataset(target)
    print(f"\n[dataset] {info}")
    return target


@pytest.fixture(scope="session")
def train_raw(data_dir) -> ds.RawDataset:
    return ds.load_split(data_dir, "train")


@pytest.fixture(scope="session")
def test_raw(data_dir) -> ds.RawDataset:
    return ds.load_split(data_dir, "test")


def pytest_report_header(config):
    return f"margin-lab data dir: {ds.default_data_dir()}"


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)

import numpy as np
import pytest

from getnext import dataset as ds
from getnext import flow_map as fm
from getnext.config import TrainConfig


def small_config(**overrides) -> TrainConfig:
    base = dict(epochs=5, poi_dim=8, time_dim=4, gcn_hidden=(8, 16), tam_dim=8, ff_dim=16,
                encoder_layers=1, heads=2, lr=5e-3, dropout=0.1)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def cycle_data():
    raw = ds.synthesize(1, 8, 2, "cycle", seed=7)
    d = ds.preprocess(raw)
    return d, fm.build_from_dataset(d)


@pytest.fixture(scope="session")
def uniform_data():
    raw = ds.synthesize(6, 12, 3, "uniform", seed=3, checkins_per_user=120)
    d = ds.preprocess(raw)
    return d, fm.build_from_dataset(d)


def make_checkin(user="u1", poi="p1", ts=1_000_000, cat="c1", lat=40.7, lon=-74.0, tz=0):
    return ds.CheckIn(user, poi, cat, lat, lon, ts, tz)


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[2])):
            terminalreporter.write_line(line)

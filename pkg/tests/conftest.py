import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance checks")


@pytest.fixture(scope="session")
def walk_specs():
    """Spectrograms of one simulated round in the 8 x 6 m room, plus the walk."""
    from echoslam import dsp, room
    from echoslam.motion import WalkConfig, rectangle_waypoints, simulate_walk

    wp = rectangle_waypoints(0.4, 0.4, 7.0, 5.0)
    walk = simulate_walk(WalkConfig(wp, stride_m=22.4 / 58), rounds=1, seed=0)
    ds = room.synth_walk_dataset(room.Room.rectangle(8, 6), walk, seed=0)
    return dsp.compute_spectrogram(ds.traces), walk, ds


_ACCEPTANCE = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Records one line per acceptance criterion; printed in the terminal summary."""
    def record(name, passed, detail):
        line = f"{name} {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "efem", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("efem")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY_CONFIG = """\
# small, fast run of the full pipeline
scenario.break_sizes = 0.01,0.03,0.05,0.07,0.09,0.11
scenario.steps = 160
scenario.n_channels = 14
scenario.n_targets = 4
data.window_len = 10
data.horizon = 16
data.stride = 20
data.split = 4,1,1
network.hidden_dim = 8
network.linear_dim = 16
train.batch_size = 8
train.epochs = 2
uncertainty.n_passes = 5
"""


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CONFIG + f"output.dir = {tmp_path / 'out'}\n")
    return path


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

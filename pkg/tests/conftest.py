import numpy as np
import pytest

from mapunetr.model import MAPUNetR, ModelConfig

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        number, title = marker.args
        previous = _CRITERIA.get(number, (title, True))[1]
        _CRITERIA[number] = (title, previous and report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok = _CRITERIA[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return ModelConfig(image_size=(32, 32), in_channels=3, patch_size=8, embed_dim=16, num_heads=2,
                       depth=2, skip_layers=[0, 1], decoder_channels=[16, 8, 8], num_classes=2)


@pytest.fixture
def tiny_model(tiny_config):
    return MAPUNetR(tiny_config, seed=3, dtype=np.float64)


TINY_RUN = dict(image_size=[32, 32], patch_size=8, embed_dim=16, num_heads=2, depth=2, mlp_ratio=2.0,
                skip_layers=[0, 1], decoder_channels=[16, 8, 8], lr0=0.1, momentum=0.9, epochs=2,
                batch_size=2, val_fraction=0.25)


@pytest.fixture
def tiny_run_dict():
    return dict(TINY_RUN)

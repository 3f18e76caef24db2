import numpy as np
import pytest

from tdsse.core import ImageTensor

_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        status = "PASS" if report.passed else "FAIL"
        detail = props.get("detail", "")
        _ACCEPTANCE.append(f"[{status}] {props['criterion']}" + (f" -- {detail}" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, h=128, w=128, c=3):
    return ImageTensor(rng.integers(0, 256, (h, w, c), dtype=np.uint8))

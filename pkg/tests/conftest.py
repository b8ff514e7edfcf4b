import numpy as np
import pytest

from samoe.data import SyntheticDomainSpec, generate_domain, split
from samoe.protocol import DomainSplits, TrainConfig

_CRITERIA: dict[int, list[tuple[str, str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marks = getattr(report, "criterion", None)
    if marks is None:
        return
    values = "".join(f" {k}={_fmt(v)}" for k, v in report.user_properties)
    _CRITERIA.setdefault(marks, []).append((report.nodeid.split("::")[-1], report.outcome + values))


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ",".join(_fmt(x) for x in v) + "]"
    return str(v)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        rep.criterion = mark.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        results = _CRITERIA[n]
        ok = all(outcome.split()[0] == "passed" for _, outcome in results)
        names = ", ".join(f"{name}={outcome}" for name, outcome in results)
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  ({names})")


def tiny_splits(domains=(1, 2, 3), n_per_class=3, seed=0):
    return [
        DomainSplits(*split(generate_domain(SyntheticDomainSpec.from_seed(d, seed), n_per_class), 0.2, 0.2, 0))
        for d in domains
    ]


TINY_CFG = TrainConfig(specialist_epochs=2, router_epochs=2, batch_size=16)


@pytest.fixture(scope="session")
def tiny():
    return tiny_splits()


@pytest.fixture
def rng():
    return np.random.default_rng(0)

import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

REPO = Path(__file__).resolve().parent.parent


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def mnist_root():
    root = Path(os.environ.get("REPEATNET_DATA_DIR", REPO / "data"))
    if not (root / "mnist").is_dir():
        pytest.skip(f"no MNIST files under {root}; run scripts/prepare_mnist_subset.py")
    return root


# acceptance summary -------------------------------------------------------------

CRITERIA = {
    1: "relative contribution oracle",
    2: "gradient suites",
    3: "parameter-count laws",
    4: "degeneracy oracle",
    5: "FLOPs law and matched search",
    6: "CIFAR-10 desk-scale training effect",
    7: "MNIST depth-scaling smoke",
    8: "determinism and persistence",
    9: "multi-run statistics",
}
_outcomes: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n): test belongs to acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        if hasattr(rep, "wasxfail"):
            status = "xfail" if rep.skipped else "xpass"
        else:
            status = rep.outcome
        details = [v for k, v in item.user_properties if k == "detail"]
        if status == "xfail":
            details.append(f"expected failure: {rep.wasxfail}")
        _outcomes.setdefault(marker.args[0], []).append((item.name, status, details))


def _verdict(results):
    statuses = {s for _, s, _ in results}
    if statuses & {"failed", "xfail", "xpass"}:
        return "FAIL"
    if "skipped" in statuses:
        return "SKIP"
    return "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, title in CRITERIA.items():
        results = _outcomes.get(n)
        if not results:
            tr.write_line(f"criterion {n} ({title}): NOT RUN")
            continue
        counts = ", ".join(f"{name}={status}" for name, status, _ in results)
        tr.write_line(f"criterion {n} ({title}): {_verdict(results)}  [{counts}]")
        for _, _, details in results:
            for d in details:
                tr.write_line(f"    {d}")

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fedsim.dataset import SiteDataset

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def make_dataset(sites, labels, d=2, seed=0):
    """Tiny dataset with the given per-record site ids and labels."""
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels, dtype=np.int64)
    return SiteDataset(
        np.asarray(sites, dtype=str), labels, rng.normal(size=(labels.size, d)), 2
    )


@pytest.fixture
def tiny_dataset():
    sites = ["A"] * 10 + ["B"] * 8 + ["C"] * 5 + ["D"] * 3
    labels = [0, 1] * 13
    return make_dataset(sites, labels, d=3)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS, key=lambda k: (int(k.rstrip("abcd")), k)):
        ok, title, detail = RESULTS[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key:<3} {title}: {detail}")

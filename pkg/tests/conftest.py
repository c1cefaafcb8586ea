import numpy as np
import pytest

from robustps.dataset import Dataset, Schema
from robustps.fixtures import load


def random_dataset(seed=0, m=20, n_cont=2, n_disc=2, d=3, n_cat=3, pattern=None):
    """Small mixed dataset with every treatment class present."""
    rng = np.random.default_rng(seed)
    pairs = [(f"x{j}", "continuous") for j in range(n_cont)]
    pairs += [(f"c{j}", "discrete") for j in range(n_disc)]
    pairs.append(("t", "treatment"))
    cont = rng.normal(size=(m, n_cont)) * rng.uniform(0.5, 5, size=n_cont)
    disc = rng.integers(0, n_cat, size=(m, n_disc))
    cats = {f"c{j}": tuple(f"v{k}" for k in range(n_cat)) for j in range(n_disc)}
    treat = rng.permutation(np.arange(m) % d)
    labels = tuple(str(k + 1) for k in range(d))
    return Dataset(Schema.from_pairs(pairs), cont, disc, treat, cats, labels, pattern=pattern)


@pytest.fixture(scope="session")
def tables():
    return load()


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])

import numpy as np
import pytest

from cpl.core import TEST_SEEN, TEST_UNSEEN, TRAIN, Dataset
from cpl.dataio import SyntheticSpec, make_synthetic

ACCEPTANCE_SPEC = SyntheticSpec(K=27, L=10, S_per_class_train=50, n_test_per_class=30,
                                d_attr=16, d_feat=64, noise_sigma=0.1, seed=0)


def toy_dataset(n_seen=4, n_unseen=2, per_class=5, d_feat=3, d_attr=2, seed=0):
    """Small hand-sized dataset: every seen class has ``per_class`` train samples."""
    rng = np.random.default_rng(seed)
    n_classes = n_seen + n_unseen
    labels, split = [], []
    for c in range(n_seen):
        labels += [c] * (per_class + 1)
        split += [TRAIN] * per_class + [TEST_SEEN]
    for c in range(n_seen, n_classes):
        labels += [c] * 2
        split += [TEST_UNSEEN] * 2
    feats = rng.uniform(0, 1, size=(len(labels), d_feat))
    attrs = rng.uniform(0, 1, size=(n_classes, d_attr))
    return Dataset(feats, labels, attrs, tuple(range(n_seen)), tuple(range(n_seen, n_classes)), split)


@pytest.fixture
def toy():
    return toy_dataset()


@pytest.fixture(scope="session")
def synthetic():
    return make_synthetic(ACCEPTANCE_SPEC)


@pytest.fixture(scope="session")
def small_synthetic():
    return make_synthetic(SyntheticSpec(K=6, L=3, S_per_class_train=12, n_test_per_class=5,
                                        d_attr=4, d_feat=8, noise_sigma=0.1, seed=1))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])

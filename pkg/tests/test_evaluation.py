import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cpl.core import TEST_UNSEEN, ConfigError, Dataset, DatasetError
from cpl.evaluation import (
    evaluate_generalized,
    evaluate_standard,
    evaluate_with_prototypes,
    harmonic_mean,
    make_prototypes,
    per_class_accuracy,
    recognize,
)
from cpl.net import AttributeEmbedder, init_embedder
from cpl.objective import class_probabilities


def test_recognize_exact_match():
    protos = [(3, np.array([0.0, 1.0])), (5, np.array([2.0, 2.0])), (7, np.array([4.0, 0.0]))]
    assert recognize(np.array([2.0, 2.0]), protos) == 5


def test_recognize_tie_goes_to_lowest_id():
    protos = [(9, np.array([1.0])), (4, np.array([-1.0]))]
    assert recognize(np.array([0.0]), protos) == 4


def test_recognize_one_dimensional_enumeration():
    # distances from 2.9: 2.9, 1.9, 2.1
    protos = [(0, np.array([0.0])), (1, np.array([1.0])), (2, np.array([5.0]))]
    assert recognize(np.array([2.9]), protos) == 1


def test_recognize_needs_prototypes():
    with pytest.raises(ConfigError):
        recognize(np.array([1.0]), [])


@given(st.lists(st.floats(0, 100), min_size=2, max_size=10, unique=True), st.floats(0.05, 5))
def test_recognition_agrees_with_probability_argmax(points, gamma):
    protos = [(k, np.array([p])) for k, p in enumerate(points)]
    x = np.array([0.0])
    d = np.array([abs(p) for p in points])
    p = class_probabilities(d, gamma)
    if np.sum(d == d.min()) > 1 or np.sum(p == p.max()) > 1:
        return  # distances below float resolution of the softmax
    assert recognize(x, protos) == int(np.argmax(p))


def test_make_prototypes_zero_net():
    emb = init_embedder(3, 4, 5, 0).zeros_like()
    for _, p in make_prototypes(emb, np.ones((4, 3)), [0, 2]):
        assert not p.any()


def test_make_prototypes_scalar_net():
    emb = AttributeEmbedder(np.array([[2.0]]), np.array([-1.0]), np.array([[3.0]]), np.array([0.0]))
    out = make_prototypes(emb, np.array([[1.0], [0.0]]), [0, 1])
    assert [(c, p.tolist()) for c, p in out] == [(0, [3.0]), (1, [0.0])]


def test_make_prototypes_missing_row():
    with pytest.raises(DatasetError):
        make_prototypes(init_embedder(2, 2, 2, 0), np.ones((2, 2)), [0, 5])


def test_standard_two_of_four_and_one_of_one():
    ds = Dataset([[0.0], [0.1], [6.0], [9.0], [9.5]], [1, 1, 1, 1, 2], np.eye(3), (0,), (1, 2),
                 [TEST_UNSEEN] * 5)
    protos = [(1, np.array([0.0])), (2, np.array([9.2]))]
    report = evaluate_with_prototypes(ds, protos)
    assert report.counts == {1: (4, 2), 2: (1, 1)}
    assert report.acc_unseen == pytest.approx(0.75)
    assert report.acc_seen is None and report.harmonic_mean is None


def test_constant_prediction_gives_half():
    ds = Dataset([[0.0], [0.0], [1.0], [1.0]], [1, 1, 2, 2], np.eye(3), (0,), (1, 2), [TEST_UNSEEN] * 4)
    report = evaluate_with_prototypes(ds, [(1, np.array([0.5])), (2, np.array([100.0]))])
    assert report.acc_unseen == 0.5


def test_empty_class_excluded(caplog):
    ds = Dataset([[0.0], [1.0]], [1, 1], np.eye(4), (0,), (1, 2), [TEST_UNSEEN] * 2)
    report = evaluate_with_prototypes(ds, [(1, np.array([0.0])), (2, np.array([5.0]))])
    assert report.acc_unseen == 1.0
    assert 2 not in report.per_class_accuracy and report.counts[2] == (0, 0)
    assert "no test samples" in caplog.text


def test_perfect_predictor_on_noise_free_synthetic():
    from cpl.dataio import SyntheticSpec, make_synthetic

    data = make_synthetic(SyntheticSpec(K=5, L=4, S_per_class_train=3, n_test_per_class=6,
                                        d_attr=4, d_feat=12, noise_sigma=0.0, seed=4))
    ds = data.dataset
    rep = evaluate_with_prototypes(ds, [(c, data.class_means[c]) for c in ds.unseen_classes])
    assert rep.acc_unseen == 1.0


@pytest.mark.parametrize("u,s,h", [(21.9, 32.4, 26.1), (51.0, 83.1, 63.2), (28.0, 58.6, 37.9), (19.6, 73.2, 30.9)])
def test_harmonic_mean_reported_values(u, s, h):
    assert abs(round(harmonic_mean(s, u), 1) - h) <= 0.05


def test_harmonic_mean_edges():
    assert harmonic_mean(0.4, 0.4) == pytest.approx(0.4)
    assert harmonic_mean(0.7, 0.0) == 0.0
    assert harmonic_mean(0.0, 0.0) == 0.0
    with pytest.raises(ValueError):
        harmonic_mean(-0.1, 0.5)


@given(st.floats(0, 1), st.floats(0, 1))
def test_harmonic_mean_between_min_and_arithmetic_mean(a, b):
    h = harmonic_mean(a, b)
    assert min(a, b) - 1e-12 <= h <= (a + b) / 2 + 1e-12
    if min(a, b) > 1e-6 and abs(a - b) > 1e-9:
        assert min(a, b) < h < (a + b) / 2


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=40), st.randoms())
def test_per_class_accuracy_order_and_duplication_invariant(pairs, rnd):
    true, pred = map(np.array, zip(*pairs))
    classes = sorted(set(true.tolist()))
    _, accs, mean = per_class_accuracy(true, pred, classes)
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    t2, p2 = map(np.array, zip(*shuffled))
    assert per_class_accuracy(t2, p2, classes)[1] == accs
    c = classes[0]
    m = true == c
    t3 = np.concatenate([true, true[m]])
    p3 = np.concatenate([pred, pred[m]])
    assert per_class_accuracy(t3, p3, classes)[1] == pytest.approx(accs)


def test_generalized_report_contract(small_synthetic):
    ds = small_synthetic.dataset
    emb = init_embedder(ds.d_attr, 8, ds.d_feat, 0)
    g = evaluate_generalized(ds, emb)
    assert g.acc_seen is not None
    assert g.harmonic_mean == pytest.approx(harmonic_mean(g.acc_seen, g.acc_unseen))
    assert set(g.per_class_accuracy) == set(ds.seen_classes) | set(ds.unseen_classes)
    s = evaluate_standard(ds, emb)
    assert s.acc_seen is None
    assert "acc_seen" in g.to_csv() and "acc_seen" not in s.to_csv()


def test_generalized_restricted_to_unseen_matches_standard(small_synthetic):
    ds = small_synthetic.dataset
    rng = np.random.default_rng(0)
    emb = init_embedder(ds.d_attr, 8, ds.d_feat, 0)
    emb = AttributeEmbedder(emb.W1, emb.b1, emb.W2, rng.uniform(0, 1, ds.d_feat))
    g = evaluate_generalized(ds, emb, candidate_classes=ds.unseen_classes)
    assert g.acc_unseen == evaluate_standard(ds, emb).acc_unseen


def test_csv_layout():
    ds = Dataset([[0.0], [0.1], [6.0], [9.0], [9.5]], [1, 1, 1, 1, 2], np.eye(3), (0,), (1, 2),
                 [TEST_UNSEEN] * 5)
    report = evaluate_with_prototypes(ds, [(1, np.array([0.0])), (2, np.array([9.2]))])
    assert report.to_csv().splitlines() == [
        "class_id,n,correct,accuracy",
        "1,4,2,0.500000",
        "2,1,1,1.000000",
        "# acc_unseen=75.0",
    ]
    assert "Acc_U = 75.0%" in report.table()

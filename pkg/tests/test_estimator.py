import numpy as np
import pytest
from sklearn.base import clone
from sklearn.utils.validation import check_is_fitted

from maxplusnn.datasets import gen_max_affine
from maxplusnn.estimator import MaxPlusHeadClassifier


def multilabel_arrays(n=400, d=8, tags=4, seed=0):
    ds = gen_max_affine(n=n, d=d, k_pieces=2, tags=tags, seed=seed)
    return ds.features, ds.targets


def multiclass_arrays(n=300, seed=1):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 6))
    y = np.where(X[:, 0] + X[:, 1] > 0, "pos", "neg")
    return X, y


def quick(head="sparse_morph", **kw):
    kw.setdefault("hidden_dim", 16)
    kw.setdefault("phases", (("adam", 1e-2, 8),))
    kw.setdefault("batch_size", 64)
    return MaxPlusHeadClassifier(head=head, **kw)


def test_get_set_params_and_clone():
    est = quick(head="relu", weight_decay=0.5)
    params = est.get_params()
    assert params["head"] == "relu"
    assert params["weight_decay"] == 0.5
    cloned = clone(est)
    assert cloned.get_params() == params
    est.set_params(batch_size=32)
    assert est.batch_size == 32


def test_fit_predict_multilabel():
    X, y = multilabel_arrays()
    est = quick().fit(X, y)
    check_is_fitted(est, "model_")
    pred = est.predict(X[:20])
    assert pred.shape == (20, y.shape[1])
    assert set(np.unique(pred)) <= {0, 1}
    proba = est.predict_proba(X[:20])
    assert proba.shape == (20, y.shape[1])
    assert ((proba > 0) & (proba < 1)).all()
    assert (pred == (proba > 0.5)).all()
    assert est.score(X, y) > 0.6


def test_fit_predict_multiclass_with_string_labels():
    X, y = multiclass_arrays()
    est = quick(head="relu").fit(X, y)
    assert list(est.classes_) == ["neg", "pos"]
    pred = est.predict(X)
    assert set(pred) <= {"neg", "pos"}
    assert (pred == y).mean() > 0.8
    proba = est.predict_proba(X[:10])
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    assert est.score(X, y) == (pred == y).mean()


@pytest.mark.parametrize("head", ["relu", "maxout", "zhang", "dense_morph",
                                  "sparse_morph"])
def test_every_head_variant_fits(head):
    X, y = multilabel_arrays(n=200)
    est = quick(head=head, phases=(("adam", 1e-2, 3),)).fit(X, y)
    assert est.decision_function(X[:5]).shape == (5, y.shape[1])


def test_validation_errors():
    X, y = multilabel_arrays(n=50)
    with pytest.raises(ValueError, match="head must be one of"):
        quick(head="mlp").fit(X, y)
    with pytest.raises(ValueError, match="validation_fraction"):
        quick(validation_fraction=1.5).fit(X, y)
    with pytest.raises(ValueError, match="0/1"):
        quick().fit(X, y + 2)
    with pytest.raises(ValueError, match="at least two classes"):
        quick().fit(X, np.zeros(50))
    est = quick().fit(X, y)
    with pytest.raises(ValueError, match="features"):
        est.predict(X[:, :4])


def test_unfitted_raises():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        quick().predict(np.zeros((3, 8)))


def test_fit_is_deterministic():
    X, y = multilabel_arrays(n=200)
    a = quick(random_state=5).fit(X, y)
    b = quick(random_state=5).fit(X, y)
    assert np.array_equal(a.decision_function(X), b.decision_function(X))


def test_prune_returns_new_estimator():
    X, y = multilabel_arrays(n=300, d=8, tags=4)
    est = quick(hidden_dim=24).fit(X, y)
    before = est.decision_function(X[:10]).copy()
    pruned = est.prune(0.5, 0.5)
    assert pruned is not est
    check_is_fitted(pruned, "model_")
    # original untouched, pruned model differs
    assert np.array_equal(est.decision_function(X[:10]), before)
    assert pruned.model_.census() < est.model_.census()
    assert pruned.predict(X[:10]).shape == (10, y.shape[1])


def test_sparse_head_fits_training_split_to_high_accuracy():
    # a wide sparse_morph head has enough max-affine capacity to interpolate
    rng = np.random.default_rng(3)
    X = rng.normal(size=(240, 6))
    w = rng.normal(size=(6, 3))
    y = (X @ w).argmax(axis=1)
    est = MaxPlusHeadClassifier(head="sparse_morph", hidden_dim=256,
                                phases=(("adam", 3e-3, 60),), batch_size=32,
                                weight_decay=0.0, validation_fraction=0.1,
                                random_state=0)
    est.fit(X, y)
    train_idx = est.train_result_.dataset_splits["train"] \
        if hasattr(est.train_result_, "dataset_splits") else None
    acc = (est.predict(X) == y).mean()
    assert acc >= 0.99, acc
    assert train_idx is None or len(train_idx) < 240

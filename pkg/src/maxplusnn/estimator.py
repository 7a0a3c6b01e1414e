"""Scikit-learn style estimator wrapping the heads and training loop.

`MaxPlusHeadClassifier` accepts sample-major arrays: X is [n, d]; y is a
class vector (multiclass) or a 0/1 matrix [n, L] (multilabel, chosen by
y's shape). `fit` carves a validation split out of the given data for the
lowest-validation-loss model selection that training uses.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .datasets import Dataset
from .heads import VARIANTS, HeadSpec, build_head, forward
from .metrics import accuracy, roc_auc_macro
from .optim import TrainConfig, train
from .pruning import build_prune_plan, prune_model

__all__ = ["MaxPlusHeadClassifier"]


class MaxPlusHeadClassifier(BaseEstimator, ClassifierMixin):
    """Classification head over the max-plus semiring with a fit/predict API.

    Parameters mirror HeadSpec and TrainConfig; `head` picks the variant
    (relu, maxout, zhang, dense_morph, sparse_morph) and `phases` is a
    sequence of (optimizer, lr, epochs) triples executed in order.
    """

    def __init__(self, head: str = "sparse_morph", hidden_dim: int = 128,
                 pooling: int = 2, batchnorm: bool = True,
                 phases=(("adam", 1e-3, 30),), momentum: float = 0.9,
                 weight_decay: float = 1e-4, batch_size: int = 128,
                 validation_fraction: float = 0.15, random_state: int = 0):
        self.head = head
        self.hidden_dim = hidden_dim
        self.pooling = pooling
        self.batchnorm = batchnorm
        self.phases = phases
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _validate_targets(self, y, n):
        y = np.asarray(y)
        if y.ndim == 2:
            if y.shape[0] != n:
                raise ValueError(f"y has {y.shape[0]} rows, X has {n}")
            if not np.isin(y, (0, 1)).all():
                raise ValueError("multilabel y must be 0/1")
            return y.astype(np.int64), "multilabel", np.arange(y.shape[1])
        if y.shape != (n,):
            raise ValueError(f"y shape {y.shape} does not match {n} samples")
        classes, encoded = np.unique(y, return_inverse=True)
        if classes.size < 2:
            raise ValueError("need at least two classes")
        return encoded.astype(np.int64), "multiclass", classes

    def fit(self, X, y):
        if self.head not in VARIANTS:
            raise ValueError(f"head must be one of {VARIANTS}, got {self.head!r}")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")
        X = check_array(X, dtype=np.float64)
        n = X.shape[0]
        targets, task, classes = self._validate_targets(y, n)
        dataset = Dataset(
            "fit", X, targets, task, seed=self.random_state,
            splits=self._fit_splits(n))
        spec = HeadSpec(self.head, X.shape[1], self.hidden_dim,
                        targets.shape[1] if task == "multilabel" else classes.size,
                        pooling=self.pooling, batchnorm=self.batchnorm,
                        seed=self.random_state)
        config = TrainConfig(phases=tuple(self.phases), momentum=self.momentum,
                             weight_decay=self.weight_decay,
                             batch_size=self.batch_size, seed=self.random_state)
        result = train(build_head(spec), dataset, config)
        self.model_ = result.model
        self.train_result_ = result
        self.classes_ = classes
        self.task_ = task
        self.n_features_in_ = X.shape[1]
        return self

    def _fit_splits(self, n: int) -> dict:
        n_val = max(1, int(round(self.validation_fraction * n)))
        if n_val >= n:
            raise ValueError(f"validation_fraction leaves no training data for n={n}")
        perm = np.random.default_rng([self.random_state, 21]).permutation(n)
        return {"train": np.sort(perm[n_val:]), "val": np.sort(perm[:n_val])}

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        out = forward(self.model_, X.T, training=False, allow_bottom=True)
        return out.data.T

    def predict(self, X):
        scores = self.decision_function(X)
        if self.task_ == "multilabel":
            return (scores > 0.0).astype(np.int64)
        return self.classes_[scores.argmax(axis=1)]

    def predict_proba(self, X):
        scores = self.decision_function(X)
        if self.task_ == "multilabel":
            return 1.0 / (1.0 + np.exp(-scores))
        z = scores - scores.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def score(self, X, y):
        """Accuracy for multiclass; macro ROC-AUC for multilabel."""
        check_is_fitted(self, "model_")
        if self.task_ == "multiclass":
            encoded = np.searchsorted(self.classes_, np.asarray(y))
            return accuracy(self.decision_function(X), encoded)
        return roc_auc_macro(self.decision_function(X), np.asarray(y))

    def prune(self, r1: float, r2: float) -> "MaxPlusHeadClassifier":
        """One-shot L1 pruning with this variant's ratio equalization;
        returns a new fitted estimator, leaving this one untouched."""
        check_is_fitted(self, "model_")
        plan = build_prune_plan(self.model_.spec, r1, r2)
        clone = MaxPlusHeadClassifier(**self.get_params())
        clone.model_ = prune_model(self.model_, plan)
        clone.train_result_ = self.train_result_
        clone.classes_ = self.classes_
        clone.task_ = self.task_
        clone.n_features_in_ = self.n_features_in_
        return clone

"""scikit-learn wrapper around the from-scratch CNN."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import train_test_split
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_is_fitted

from .._validation import check_images, check_labels
from ..exceptions import DatasetError
from .model import Architecture, CnnModel
from .train import TrainConfig, fit_model, predict_proba_batched


class MealCNNClassifier(ClassifierMixin, BaseEstimator):
    """Binary image classifier for (n, size, size) pixel stacks.

    ``fit`` trains on everything it is given. With ``early_stopping`` a
    stratified ``validation_fraction`` is held out and watched for
    ``n_iter_no_change`` epochs, as in :class:`sklearn.neural_network.MLPClassifier`.
    Classes are sorted, so equal probabilities resolve to ``classes_[0]``.
    """

    def __init__(self, conv1_filters=32, conv2_filters=16, hidden=512, learning_rate=0.01,
                 batch_size=16, max_epochs=300, early_stopping=False, validation_fraction=0.1,
                 n_iter_no_change=20, random_state=0):
        self.conv1_filters = conv1_filters
        self.conv2_filters = conv2_filters
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.early_stopping = early_stopping
        self.validation_fraction = validation_fraction
        self.n_iter_no_change = n_iter_no_change
        self.random_state = random_state

    def fit(self, X, y):
        X = check_images(X)
        y = check_labels(y, len(X))
        if X.shape[1] != X.shape[2]:
            raise ValueError("images must be square")
        self.classes_ = unique_labels(y)
        if len(self.classes_) != 2:
            raise DatasetError(f"need exactly 2 classes, got {len(self.classes_)}")
        y_idx = np.searchsorted(self.classes_, y)
        arch = Architecture(input_size=X.shape[1], conv1_filters=self.conv1_filters,
                            conv2_filters=self.conv2_filters, hidden=self.hidden)
        seed = int(self.random_state or 0)
        self.model_ = CnnModel.create(arch, seed=seed)
        cfg = TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                          epochs=self.max_epochs, seed=seed,
                          early_stop_patience=self.n_iter_no_change if self.early_stopping else None)
        X_val = y_val = None
        if self.early_stopping:
            X, X_val, y_idx, y_val = train_test_split(X, y_idx, test_size=self.validation_fraction,
                                                      stratify=y_idx, random_state=seed)
        _, self.history_, self.stopped_early_ = fit_model(self.model_, X, y_idx, cfg, X_val, y_val)
        self.n_epochs_ = len(self.history_)
        return self

    @classmethod
    def from_model(cls, model: CnnModel, classes=(0, 1)) -> "MealCNNClassifier":
        est = cls(conv1_filters=model.arch.conv1_filters, conv2_filters=model.arch.conv2_filters,
                  hidden=model.arch.hidden, random_state=model.init_seed)
        est.model_ = model
        est.classes_ = np.asarray(classes)
        return est

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        n = self.model_.arch.input_size
        return predict_proba_batched(self.model_, check_images(X, size=(n, n)))

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

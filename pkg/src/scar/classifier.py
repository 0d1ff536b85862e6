"""scikit-learn compatible front end for the dense/conv classifier."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from . import tensor as T
from ._validation import as_float_array, as_label_array, check_consistent_length
from .nn import Model, train_classifier


class NeuralNetClassifier(BaseEstimator, ClassifierMixin):
    """Small backbone+head classifier with deterministic training.

    Vector input uses two affine+ReLU hidden layers; passing ``conv_channels``
    switches to a conv backbone for H,W,C image batches.
    """

    def __init__(
        self,
        hidden=(64, 64),
        conv_channels=(),
        epochs=30,
        batch_size=64,
        lr=1e-3,
        weight_decay=5e-4,
        seed=0,
    ):
        self.hidden = hidden
        self.conv_channels = conv_channels
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.seed = seed

    def fit(self, X, y):
        X = as_float_array(X)
        y = as_label_array(y)
        check_consistent_length(X, y)
        self.classes_ = np.unique(y)
        self.model_ = Model.build(
            X.shape[1:],
            num_classes=int(self.classes_.max()) + 1,
            hidden=self.hidden,
            conv_channels=self.conv_channels,
            seed=self.seed,
        )
        self.loss_curve_ = train_classifier(
            self.model_,
            X,
            y,
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            weight_decay=self.weight_decay,
            seed=self.seed,
        )
        return self

    def decision_function(self, X):
        with T.no_grad():
            return self.model_.forward(as_float_array(X)).data

    def predict_proba(self, X):
        return T.softmax(self.decision_function(X))

    def predict(self, X):
        return self.decision_function(X).argmax(axis=1)

    def transform(self, X):
        """Backbone feature vectors (the representation the prototypes model)."""
        with T.no_grad():
            return self.model_.features(as_float_array(X)).data

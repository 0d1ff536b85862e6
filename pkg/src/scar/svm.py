"""Soft-margin RBF-kernel binary SVM trained by sequential minimal optimization.

Platt-style working-set selection with an error cache; pair updates are exact
two-variable solves of the dual, so the decision function is sign-consistent
with the dual solution at the KKT tolerance.
"""

from __future__ import annotations

import itertools

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from ._validation import as_float_array, as_label_array, check_consistent_length


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    sq = (
        (A * A).sum(axis=1)[:, None]
        + (B * B).sum(axis=1)[None, :]
        - 2.0 * (A @ B.T)
    )
    return np.exp(-gamma * np.maximum(sq, 0.0))


class SMOSVC(BaseEstimator, ClassifierMixin):
    def __init__(self, C: float = 1.0, gamma: float = 1.0, tol: float = 1e-3,
                 max_sweeps: int = 200, random_state: int = 0):
        self.C = C
        self.gamma = gamma
        self.tol = tol
        self.max_sweeps = max_sweeps
        self.random_state = random_state

    # -- SMO core ----------------------------------------------------------

    def _take_step(self, i1: int, i2: int) -> bool:
        if i1 == i2:
            return False
        a1, a2 = self._alpha[i1], self._alpha[i2]
        y1, y2 = self._y[i1], self._y[i2]
        e1, e2 = self._errors[i1], self._errors[i2]
        s = y1 * y2
        if s > 0:
            low, high = max(0.0, a1 + a2 - self.C), min(self.C, a1 + a2)
        else:
            low, high = max(0.0, a2 - a1), min(self.C, self.C + a2 - a1)
        if low >= high:
            return False
        k11, k12, k22 = self._K[i1, i1], self._K[i1, i2], self._K[i2, i2]
        eta = k11 + k22 - 2.0 * k12
        if eta <= 0:
            return False
        a2_new = np.clip(a2 + y2 * (e1 - e2) / eta, low, high)
        if abs(a2_new - a2) < 1e-10 * (a2_new + a2 + 1e-10):
            return False
        a1_new = a1 + s * (a2 - a2_new)
        d1, d2 = y1 * (a1_new - a1), y2 * (a2_new - a2)
        b1 = self._b - e1 - d1 * k11 - d2 * k12
        b2 = self._b - e2 - d1 * k12 - d2 * k22
        if 0.0 < a1_new < self.C:
            b_new = b1
        elif 0.0 < a2_new < self.C:
            b_new = b2
        else:
            b_new = 0.5 * (b1 + b2)
        self._errors += d1 * self._K[i1] + d2 * self._K[i2] + (b_new - self._b)
        self._alpha[i1], self._alpha[i2] = a1_new, a2_new
        self._b = b_new
        return True

    def _examine(self, i2: int) -> int:
        y2, a2, e2 = self._y[i2], self._alpha[i2], self._errors[i2]
        r2 = e2 * y2
        if not ((r2 < -self.tol and a2 < self.C) or (r2 > self.tol and a2 > 0)):
            return 0
        non_bound = np.nonzero((self._alpha > 0) & (self._alpha < self.C))[0]
        if len(non_bound) > 1:
            i1 = non_bound[np.argmax(np.abs(self._errors[non_bound] - e2))]
            if self._take_step(int(i1), i2):
                return 1
        start = int(self._rng.integers(len(self._y)))
        for i1 in np.roll(non_bound, -start % max(len(non_bound), 1)):
            if self._take_step(int(i1), i2):
                return 1
        for i1 in np.roll(np.arange(len(self._y)), -start):
            if self._take_step(int(i1), i2):
                return 1
        return 0

    def fit(self, X, y):
        X = as_float_array(X, ndim=2)
        y = np.asarray(y)
        check_consistent_length(X, y)
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise ValueError(f"binary SVM needs exactly 2 classes, got {len(self.classes_)}")
        for cls in self.classes_:
            if (y == cls).sum() < 2:
                raise ValueError(f"class {cls!r} has fewer than 2 samples")
        self._X = X
        self._y = np.where(y == self.classes_[1], 1.0, -1.0)
        self._K = rbf_kernel(X, X, self.gamma)
        self._alpha = np.zeros(len(X))
        self._b = 0.0
        self._errors = -self._y.copy()  # f(x) = 0 initially
        self._rng = np.random.default_rng(self.random_state)

        examine_all = True
        for _ in range(self.max_sweeps):
            changed = 0
            if examine_all:
                targets = range(len(X))
            else:
                targets = np.nonzero((self._alpha > 0) & (self._alpha < self.C))[0]
            for i2 in targets:
                changed += self._examine(int(i2))
            if examine_all:
                if changed == 0:
                    break
                examine_all = False
            elif changed == 0:
                examine_all = True
        self.support_ = np.nonzero(self._alpha > 1e-12)[0]
        return self

    def decision_function(self, X):
        X = as_float_array(X, ndim=2)
        coef = self._alpha * self._y
        return rbf_kernel(X, self._X, self.gamma) @ coef + self._b

    def predict(self, X):
        return np.where(self.decision_function(X) > 0, self.classes_[1], self.classes_[0])

    def score(self, X, y):
        return float((self.predict(X) == np.asarray(y)).mean())


# -- cross-validated grid search -------------------------------------------------

def stratified_folds(y: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Fold id per sample; classes are spread round-robin after a shuffle."""
    folds = np.empty(len(y), dtype=np.intp)
    for cls in np.unique(y):
        idx = np.nonzero(y == cls)[0]
        idx = rng.permutation(idx)
        folds[idx] = np.arange(len(idx)) % k
    return folds


def stratified_split(y: np.ndarray, test_fraction: float, rng: np.random.Generator):
    """(train_idx, test_idx) preserving class proportions."""
    train, test = [], []
    for cls in np.unique(y):
        idx = rng.permutation(np.nonzero(y == cls)[0])
        n_test = int(round(test_fraction * len(idx)))
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


GRID_C = (0.1, 1.0, 10.0, 100.0)
GRID_GAMMA = (0.01, 0.1, 1.0, "feature-variance")


def _resolve_gamma(gamma, X: np.ndarray) -> float:
    if gamma == "feature-variance":
        var = float(X.var())
        return 1.0 / var if var > 0 else 1.0
    return float(gamma)


def grid_search_svm(
    X: np.ndarray,
    y: np.ndarray,
    Cs=GRID_C,
    gammas=GRID_GAMMA,
    folds: int = 3,
    seed: int = 0,
) -> tuple[float, float]:
    """Pick (C, gamma) by k-fold cross-validated accuracy.

    Candidates are evaluated in sorted order and ties keep the first (so the
    result does not depend on the order the grid was supplied in).
    """
    X = as_float_array(X, ndim=2)
    y = as_label_array(y)
    rng = np.random.default_rng(seed)
    fold_ids = stratified_folds(y, folds, rng)
    resolved = sorted({( float(c), _resolve_gamma(g, X)) for c, g in itertools.product(Cs, gammas)})
    best_score, best = -1.0, None
    for c, gamma in resolved:
        scores = []
        for f in range(folds):
            train_idx, val_idx = fold_ids != f, fold_ids == f
            if len(np.unique(y[train_idx])) < 2 or val_idx.sum() == 0:
                continue
            clf = SMOSVC(C=c, gamma=gamma, random_state=seed).fit(X[train_idx], y[train_idx])
            scores.append(clf.score(X[val_idx], y[val_idx]))
        mean_score = float(np.mean(scores)) if scores else -1.0
        if mean_score > best_score + 1e-12:
            best_score, best = mean_score, (c, gamma)
    return best

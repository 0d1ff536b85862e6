"""Evaluation: accuracy, the adaptive unlearning score, membership inference.

The membership attack trains an RBF-kernel SVM (grid-searched by 3-fold CV) on
softmax output vectors to separate forget samples from unseen samples; its F1
is micro-averaged over the attack's held-out pool, so chance level is the
majority rate of the pool (0.5 balanced / 0.75 at the 3:1 class-removal ratio).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from ._validation import check_fraction
from .exceptions import InsufficientDataError
from .svm import SMOSVC, grid_search_svm, stratified_split


def accuracy_arrays(model, X: np.ndarray, y: np.ndarray, batch_size: int = 1024) -> float:
    if len(X) == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    hits = 0
    with T.no_grad():
        for start in range(0, len(X), batch_size):
            logits = model.forward(X[start:start + batch_size]).data
            hits += int((logits.argmax(axis=1) == y[start:start + batch_size]).sum())
    return hits / len(X)


def accuracy(model, dataset, batch_size: int = 1024) -> float:
    """Fraction of argmax-correct predictions."""
    return accuracy_arrays(model, dataset.samples, dataset.labels, batch_size)


def aus(a_or: float, a_t: float, a_f: float, scenario: str) -> float:
    """Adaptive unlearning score (1 - (a_or - a_t)) / (1 + delta) on fractional
    accuracies; delta = |a_f| under class removal, |a_t - a_f| under
    homogeneous removal."""
    a_or = check_fraction(a_or, "a_or")
    a_t = check_fraction(a_t, "a_t")
    a_f = check_fraction(a_f, "a_f")
    if scenario not in ("cr", "hr"):
        raise ValueError(f"scenario must be cr or hr, got {scenario!r}")
    delta = abs(0.0 - a_f) if scenario == "cr" else abs(a_t - a_f)
    return (1.0 - (a_or - a_t)) / (1.0 + delta)


@dataclass
class MiaResult:
    mean: float
    std: float
    chance: float
    scores: list[float] = field(default_factory=list)


def softmax_outputs(model, X: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    probs = []
    with T.no_grad():
        for start in range(0, len(X), batch_size):
            probs.append(T.softmax(model.forward(X[start:start + batch_size]).data))
    return np.concatenate(probs)


def attack_f1(member_feats: np.ndarray, non_member_feats: np.ndarray,
              iterations: int = 10, seed: int = 0, chance: float = 0.5) -> MiaResult:
    """Core membership attack on precomputed output vectors.

    Per iteration: 80/20 stratified split, grid-searched SVM on the 80%,
    micro-F1 (= attack accuracy) on the 20%. Mean and population std over
    iterations.
    """
    X = np.concatenate([member_feats, non_member_feats])
    y = np.concatenate([
        np.ones(len(member_feats), dtype=np.int64),
        np.zeros(len(non_member_feats), dtype=np.int64),
    ])
    scores = []
    for i in range(iterations):
        rng = np.random.default_rng([seed, i])
        train_idx, test_idx = stratified_split(y, 0.2, rng)
        c, gamma = grid_search_svm(X[train_idx], y[train_idx], seed=i)
        clf = SMOSVC(C=c, gamma=gamma, random_state=i).fit(X[train_idx], y[train_idx])
        scores.append(float((clf.predict(X[test_idx]) == y[test_idx]).mean()))
    arr = np.asarray(scores)
    return MiaResult(mean=float(arr.mean()), std=float(arr.std()), chance=chance, scores=scores)


def mia_hr(model, forget, test, seed: int = 0, iterations: int = 10) -> MiaResult:
    """Balanced member (forget) vs non-member (test) attack; chance 0.5.

    Each iteration resamples the non-member side from the test set.
    """
    if len(forget) < 10:
        raise InsufficientDataError(f"need >= 10 forget samples for the attack, got {len(forget)}")
    if len(test) < len(forget):
        raise ValueError("need at least as many test samples as forget samples")
    member = softmax_outputs(model, forget.samples)
    pool = softmax_outputs(model, test.samples)
    scores = []
    for i in range(iterations):
        rng = np.random.default_rng([seed, 1000 + i])
        non_member = pool[rng.choice(len(pool), size=len(member), replace=False)]
        part = attack_f1(member, non_member, iterations=1, seed=int(rng.integers(2**31)), chance=0.5)
        scores.extend(part.scores)
    arr = np.asarray(scores)
    return MiaResult(mean=float(arr.mean()), std=float(arr.std()), chance=0.5, scores=scores)


def mia_cr(model, forget, forget_test, seed: int = 0, iterations: int = 10) -> MiaResult:
    """Removed-class attack: members are resampled from the forget set at a 3:1
    ratio against the forget-class test samples; chance level 0.75."""
    if len(forget) < 10:
        raise InsufficientDataError(f"need >= 10 forget samples for the attack, got {len(forget)}")
    member_pool = softmax_outputs(model, forget.samples)
    non_member = softmax_outputs(model, forget_test.samples)
    n_members = 3 * len(non_member)
    scores = []
    for i in range(iterations):
        rng = np.random.default_rng([seed, 2000 + i])
        member = member_pool[rng.choice(len(member_pool), size=n_members,
                                        replace=n_members > len(member_pool))]
        part = attack_f1(member, non_member, iterations=1, seed=int(rng.integers(2**31)), chance=0.75)
        scores.extend(part.scores)
    arr = np.asarray(scores)
    return MiaResult(mean=float(arr.mean()), std=float(arr.std()), chance=0.75, scores=scores)


@dataclass
class MetricsReport:
    scenario: str
    run_id: str
    method: str
    accuracies: dict
    aus: float
    mia_mean: float | None = None
    mia_std: float | None = None
    mia_chance: float | None = None
    epochs_run: int | None = None
    stop_reason: str | None = None
    wall_time_s: float | None = None

    def to_dict(self) -> dict:
        out = {
            "scenario": self.scenario,
            "run_id": self.run_id,
            "method": self.method,
            "aus": self.aus,
            "mia_mean": self.mia_mean,
            "mia_std": self.mia_std,
            "mia_chance": self.mia_chance,
            "epochs_run": self.epochs_run,
            "stop_reason": self.stop_reason,
            "wall_time_s": self.wall_time_s,
        }
        out.update({f"acc_{k}": v for k, v in self.accuracies.items()})
        return out


def aggregate(runs: list) -> dict[str, tuple[float, float]]:
    """Per-metric mean and population std over runs (dicts or MetricsReports)."""
    if not runs:
        raise ValueError("need at least one run to aggregate")
    rows = [r.to_dict() if isinstance(r, MetricsReport) else dict(r) for r in runs]
    keys = [k for k in rows[0] if isinstance(rows[0][k], (int, float)) and rows[0][k] is not None
            and not isinstance(rows[0][k], bool)]
    result = {}
    for key in keys:
        values = np.asarray([row[key] for row in rows if row.get(key) is not None], dtype=np.float64)
        if len(values):
            result[key] = (float(values.mean()), float(values.std()))
    return result

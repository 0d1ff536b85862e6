"""Retain-free unlearning: Mahalanobis forgetting plus surrogate distillation.

The combined objective lambda1*L_forget + lambda2*L_distill pushes each forget
sample's (Tukey-space) feature vector toward the nearest wrong-class prototype
while a temperature-scaled Jensen-Shannon term anchors the student's outputs
to the frozen original model on out-of-distribution surrogate data. Epochs run
until the monitored forget accuracy reaches the stop threshold or the epoch
budget runs out. Baseline unlearners (retrain, fine-tune, gradient ascent,
random labels) share the same stopping machinery.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from . import tensor as T
from .exceptions import ScenarioError
from .nn import AdamW, Model, train_classifier
from .prototypes import GaussianPrototypes, tukey_transform
from .tensor import Tensor, log_softmax_np


@dataclass
class UnlearnConfig:
    scenario: str = "cr"
    lambda1: float = 1.0
    lambda2: float = 5.0
    lr: float = 1e-3
    forget_batch: int = 32
    surrogate_batch: int = 64
    temperature: float = 1.0
    delta: float = 0.5
    gamma0: float = 3.0
    gamma1: float = 3.0
    epsilon: float | str = 0.0  # "auto" (HR): original model's test accuracy
    max_epochs: int = 30
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in ("cr", "hr"):
            raise ValueError(f"scenario must be cr or hr, got {self.scenario!r}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")
        if not float(self.temperature) > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.epsilon != "auto" and not 0.0 <= float(self.epsilon) <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1] or be 'auto', got {self.epsilon}")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    losses: dict
    monitored_forget_acc: float
    eval_acc: float | None
    wall_time_s: float


@dataclass
class UnlearnHistory:
    records: list[EpochRecord] = field(default_factory=list)
    stop_reason: str = ""
    epsilon: float = 0.0
    monitored: str = ""

    @property
    def epochs_run(self) -> int:
        return len(self.records)

    def to_dict(self) -> dict:
        return {
            "stop_reason": self.stop_reason,
            "epsilon": self.epsilon,
            "monitored": self.monitored,
            "records": [
                {
                    "epoch": r.epoch,
                    "losses": r.losses,
                    "monitored_forget_acc": r.monitored_forget_acc,
                    "eval_acc": r.eval_acc,
                    "wall_time_s": r.wall_time_s,
                }
                for r in self.records
            ],
        }


# -- losses --------------------------------------------------------------------

def jensen_shannon(logits_a: np.ndarray, logits_b: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Per-sample symmetrized divergence between softmax(a) and softmax(b/T)."""
    if not float(temperature) > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    lp = log_softmax_np(np.atleast_2d(logits_a))
    lq = log_softmax_np(np.atleast_2d(logits_b) / float(temperature))
    p, q = np.exp(lp), np.exp(lq)
    return 0.5 * (p * (lp - lq)).sum(axis=-1) + 0.5 * (q * (lq - lp)).sum(axis=-1)


def forget_loss(
    model: Model,
    batch: np.ndarray,
    labels: np.ndarray,
    prototypes: GaussianPrototypes,
    delta: float | None = None,
) -> Tensor:
    """Mean Mahalanobis distance of live Tukey features to their nearest
    wrong-class prototype. Selection is recomputed per batch and detached;
    gradient flows through the distance only."""
    if len(batch) == 0:
        raise ValueError("forget batch is empty")
    delta = prototypes.delta if delta is None else delta
    feats = tukey_transform(model.features(batch), delta)
    selected = prototypes.nearest_wrong(feats.data, np.asarray(labels))
    total: Tensor | None = None
    for j in np.unique(selected):
        proto = prototypes.prototypes_[j]
        rows = T.take_rows(feats, np.nonzero(selected == j)[0])
        diff = T.sub(rows, Tensor(proto.mean))
        quad = T.tsum(T.mul(T.matmul(diff, Tensor(proto.inverse)), diff), axis=1)
        part = T.tsum(T.tsqrt(quad))
        total = part if total is None else T.add(total, part)
    return T.mul(total, 1.0 / len(batch))


def distillation_loss(student: Model, teacher: Model, batch: np.ndarray, temperature: float) -> Tensor:
    """Mean Jensen-Shannon divergence between student outputs and the frozen
    teacher's temperature-scaled outputs. Gradient reaches the student only."""
    if not float(temperature) > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    student_logits = student.forward(batch)
    with T.no_grad():
        teacher_logits = teacher.forward(batch).data
    lq = log_softmax_np(teacher_logits / float(temperature))
    q = np.exp(lq)
    lp = T.log_softmax(student_logits)
    p = T.texp(lp)
    kl_pq = T.tsum(T.mul(p, T.sub(lp, Tensor(lq))), axis=1)
    kl_qp = T.tsum(T.mul(Tensor(q), T.sub(Tensor(lq), lp)), axis=1)
    return T.tmean(T.add(T.mul(kl_pq, 0.5), T.mul(kl_qp, 0.5)))


# -- batching and the monitored epoch loop --------------------------------------

class _Cycler:
    """Endless shuffled batch index stream over n samples."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = rng
        self._order = rng.permutation(n)
        self._pos = 0

    @property
    def batches_per_pass(self) -> int:
        return int(np.ceil(self.n / self.batch_size))

    def next(self) -> np.ndarray:
        if self._pos >= self.n:
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        idx = self._order[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return idx


def _predict(model: Model, X: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    preds = []
    with T.no_grad():
        for start in range(0, len(X), batch_size):
            preds.append(model.forward(X[start:start + batch_size]).data.argmax(axis=1))
    return np.concatenate(preds)


def _acc(model: Model, X: np.ndarray, y: np.ndarray) -> float:
    return float((_predict(model, X) == np.asarray(y)).mean())


def _monitored_loop(
    student: Model,
    opt: AdamW,
    run_step: Callable[[], dict],
    steps_per_epoch: int,
    monitor: Callable[[], float],
    epsilon: float,
    max_epochs: int,
    evaluate: Callable[[], float] | None,
    monitored_name: str,
) -> UnlearnHistory:
    history = UnlearnHistory(epsilon=float(epsilon), monitored=monitored_name)
    for epoch in range(1, max_epochs + 1):
        start = time.perf_counter()
        sums: dict[str, float] = {}
        for _ in range(steps_per_epoch):
            opt.zero_grad()
            parts = run_step()
            for key, value in parts.items():
                sums[key] = sums.get(key, 0.0) + value
            opt.step()
        monitored = monitor()
        history.records.append(
            EpochRecord(
                epoch=epoch,
                losses={k: v / steps_per_epoch for k, v in sums.items()},
                monitored_forget_acc=monitored,
                eval_acc=evaluate() if evaluate is not None else None,
                wall_time_s=time.perf_counter() - start,
            )
        )
        if monitored <= epsilon:
            history.stop_reason = "threshold"
            break
    if not history.stop_reason:
        history.stop_reason = "max_epochs"
    return history


def _resolve_epsilon(config: UnlearnConfig, original: Model, test) -> float:
    if config.epsilon != "auto":
        return float(config.epsilon)
    if config.scenario != "hr":
        raise ScenarioError("epsilon='auto' is defined for the HR scenario only")
    if test is None:
        raise ValueError("epsilon='auto' needs the untouched test set")
    return _acc(original, test.samples, test.labels)


def _scar_core(
    original: Model,
    forget_X: np.ndarray,
    forget_y: np.ndarray,
    surrogate_X: np.ndarray,
    prototypes: GaussianPrototypes,
    config: UnlearnConfig,
    monitor_X: np.ndarray,
    monitor_y: np.ndarray,
    epsilon: float,
    eval_data,
) -> tuple[Model, UnlearnHistory]:
    if len(surrogate_X) == 0:
        raise ValueError("surrogate dataset is empty")
    if len(forget_X) == 0:
        raise ValueError("forget set is empty")
    teacher = original
    student = original.copy()
    opt = AdamW(student.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    forget_cycle = _Cycler(len(forget_X), config.forget_batch, rng)
    sur_cycle = _Cycler(len(surrogate_X), config.surrogate_batch, rng)
    steps = max(forget_cycle.batches_per_pass, sur_cycle.batches_per_pass)

    def run_step() -> dict:
        parts: dict[str, float] = {}
        loss: Tensor | None = None
        if config.lambda1 > 0:
            idx = forget_cycle.next()
            l_m = forget_loss(student, forget_X[idx], forget_y[idx], prototypes, config.delta)
            parts["forget"] = l_m.item()
            loss = T.mul(l_m, config.lambda1)
        if config.lambda2 > 0:
            idx = sur_cycle.next()
            l_td = distillation_loss(student, teacher, surrogate_X[idx], config.temperature)
            parts["distill"] = l_td.item()
            term = T.mul(l_td, config.lambda2)
            loss = term if loss is None else T.add(loss, term)
        if loss is None:
            raise ValueError("at least one of lambda1, lambda2 must be positive")
        loss.backward()
        return parts

    history = _monitored_loop(
        student,
        opt,
        run_step,
        steps,
        monitor=lambda: _acc(student, monitor_X, monitor_y),
        epsilon=epsilon,
        max_epochs=config.max_epochs,
        evaluate=(lambda: _acc(student, eval_data.samples, eval_data.labels)) if eval_data is not None else None,
        monitored_name="forget_test_acc" if config.scenario == "cr" else "forget_acc",
    )
    return student, history


def scar_unlearn(
    original: Model,
    forget,
    surrogate,
    prototypes: GaussianPrototypes,
    config: UnlearnConfig,
    forget_test=None,
    test=None,
    eval_data=None,
) -> tuple[Model, UnlearnHistory]:
    """Run the unlearning loop with direct access to the forget set.

    CR monitors accuracy on the held-out forget-class test split
    (``forget_test``); HR monitors forget-set accuracy against a threshold of
    the original model's test accuracy when ``epsilon='auto'``.
    """
    surrogate_X = surrogate.samples
    if config.scenario == "cr":
        if forget_test is None:
            raise ValueError("CR unlearning monitors the forget-class test split; pass forget_test")
        monitor_X, monitor_y = forget_test.samples, forget_test.labels
        # distill on surrogate retain samples only: anything the teacher assigns
        # to a forget class would re-teach exactly what is being removed
        forget_ids = np.unique(np.asarray(forget.labels))
        preds = _predict(original, surrogate_X)
        surrogate_X = surrogate_X[~np.isin(preds, forget_ids)]
    else:
        monitor_X, monitor_y = forget.samples, forget.labels
    epsilon = _resolve_epsilon(config, original, test)
    return _scar_core(
        original,
        forget.samples,
        forget.labels,
        surrogate_X,
        prototypes,
        config,
        monitor_X,
        monitor_y,
        epsilon,
        eval_data,
    )


def self_forget_partition(
    model: Model, surrogate, forget_class_ids: Sequence[int]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split surrogate samples by the frozen model's predicted class.

    Returns (retain-side samples, forget-side samples, all predictions). The
    forget side holds every sample predicted into ``forget_class_ids``.
    """
    ids = sorted({int(k) for k in forget_class_ids})
    if not ids:
        raise ValueError("forget class list is empty")
    if len(ids) >= model.num_classes:
        raise ScenarioError("forget classes must be a strict subset of all classes")
    preds = _predict(model, surrogate.samples)
    mask = np.isin(preds, ids)
    if not mask.any():
        raise ScenarioError(
            "self-forget infeasible: no surrogate sample is predicted into the forget classes"
        )
    return surrogate.samples[~mask], surrogate.samples[mask], preds


def scar_self_forget(
    original: Model,
    forget_class_ids: Sequence[int],
    surrogate,
    prototypes: GaussianPrototypes,
    config: UnlearnConfig,
    eval_data=None,
) -> tuple[Model, UnlearnHistory]:
    """Class removal given only the class ids: surrogate samples predicted into
    the forget classes stand in for the (unavailable) forget set, and stopping
    monitors the student's agreement with those teacher labels."""
    if config.scenario != "cr":
        raise ScenarioError("self-forget is defined for the CR scenario only")
    sur_retain, sur_forget, preds = self_forget_partition(original, surrogate, forget_class_ids)
    if len(sur_retain) == 0:
        raise ScenarioError("self-forget infeasible: every surrogate sample predicted as a forget class")
    forget_labels = preds[np.isin(preds, list(forget_class_ids))]
    return _scar_core(
        original,
        sur_forget,
        forget_labels,
        sur_retain,
        prototypes,
        config,
        monitor_X=sur_forget,
        monitor_y=forget_labels,
        epsilon=float(config.epsilon) if config.epsilon != "auto" else 0.0,
        eval_data=eval_data,
    )


def distillation_trick_train(
    teacher: Model,
    surrogate,
    test,
    epochs: int,
    lr: float = 1e-3,
    temperature: float = 1.0,
    batch_size: int = 64,
    weight_decay: float = 0.0,
    seed: int = 0,
) -> tuple[list[float], Model]:
    """Train a copy of the teacher with the distillation term alone on
    surrogate data; returns the test-accuracy curve (index 0 = before training)
    and the trained student."""
    student = teacher.copy()
    accs = [_acc(student, test.samples, test.labels)]
    opt = AdamW(student.parameters(), lr=lr, weight_decay=weight_decay)
    rng = np.random.default_rng(seed)
    cycle = _Cycler(len(surrogate.samples), batch_size, rng)
    for _ in range(epochs):
        for _ in range(cycle.batches_per_pass):
            opt.zero_grad()
            loss = distillation_loss(student, teacher, surrogate.samples[cycle.next()], temperature)
            loss.backward()
            opt.step()
        accs.append(_acc(student, test.samples, test.labels))
    return accs, student


# -- baselines -------------------------------------------------------------------

def baseline_retrain(
    original: Model,
    retain,
    epochs: int,
    batch_size: int = 64,
    lr: float = 1e-3,
    weight_decay: float = 5e-4,
    seed: int = 0,
) -> Model:
    """Fresh random init (same architecture), cross-entropy training on the
    retain set only."""
    if len(retain.samples) == 0:
        raise ValueError("retain set is empty")
    cfg = original.config
    model = Model.build(
        cfg["input_shape"], cfg["num_classes"], hidden=cfg["hidden"],
        conv_channels=cfg["conv_channels"], seed=seed,
    )
    train_classifier(model, retain.samples, retain.labels, epochs=epochs,
                     batch_size=batch_size, lr=lr, weight_decay=weight_decay, seed=seed)
    return model


def baseline_finetune(
    original: Model,
    retain,
    epochs: int,
    batch_size: int = 64,
    lr: float = 1e-3,
    weight_decay: float = 5e-4,
    seed: int = 0,
) -> Model:
    """Continue cross-entropy training of the original model on the retain set."""
    if len(retain.samples) == 0:
        raise ValueError("retain set is empty")
    student = original.copy()
    train_classifier(student, retain.samples, retain.labels, epochs=epochs,
                     batch_size=batch_size, lr=lr, weight_decay=weight_decay, seed=seed)
    return student


def _baseline_monitored(
    original: Model,
    X: np.ndarray,
    y: np.ndarray,
    config: UnlearnConfig,
    monitor_X: np.ndarray,
    monitor_y: np.ndarray,
    epsilon: float,
    eval_data,
    loss_sign: float,
    loss_name: str,
) -> tuple[Model, UnlearnHistory]:
    student = original.copy()
    opt = AdamW(student.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    cycle = _Cycler(len(X), config.forget_batch, rng)

    def run_step() -> dict:
        idx = cycle.next()
        ce = T.cross_entropy(student.forward(X[idx]), y[idx])
        loss = T.mul(ce, loss_sign)
        loss.backward()
        return {loss_name: ce.item()}

    history = _monitored_loop(
        student, opt, run_step, cycle.batches_per_pass,
        monitor=lambda: _acc(student, monitor_X, monitor_y),
        epsilon=epsilon, max_epochs=config.max_epochs,
        evaluate=(lambda: _acc(student, eval_data.samples, eval_data.labels)) if eval_data is not None else None,
        monitored_name="forget_test_acc" if config.scenario == "cr" else "forget_acc",
    )
    return student, history


def baseline_negative_gradient(
    original: Model,
    forget,
    config: UnlearnConfig,
    forget_test=None,
    test=None,
    eval_data=None,
) -> tuple[Model, UnlearnHistory]:
    """Gradient ascent on the forget-set cross-entropy, with the same monitored
    stopping rule as the main unlearner."""
    if len(forget.samples) == 0:
        raise ValueError("forget set is empty")
    if config.scenario == "cr":
        if forget_test is None:
            raise ValueError("CR monitoring needs forget_test")
        monitor_X, monitor_y = forget_test.samples, forget_test.labels
    else:
        monitor_X, monitor_y = forget.samples, forget.labels
    epsilon = _resolve_epsilon(config, original, test)
    return _baseline_monitored(
        original, forget.samples, forget.labels, config,
        monitor_X, monitor_y, epsilon, eval_data,
        loss_sign=-1.0, loss_name="neg_cross_entropy",
    )


def resample_wrong_labels(labels: np.ndarray, num_classes: int, seed: int) -> np.ndarray:
    """Uniform draw over all classes except each sample's own."""
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    draw = rng.integers(0, num_classes - 1, size=len(labels))
    return np.where(draw >= labels, draw + 1, draw).astype(np.int64)


def baseline_random_labels(
    original: Model,
    forget,
    config: UnlearnConfig,
    forget_test=None,
    test=None,
    eval_data=None,
) -> tuple[Model, UnlearnHistory]:
    """Cross-entropy training of the forget set against resampled wrong labels,
    with the monitored stopping rule."""
    if len(forget.samples) == 0:
        raise ValueError("forget set is empty")
    if config.scenario == "cr":
        if forget_test is None:
            raise ValueError("CR monitoring needs forget_test")
        monitor_X, monitor_y = forget_test.samples, forget_test.labels
    else:
        monitor_X, monitor_y = forget.samples, forget.labels
    epsilon = _resolve_epsilon(config, original, test)
    wrong = resample_wrong_labels(forget.labels, original.num_classes, config.seed)
    return _baseline_monitored(
        original, forget.samples, wrong, config,
        monitor_X, monitor_y, epsilon, eval_data,
        loss_sign=1.0, loss_name="cross_entropy",
    )


class ScarUnlearner(BaseEstimator):
    """Estimator-style front end over :func:`scar_unlearn` /
    :func:`scar_self_forget`. Hyperparameters mirror :class:`UnlearnConfig`;
    ``fit`` stores the unlearned model as ``model_`` and the epoch trace as
    ``history_``."""

    def __init__(
        self,
        scenario="cr",
        lambda1=1.0,
        lambda2=5.0,
        lr=1e-3,
        forget_batch=32,
        surrogate_batch=64,
        temperature=1.0,
        delta=0.5,
        gamma0=3.0,
        gamma1=3.0,
        epsilon=0.0,
        max_epochs=30,
        weight_decay=0.0,
        seed=0,
    ):
        self.scenario = scenario
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.lr = lr
        self.forget_batch = forget_batch
        self.surrogate_batch = surrogate_batch
        self.temperature = temperature
        self.delta = delta
        self.gamma0 = gamma0
        self.gamma1 = gamma1
        self.epsilon = epsilon
        self.max_epochs = max_epochs
        self.weight_decay = weight_decay
        self.seed = seed

    def _config(self) -> UnlearnConfig:
        return UnlearnConfig(
            scenario=self.scenario, lambda1=self.lambda1, lambda2=self.lambda2,
            lr=self.lr, forget_batch=self.forget_batch, surrogate_batch=self.surrogate_batch,
            temperature=self.temperature, delta=self.delta, gamma0=self.gamma0,
            gamma1=self.gamma1, epsilon=self.epsilon, max_epochs=self.max_epochs,
            weight_decay=self.weight_decay, seed=self.seed,
        )

    def fit(self, model, forget, surrogate, prototypes, forget_test=None, test=None, eval_data=None):
        if isinstance(forget, (list, tuple, np.ndarray)) or np.isscalar(forget):
            ids = [int(forget)] if np.isscalar(forget) else [int(k) for k in forget]
            self.model_, self.history_ = scar_self_forget(
                model, ids, surrogate, prototypes, self._config(), eval_data=eval_data
            )
        else:
            self.model_, self.history_ = scar_unlearn(
                model, forget, surrogate, prototypes, self._config(),
                forget_test=forget_test, test=test, eval_data=eval_data,
            )
        return self

    def predict(self, X):
        return self.model_.predict(X)

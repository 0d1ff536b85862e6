"""Retain-free approximate machine unlearning with evaluation tooling."""

from .classifier import NeuralNetClassifier
from .datasets import (
    Dataset,
    ScenarioSplit,
    SurrogateDataset,
    gen_blobs,
    gen_shapes,
    gen_surrogate,
    ks_test,
    load_cifar_binary,
    split_cr,
    split_hr,
)
from .metrics import MetricsReport, MiaResult, accuracy, aggregate, aus, mia_cr, mia_hr
from .nn import AdamW, Model
from .prototypes import (
    ClassPrototype,
    GaussianPrototypes,
    fit_prototypes,
    mahalanobis,
    nearest_wrong_distribution,
    normalize_correlation,
    shrink_covariance,
    tukey_transform,
)
from .svm import SMOSVC, grid_search_svm
from .tensor import Tensor, cross_entropy, no_grad, softmax
from .unlearn import (
    ScarUnlearner,
    UnlearnConfig,
    UnlearnHistory,
    baseline_finetune,
    baseline_negative_gradient,
    baseline_random_labels,
    baseline_retrain,
    distillation_loss,
    distillation_trick_train,
    forget_loss,
    jensen_shannon,
    scar_self_forget,
    scar_unlearn,
    self_forget_partition,
)

__version__ = "0.1.0"

"""Binary classifiers over state vectors."""

from .base import THRESHOLD, Classifier, classifier_from_dict, load_classifier, save_classifier
from .hcsp import HcspTanModel, discretize_apply, discretize_fit, fit_hcsp, train_hcsp
from .mlp import MlpModel, TrainConfig, init_mlp, mlp_forward, mlp_gradient, mlp_loss, train_mlp

__all__ = [
    "THRESHOLD",
    "Classifier",
    "HcspTanModel",
    "MlpModel",
    "TrainConfig",
    "classifier_from_dict",
    "discretize_apply",
    "discretize_fit",
    "fit_hcsp",
    "init_mlp",
    "load_classifier",
    "mlp_forward",
    "mlp_gradient",
    "mlp_loss",
    "save_classifier",
    "train_hcsp",
    "train_mlp",
]

"""Probabilistic binary classifiers with a scikit-learn interface."""
from .base import PROBA_CLAMP, ConstantRateClassifier, ProbabilisticClassifier, clamp_proba
from .logistic import (BaggedLogisticClassifier, LogisticRegressionModel, PolynomialExpansion,
                       engineer_polynomial, fit_logistic)
from .persistence import load_model, model_from_dict, model_to_dict, save_model
from .presets import MODEL_KINDS, build_model, preset
from .trees import (DecisionTreeClassifier, GradientBoostedTreesClassifier,
                    RandomForestClassifier, Tree)

__all__ = [
    "PROBA_CLAMP", "ConstantRateClassifier", "ProbabilisticClassifier", "clamp_proba",
    "BaggedLogisticClassifier", "LogisticRegressionModel", "PolynomialExpansion",
    "engineer_polynomial", "fit_logistic", "load_model", "model_from_dict", "model_to_dict",
    "save_model", "MODEL_KINDS", "build_model", "preset", "DecisionTreeClassifier",
    "GradientBoostedTreesClassifier", "RandomForestClassifier", "Tree",
]

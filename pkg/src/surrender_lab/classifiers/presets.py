"""Tuned hyperparameters per shipped surrender profile, and a model factory."""
from __future__ import annotations

from .base import ConstantRateClassifier
from .logistic import BaggedLogisticClassifier
from .trees import (DecisionTreeClassifier, GradientBoostedTreesClassifier,
                    RandomForestClassifier)

MODEL_KINDS = ("baseline", "logistic_bag", "cart", "random_forest", "gbt")

LOGISTIC_PRESETS = {
    "profile_1": {"C": 1.26e8, "penalty": "l2"},
    "profile_2": {"C": 4.05, "penalty": "l1"},
    "profile_3": {"C": 8.22e6, "penalty": "l2"},
    "profile_4": {"C": 0.22, "penalty": "l2"},
}

FOREST_PRESETS = {
    "profile_1": {"bootstrap": False, "max_depth": 7, "max_features": 0.6,
                  "min_samples_leaf": 1, "min_samples_split": 2, "n_estimators": 336},
    "profile_2": {"bootstrap": True, "max_depth": 5, "max_features": 1.0,
                  "min_samples_leaf": 1, "min_samples_split": 2, "n_estimators": 403},
    "profile_3": {"bootstrap": True, "max_depth": 8, "max_features": 0.7,
                  "min_samples_leaf": 1, "min_samples_split": 2, "n_estimators": 1303},
    "profile_4": {"bootstrap": True, "max_depth": 8, "max_features": 0.5,
                  "min_samples_leaf": 1, "min_samples_split": 2, "n_estimators": 1202},
}

BOOSTING_PRESETS = {
    "profile_1": {"colsample_bylevel": 0.80, "gamma": 4.58, "learning_rate": 0.01, "max_depth": 3,
                  "min_child_weight": 10, "n_estimators": 920, "reg_alpha": 0.0,
                  "reg_lambda": 1.52, "subsample": 0.71},
    "profile_2": {"colsample_bylevel": 0.52, "gamma": 1.45, "learning_rate": 0.30, "max_depth": 1,
                  "min_child_weight": 70, "n_estimators": 980, "reg_alpha": 0.0,
                  "reg_lambda": 1.07, "subsample": 0.99},
    "profile_3": {"colsample_bylevel": 0.62, "gamma": 1.72, "learning_rate": 0.33, "max_depth": 1,
                  "min_child_weight": 51, "n_estimators": 320, "reg_alpha": 0.74,
                  "reg_lambda": 1.37, "subsample": 0.96},
    "profile_4": {"colsample_bylevel": 0.99, "gamma": 2.57, "learning_rate": 0.03, "max_depth": 2,
                  "min_child_weight": 10, "n_estimators": 780, "reg_alpha": 0.023,
                  "reg_lambda": 1.00, "subsample": 0.64},
}

CART_PRESET = {"max_depth": 7, "min_samples_split": 2, "min_samples_leaf": 1}

_PRESETS = {"logistic_bag": LOGISTIC_PRESETS, "random_forest": FOREST_PRESETS,
            "gbt": BOOSTING_PRESETS}

_CLASSES = {"baseline": ConstantRateClassifier, "logistic_bag": BaggedLogisticClassifier,
            "cart": DecisionTreeClassifier, "random_forest": RandomForestClassifier,
            "gbt": GradientBoostedTreesClassifier}


def preset(kind: str, profile: str | None = None) -> dict:
    """Hyperparameters for ``kind`` tuned on ``profile`` (profile 1 when unknown)."""
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}")
    if kind == "baseline":
        return {}
    if kind == "cart":
        return dict(CART_PRESET)
    table = _PRESETS[kind]
    return dict(table.get(profile, table["profile_1"]))


def model_class(kind: str):
    if kind not in _CLASSES:
        raise ValueError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}")
    return _CLASSES[kind]


def build_model(kind: str, profile: str | None = None, random_state=None, n_jobs: int = 1,
                **overrides):
    """Instantiate an unfitted model from its preset, with keyword overrides."""
    cls = model_class(kind)
    params = preset(kind, profile)
    params.update(overrides)
    accepted = cls().get_params()
    if "random_state" in accepted:
        params.setdefault("random_state", random_state)
    if "n_jobs" in accepted:
        params.setdefault("n_jobs", n_jobs)
    unknown = set(params) - set(accepted)
    if unknown:
        raise ValueError(f"unknown hyperparameters for {kind}: {sorted(unknown)}")
    return cls(**params)

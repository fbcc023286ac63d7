"""Experiment stages: simulate, train, evaluate and the resampling bias study.

Stages communicate only through files below the output directory::

    data/raw.csv, data/train.csv, data/test.csv, data/summary.json
    models/scaler.json, models/<kind>.json
    reports/metrics.json, reports/bands_<model>.csv, reports/pp_<model>_<split>.csv
    reports/bias_study.json, reports/pp_bias_<scheme>.csv
    manifest_<stage>.json

A stage that fails removes every file it has written so far.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from pathlib import Path

import numpy as np
import pandas as pd

from .. import __version__
from ..classifiers import build_model, load_model, save_model
from ..evaluation import (band_series, evaluate_predictions, pp_scatter_export,
                          write_bands)
from ..portfolio import generate_initial_portfolio
from ..resampling import ResamplePlan, bias_correct
from ..rng import CounterRNG, derive_seed
from ..surrender import ContractScaler, Dataset, simulate_events, split_in_time
from .config import ExperimentConfig

logger = logging.getLogger(__name__)

STAGES = ("simulate", "train", "evaluate", "bias-study")


class StageError(RuntimeError):
    pass


def stage_seed(master: int, stage: str, *path) -> int:
    """Documented key derivation: ``derive_seed(master, stage, *path)``."""
    return derive_seed(master, stage, *path)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _clean(value):
    """JSON-safe copy: numpy scalars unwrapped, NaN replaced by None."""
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_json(path, payload) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_clean(payload), indent=1, allow_nan=False) + "\n", encoding="utf-8")
    return path


class StageRun:
    """Tracks the files a stage writes and removes them if the stage fails."""

    def __init__(self, config: ExperimentConfig, stage: str, root=None):
        self.config = config
        self.stage = stage
        self.root = Path(root or config.output_dir)
        self.written: list[Path] = []
        self.inputs: dict[str, str] = {}
        self.seeds: dict[str, int] = {}
        self.failures: list[dict] = []
        self.extra: dict = {}

    def output(self, rel: str) -> Path:
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        if path not in self.written:
            self.written.append(path)
        return path

    def input(self, rel: str) -> Path:
        path = self.root / rel
        if not path.is_file():
            raise StageError(f"missing input {rel}; run the stage that produces it first")
        self.inputs[rel] = sha256_file(path)
        return path

    def seed(self, *path) -> int:
        value = stage_seed(self.config.seed, self.stage, *path)
        self.seeds["/".join(str(p) for p in (self.stage,) + path)] = value
        return value

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            for path in self.written:
                path.unlink(missing_ok=True)
            (self.root / f"manifest_{self.stage}.json").unlink(missing_ok=True)
            return False
        self.write_manifest()
        return False

    def write_manifest(self) -> Path:
        files = {p.relative_to(self.root).as_posix(): sha256_file(p)
                 for p in sorted(self.written) if p.exists()}
        manifest = {
            "stage": self.stage,
            "config_hash": self.config.digest(),
            "code_version": __version__,
            "master_seed": self.config.seed,
            "seeds": dict(sorted(self.seeds.items())),
            "inputs": dict(sorted(self.inputs.items())),
            "files": files,
            "failures": self.failures,
        }
        manifest.update(self.extra)
        return write_json(self.root / f"manifest_{self.stage}.json", manifest)


# ----------------------------------------------------------------------------- simulate

def data_summary(train: Dataset, test: Dataset, profile_name: str, share: float = 0.5) -> dict:
    """Sizes and imbalances per split plus balanced-resampling sizes for the training set."""
    n_pos = int(train.y.sum())
    n_neg = len(train) - n_pos
    raw = pd.concat([train.records, test.records])
    yearly = raw.groupby("calendar_year")["y"].agg(["size", "mean"])
    return {
        "profile": profile_name,
        "observations": len(train) + len(test),
        "split_year": train.split_year,
        "train": {"size": len(train), "imbalance": n_pos / len(train)},
        "rus_size": n_pos + int(math.floor(n_pos * (1 - share) / share + 0.5)),
        "smote_size": n_neg + int(math.floor(n_neg * share / (1 - share) + 0.5)),
        "test": {"size": len(test), "imbalance": float(test.y.mean()) if len(test) else None},
        "yearly": [{"calendar_year": int(year), "n": int(row["size"]), "rate": float(row["mean"])}
                   for year, row in yearly.iterrows()],
    }


def cmd_simulate(config: ExperimentConfig) -> dict:
    with StageRun(config, "simulate") as run:
        profile = config.load_profile()
        root = CounterRNG(config.seed).child("simulate")
        run.seed("portfolio")
        run.seed("events")
        portfolio = generate_initial_portfolio(config.portfolio.n0, root.child("portfolio"),
                                               econ=config.economics, mort=config.mortality)
        dataset = simulate_events(portfolio, profile, config.portfolio.horizon,
                                  config.portfolio.new_business_rate, config.mortality,
                                  root.child("events"), config.economics, n_jobs=config.workers)
        train, test = split_in_time(dataset, config.split_share)
        dataset.to_csv(run.output("data/raw.csv"))
        train.to_csv(run.output("data/train.csv"))
        test.to_csv(run.output("data/test.csv"))
        share = (config.resampling or config.bias_study).target_minority_share
        summary = data_summary(train, test, profile.name, share)
        write_json(run.output("data/summary.json"), summary)
        run.extra["summary"] = {k: summary[k] for k in ("observations", "split_year", "train", "test")}
    return run.extra["summary"]


# ----------------------------------------------------------------------------- train

def _read_split(run: StageRun, split: str) -> Dataset:
    path = run.input(f"data/{split}.csv")
    ds = Dataset.read_csv(path)
    if len(ds) == 0:
        raise StageError(f"data/{split}.csv holds no records")
    return ds


def resample_features(X: pd.DataFrame, y: np.ndarray, plan: ResamplePlan, seed: int):
    sampler = plan.build(seed)
    X_res, y_res = sampler.fit_resample(X.to_numpy(dtype=float), y)
    return pd.DataFrame(X_res, columns=X.columns), y_res


def cmd_train(config: ExperimentConfig) -> dict:
    with StageRun(config, "train") as run:
        profile = config.load_profile()
        train = _read_split(run, "train")
        scaler = ContractScaler(profile.feature_keys).fit(train)
        write_json(run.output("models/scaler.json"), scaler.to_dict())
        X, y = scaler.transform(train), train.y
        meta = {"profile": profile.name, "original_base_rate": float(y.mean()),
                "train_size": int(y.size)}
        if config.resampling is not None:
            plan = config.resampling
            X, y = resample_features(X, y, plan, run.seed("resample"))
            meta["resampling"] = {"scheme": plan.scheme,
                                  "target_minority_share": plan.target_minority_share,
                                  "smote_k": plan.smote_k,
                                  "resampled_size": int(y.size),
                                  "resampled_positives": int(y.sum()),
                                  "resampled_rate": float(y.mean())}
            run.extra["resampling"] = meta["resampling"]
        trained = []
        for kind in config.models.roster:
            try:
                model = build_model(kind, profile.name, random_state=run.seed("model", kind),
                                    n_jobs=config.workers, **config.models.overrides.get(kind, {}))
                model.fit(X, y)
                save_model(model, run.output(f"models/{kind}.json"), meta)
                trained.append(kind)
            except Exception as exc:  # isolate per-model failures
                logger.error("training %s failed: %s", kind, exc)
                run.failures.append({"model": kind, "error": f"{type(exc).__name__}: {exc}"})
        if not trained:
            raise StageError("every model failed to train: "
                             + "; ".join(f["error"] for f in run.failures))
        run.extra["trained"] = trained
    return {"trained": trained, "failures": run.failures}


# ----------------------------------------------------------------------------- evaluate

def _load_models(run: StageRun, roster):
    models = {}
    for kind in roster:
        rel = f"models/{kind}.json"
        if not (run.root / rel).is_file():
            run.failures.append({"model": kind, "error": "no persisted model"})
            continue
        models[kind] = load_model(run.input(rel))
    if not models:
        raise StageError("no trained models found; run the train stage first")
    return models


def _predictions(model, frame, corrected: bool):
    p = model.predict_proba(frame)[:, 1]
    if not corrected:
        return p
    meta = model.training_meta_
    return bias_correct(np.clip(p, 1e-12, 1 - 1e-12), meta["original_base_rate"],
                        meta["resampling"]["resampled_rate"])


def cmd_evaluate(config: ExperimentConfig) -> dict:
    with StageRun(config, "evaluate") as run:
        splits = {"train": _read_split(run, "train"), "test": _read_split(run, "test")}
        scaler = ContractScaler.from_dict(json.loads(run.input("models/scaler.json").read_text()))
        models = _load_models(run, config.models.roster)
        features = {name: scaler.transform(ds) for name, ds in splits.items()}
        if any(ds.true_p is None for ds in splits.values()):
            logger.warning("latent surrender probabilities missing; latent statistics disabled")

        rows = []
        everything = pd.concat([splits["train"].records, splits["test"].records], ignore_index=True)
        all_features = pd.concat([features["train"], features["test"]], ignore_index=True)
        for kind, model in models.items():
            variants = [(kind, False)]
            if config.evaluation.bias_correct and "resampling" in model.training_meta_:
                variants.append((f"{kind}+bias_corrected", True))
            for label, corrected in variants:
                for split, ds in splits.items():
                    p = _predictions(model, features[split], corrected)
                    row = {"model": label, "split": split}
                    row.update(evaluate_predictions(ds.y, p, ds.true_p, config.evaluation.thresholds))
                    rows.append(row)
                    if split in config.evaluation.pp_splits and ds.true_p is not None:
                        pp_scatter_export(ds.true_p, p, run.output(f"reports/pp_{label}_{split}.csv"))
                p_all = _predictions(model, all_features, corrected)
                points = band_series(everything["calendar_year"], everything["y"], p_all,
                                     config.evaluation.alpha)
                write_bands(points, run.output(f"reports/bands_{label}.csv"))
        write_json(run.output("reports/metrics.json"),
                   {"alpha": config.evaluation.alpha, "thresholds": list(config.evaluation.thresholds),
                    "rows": rows})
        run.extra["models"] = list(models)
    return {"models": list(models), "rows": len(rows), "failures": run.failures}


# ----------------------------------------------------------------------------- bias study

def cmd_bias_study(config: ExperimentConfig) -> dict:
    settings = config.bias_study
    with StageRun(config, "bias-study") as run:
        profile = config.load_profile()
        train, test = _read_split(run, "train"), _read_split(run, "test")
        if test.true_p is None:
            raise StageError("the bias study needs latent probabilities in data/test.csv")
        scaler = ContractScaler(profile.feature_keys).fit(train)
        X, X_test = scaler.transform(train), scaler.transform(test)
        base_rate = float(train.y.mean())
        rows = []
        for scheme in (None,) + tuple(settings.schemes):
            label = scheme or "none"
            try:
                Xs, ys = X, train.y
                if scheme is not None:
                    plan = ResamplePlan(scheme, settings.target_minority_share, settings.smote_k)
                    Xs, ys = resample_features(X, train.y, plan, run.seed("resample", scheme))
                model = build_model(settings.model, profile.name,
                                    random_state=run.seed("model", label),
                                    n_jobs=config.workers,
                                    **config.models.overrides.get(settings.model, {}))
                model.fit(Xs, ys)
            except Exception as exc:
                logger.error("bias study with %s failed: %s", label, exc)
                run.failures.append({"scheme": label, "error": f"{type(exc).__name__}: {exc}"})
                continue
            p = model.predict_proba(X_test)[:, 1]
            variants = [(False, p)]
            if scheme is not None:
                variants.append((True, bias_correct(np.clip(p, 1e-12, 1 - 1e-12), base_rate,
                                                    float(np.mean(ys)))))
            for corrected, q in variants:
                stats = evaluate_predictions(test.y, q, test.true_p, (0.5,))
                rows.append({"scheme": label, "bias_corrected": corrected,
                             "train_size": int(ys.size), "train_rate": float(np.mean(ys)),
                             "f1": stats["f_beta@0.5"], "accuracy": stats["accuracy@0.5"],
                             "cross_entropy": stats["cross_entropy"], "mae": stats["mae"],
                             "var": stats["var"], "mean_signed": stats["mean_signed"]})
            pp_scatter_export(test.true_p, p, run.output(f"reports/pp_bias_{label}.csv"))
        if not rows:
            raise StageError("every bias-study fit failed")
        write_json(run.output("reports/bias_study.json"),
                   {"model": settings.model, "base_rate": base_rate, "rows": rows})
    return {"model": settings.model, "rows": len(rows), "failures": run.failures}


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "evaluate": cmd_evaluate,
            "bias-study": cmd_bias_study}

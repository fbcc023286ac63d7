"""Experiment configuration: YAML in, validated dataclasses out.

Every validation failure raises :class:`ConfigError` carrying the dotted path
of the offending field, e.g. ``portfolio.n0``.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from ..actuarial import EconomicAssumptions, MakehamParams
from ..classifiers.presets import MODEL_KINDS
from ..resampling import SCHEMES, ResamplePlan
from ..surrender import SurrenderProfile, load_profile, shipped_profiles


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.message = message


@dataclass(frozen=True)
class PortfolioSettings:
    n0: int = 30_000
    horizon: int = 15
    new_business_rate: float = 0.06


@dataclass(frozen=True)
class ModelSettings:
    roster: tuple = ("baseline", "logistic_bag", "random_forest", "gbt")
    overrides: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EvaluationSettings:
    alpha: float = 0.95
    thresholds: tuple = (0.5,)
    bias_correct: bool = True
    pp_splits: tuple = ("test",)


@dataclass(frozen=True)
class BiasStudySettings:
    model: str = "logistic_bag"
    schemes: tuple = SCHEMES
    target_minority_share: float = 0.5
    smote_k: int = 5


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    output_dir: str
    profile: str
    portfolio: PortfolioSettings
    mortality: MakehamParams
    economics: EconomicAssumptions
    split_share: float
    models: ModelSettings
    resampling: ResamplePlan | None
    evaluation: EvaluationSettings
    bias_study: BiasStudySettings
    workers: int = 1
    source: str | None = None

    def load_profile(self) -> SurrenderProfile:
        return load_profile(self._profile_ref())

    def _profile_ref(self):
        if self.profile in shipped_profiles():
            return self.profile
        path = Path(self.profile)
        if not path.is_absolute() and self.source:
            path = Path(self.source).parent / path
        return path

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("source")
        return json.loads(json.dumps(out, default=list))

    def digest(self) -> str:
        """SHA-256 over the canonical JSON form, ignoring output location and worker count."""
        spec = self.to_dict()
        spec.pop("output_dir")
        spec.pop("workers")
        text = json.dumps(spec, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def default_config_dict() -> dict:
    text = resources.files("surrender_lab").joinpath("data/default_config.yaml").read_text("utf-8")
    return yaml.safe_load(text)


# ----------------------------------------------------------------------------- validation

def _expect_mapping(value, path):
    if not isinstance(value, dict):
        raise ConfigError(path, f"expected a mapping, got {type(value).__name__}")
    return value


def _reject_unknown(section: dict, allowed, path):
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(where, f"unknown field (allowed: {', '.join(sorted(allowed))})")


def _int(value, path, lo=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(path, f"must be at least {lo}, got {value}")
    return value


def _float(value, path, lo=None, hi=None, open_lo=False, open_hi=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    value = float(value)
    if lo is not None and (value < lo or (open_lo and value == lo)):
        raise ConfigError(path, f"must be {'>' if open_lo else '>='} {lo}, got {value}")
    if hi is not None and (value > hi or (open_hi and value == hi)):
        raise ConfigError(path, f"must be {'<' if open_hi else '<='} {hi}, got {value}")
    return value


def _choice(value, options, path):
    if value not in options:
        raise ConfigError(path, f"must be one of {', '.join(options)}, got {value!r}")
    return value


def _list(value, path):
    if not isinstance(value, (list, tuple)):
        raise ConfigError(path, f"expected a list, got {type(value).__name__}")
    return list(value)


def _dataclass_section(cls, raw, path):
    raw = _expect_mapping(raw, path)
    names = cls.__dataclass_fields__
    _reject_unknown(raw, names, path)
    values = {k: _float(v, f"{path}.{k}") if k != "retirement_age" else _int(v, f"{path}.{k}", 1)
              for k, v in raw.items()}
    try:
        return cls(**values)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


def _merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key != "overrides":
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def parse_config(raw: dict, source: str | None = None) -> ExperimentConfig:
    """Validate a raw mapping (merged over the defaults) into an :class:`ExperimentConfig`."""
    raw = _merge(default_config_dict(), _expect_mapping(raw or {}, ""))
    top = ("seed", "output_dir", "workers", "profile", "portfolio", "mortality", "economics",
           "split_share", "models", "resampling", "evaluation", "bias_study")
    _reject_unknown(raw, top, "")

    if raw.get("seed") is None:
        raise ConfigError("seed", "a master seed is required")
    seed = _int(raw["seed"], "seed", 0)
    if seed >= 2**64:
        raise ConfigError("seed", "must fit in 64 bits")
    if not isinstance(raw["output_dir"], str) or not raw["output_dir"]:
        raise ConfigError("output_dir", "expected a nonempty path")
    workers = _int(raw["workers"], "workers", 1)

    profile = raw["profile"]
    if not isinstance(profile, str):
        raise ConfigError("profile", "expected a profile name or path")
    if profile not in shipped_profiles():
        path = Path(profile)
        if not path.is_absolute() and source:
            path = Path(source).parent / path
        if not path.is_file():
            raise ConfigError("profile", f"not a shipped profile and no such file: {profile}")
        try:
            SurrenderProfile.from_yaml(path)
        except Exception as exc:
            raise ConfigError("profile", f"invalid profile file: {exc}") from None

    pf = _expect_mapping(raw["portfolio"], "portfolio")
    _reject_unknown(pf, PortfolioSettings.__dataclass_fields__, "portfolio")
    portfolio = PortfolioSettings(
        _int(pf["n0"], "portfolio.n0", 1),
        _int(pf["horizon"], "portfolio.horizon", 1),
        _float(pf["new_business_rate"], "portfolio.new_business_rate", 0.0))

    mortality = _dataclass_section(MakehamParams, raw["mortality"], "mortality")
    economics = _dataclass_section(EconomicAssumptions, raw["economics"], "economics")
    split_share = _float(raw["split_share"], "split_share", 0.0, 1.0, open_lo=True, open_hi=True)

    md = _expect_mapping(raw["models"], "models")
    _reject_unknown(md, ModelSettings.__dataclass_fields__, "models")
    roster = _list(md["roster"], "models.roster")
    if not roster:
        raise ConfigError("models.roster", "at least one model is required")
    for i, kind in enumerate(roster):
        _choice(kind, MODEL_KINDS, f"models.roster[{i}]")
    if len(set(roster)) != len(roster):
        raise ConfigError("models.roster", "duplicate model kinds")
    overrides = _expect_mapping(md.get("overrides") or {}, "models.overrides")
    for kind, params in overrides.items():
        _choice(kind, MODEL_KINDS, f"models.overrides.{kind}")
        _expect_mapping(params, f"models.overrides.{kind}")
    models = ModelSettings(tuple(roster), overrides)

    resampling = None
    if raw["resampling"] is not None:
        rs = _expect_mapping(raw["resampling"], "resampling")
        _reject_unknown(rs, ("scheme", "target_minority_share", "smote_k"), "resampling")
        if "scheme" not in rs:
            raise ConfigError("resampling.scheme", "required when resampling is enabled")
        resampling = ResamplePlan(
            _choice(rs["scheme"], SCHEMES, "resampling.scheme"),
            _float(rs.get("target_minority_share", 0.5), "resampling.target_minority_share",
                   0.0, 1.0, open_lo=True, open_hi=True),
            _int(rs.get("smote_k", 5), "resampling.smote_k", 1))

    ev = _expect_mapping(raw["evaluation"], "evaluation")
    _reject_unknown(ev, EvaluationSettings.__dataclass_fields__, "evaluation")
    thresholds = tuple(_float(t, f"evaluation.thresholds[{i}]", 0.0, 1.0)
                       for i, t in enumerate(_list(ev["thresholds"], "evaluation.thresholds")))
    if not isinstance(ev["bias_correct"], bool):
        raise ConfigError("evaluation.bias_correct", "expected true or false")
    pp_splits = tuple(_choice(s, ("train", "test"), f"evaluation.pp_splits[{i}]")
                      for i, s in enumerate(_list(ev["pp_splits"], "evaluation.pp_splits")))
    evaluation = EvaluationSettings(
        _float(ev["alpha"], "evaluation.alpha", 0.0, 1.0, open_lo=True, open_hi=True),
        thresholds, ev["bias_correct"], pp_splits)

    bs = _expect_mapping(raw["bias_study"], "bias_study")
    _reject_unknown(bs, BiasStudySettings.__dataclass_fields__, "bias_study")
    schemes = tuple(_choice(s, SCHEMES, f"bias_study.schemes[{i}]")
                    for i, s in enumerate(_list(bs["schemes"], "bias_study.schemes")))
    bias_study = BiasStudySettings(
        _choice(bs["model"], MODEL_KINDS, "bias_study.model"), schemes,
        _float(bs["target_minority_share"], "bias_study.target_minority_share",
               0.0, 1.0, open_lo=True, open_hi=True),
        _int(bs["smote_k"], "bias_study.smote_k", 1))

    return ExperimentConfig(seed, raw["output_dir"], profile, portfolio, mortality, economics,
                            split_share, models, resampling, evaluation, bias_study, workers,
                            None if source is None else str(source))


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a YAML config (defaults when ``path`` is None) and merge ``overrides`` over it."""
    raw = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError("", f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError("", f"config is not valid YAML: {exc}") from None
    raw = _merge(_expect_mapping(raw, ""), overrides or {})
    return parse_config(raw, None if path is None else str(path))

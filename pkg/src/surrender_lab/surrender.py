"""Latent surrender profiles, competing-risk event simulation and data preparation."""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd
import yaml
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .actuarial import (DEFAULT_ECONOMICS, DEFAULT_MORTALITY, PREMIUM_FREQUENCIES,
                        EconomicAssumptions, MakehamParams, invert_survival)
from .portfolio import Portfolio, advance_year
from .rng import CounterRNG

logger = logging.getLogger(__name__)

FEATURE_KEYS = ("calendar_year", "age", "face_amount", "duration", "elapsed_duration",
                "remaining_duration", "premium_frequency", "annual_premium")
FREQUENCY_COLUMNS = tuple(f"premium_freq_{f}" for f in PREMIUM_FREQUENCIES)
NUMERIC_FEATURES = ("calendar_year", "age", "face_amount", "duration", "elapsed_duration",
                    "remaining_duration", "annual_premium")
DATASET_COLUMNS = ["policy_id", "calendar_year", "age", "face_amount", "duration",
                   "elapsed_duration", "remaining_duration", *FREQUENCY_COLUMNS,
                   "annual_premium", "y", "true_p"]


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


# --------------------------------------------------------------------------- profiles

@dataclass(frozen=True)
class StepFunction:
    """Piecewise-constant effect: ``values[i]`` on ``[breakpoints[i-1], breakpoints[i])``."""

    feature_key: str
    breakpoints: tuple
    values: tuple

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        if b.size > 1 and np.any(np.diff(b) <= 0):
            raise ValueError(f"{self.feature_key}: breakpoints must be strictly ascending")
        if len(self.values) != len(self.breakpoints) + 1:
            raise ValueError(f"{self.feature_key}: need len(breakpoints) + 1 values")

    def __call__(self, x):
        idx = np.searchsorted(np.asarray(self.breakpoints, dtype=float),
                              np.asarray(x, dtype=float), side="right")
        return np.asarray(self.values, dtype=float)[idx]


def effect_from_odds_ratio(odds_ratio: float) -> float:
    """Log-odds effect of a level relative to a baseline level with effect 0."""
    if not odds_ratio > 0:
        raise ValueError("odds ratio must be positive")
    return float(np.log(odds_ratio))


def feature_values(frame, key: str) -> np.ndarray:
    """Raw feature column, with premium frequency as category index 0/1/2."""
    if key not in FEATURE_KEYS:
        raise KeyError(f"unknown contract feature {key!r}")
    if key == "premium_frequency":
        if "premium_frequency" in frame:
            codes = {f: i for i, f in enumerate(PREMIUM_FREQUENCIES)}
            return np.array([codes[v] for v in frame["premium_frequency"]], dtype=float)
        if all(c in frame for c in FREQUENCY_COLUMNS):
            return np.argmax(np.column_stack([frame[c] for c in FREQUENCY_COLUMNS]), axis=1).astype(float)
        raise KeyError("premium_frequency")
    if key not in frame:
        raise KeyError(key)
    return np.asarray(frame[key], dtype=float)


@dataclass(frozen=True)
class SurrenderProfile:
    """Logistic meta-model ``sigmoid(intercept + sum of step effects)``."""

    name: str
    intercept: float
    effects: tuple = ()
    description: str = ""
    target_rate: float | None = None

    def __post_init__(self):
        for eff in self.effects:
            if eff.feature_key not in FEATURE_KEYS:
                raise ValueError(f"profile {self.name}: unknown feature {eff.feature_key!r}")

    @property
    def feature_keys(self) -> list[str]:
        return [e.feature_key for e in self.effects]

    def linear_predictor(self, frame, intercept: float | None = None) -> np.ndarray:
        eta = np.full(len(frame), self.intercept if intercept is None else intercept, dtype=float)
        for eff in self.effects:
            eta += eff(feature_values(frame, eff.feature_key))
        return eta

    def probability(self, frame) -> np.ndarray:
        return sigmoid(self.linear_predictor(frame))

    def with_intercept(self, intercept: float) -> "SurrenderProfile":
        return SurrenderProfile(self.name, float(intercept), self.effects, self.description,
                                self.target_rate)

    @classmethod
    def from_dict(cls, spec: dict) -> "SurrenderProfile":
        effects = tuple(
            StepFunction(key, tuple(float(b) for b in e.get("breakpoints", [])),
                         tuple(float(v) for v in e["values"]))
            for key, e in (spec.get("effects") or {}).items())
        target = spec.get("target_rate")
        return cls(spec["name"], float(spec["intercept"]), effects, spec.get("description", ""),
                   None if target is None else float(target))

    def to_dict(self) -> dict:
        return {"name": self.name, "description": self.description, "intercept": self.intercept,
                "target_rate": self.target_rate,
                "effects": {e.feature_key: {"breakpoints": list(e.breakpoints), "values": list(e.values)}
                            for e in self.effects}}

    @classmethod
    def from_yaml(cls, path) -> "SurrenderProfile":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh))


def shipped_profiles() -> list[str]:
    root = resources.files("surrender_lab") / "data" / "profiles"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_profile(name_or_path) -> SurrenderProfile:
    """Load a profile from a YAML path or by shipped name (``profile_1`` ...)."""
    path = Path(name_or_path)
    if path.suffix in (".yaml", ".yml") and path.exists():
        return SurrenderProfile.from_yaml(path)
    shipped = resources.files("surrender_lab") / "data" / "profiles" / f"{name_or_path}.yaml"
    if not shipped.is_file():
        raise FileNotFoundError(f"no profile file or shipped profile named {name_or_path!r}")
    with shipped.open(encoding="utf-8") as fh:
        return SurrenderProfile.from_dict(yaml.safe_load(fh))


def profile_probability(profile: SurrenderProfile, contract) -> float:
    """True surrender probability of a single contract (mapping or Contract)."""
    row = contract if isinstance(contract, dict) else vars(contract)
    frame = {k: [v] for k, v in row.items()}
    return float(profile.probability(frame)[0])


def calibrate_intercept(profile: SurrenderProfile, reference, target_rate: float,
                        lo: float = -40.0, hi: float = 40.0, tol: float = 1e-10) -> float:
    """Intercept giving mean probability ``target_rate`` over ``reference``."""
    if not 0 < target_rate < 1:
        raise ValueError("target rate must lie in (0, 1)")
    frame = reference.contracts if isinstance(reference, Portfolio) else reference
    offsets = profile.linear_predictor(frame, intercept=0.0)

    def excess(b0):
        return sigmoid(b0 + offsets).mean() - target_rate

    if excess(lo) > 0 or excess(hi) < 0:
        raise ValueError(f"target rate not bracketed by intercepts in [{lo}, {hi}]")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if excess(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


# --------------------------------------------------------------------------- datasets

@dataclass
class Dataset:
    """Policy-year observations in the ``DATASET_COLUMNS`` layout."""

    records: pd.DataFrame
    split_year: int | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    @property
    def y(self) -> np.ndarray:
        return self.records["y"].to_numpy(dtype=np.int64)

    @property
    def true_p(self) -> np.ndarray | None:
        if "true_p" not in self.records or self.records["true_p"].isna().all():
            return None
        return self.records["true_p"].to_numpy(dtype=float)

    @property
    def years(self) -> np.ndarray:
        return self.records["calendar_year"].to_numpy(dtype=np.int64)

    def to_csv(self, path):
        self.records.to_csv(Path(path), index=False, encoding="utf-8")

    @classmethod
    def read_csv(cls, path) -> "Dataset":
        return cls(pd.read_csv(Path(path), encoding="utf-8"))


def one_hot_frequency(values) -> pd.DataFrame:
    values = np.asarray(values)
    return pd.DataFrame({col: (values == f).astype(np.int64)
                         for col, f in zip(FREQUENCY_COLUMNS, PREMIUM_FREQUENCIES)})


def _records_from_frame(frame: pd.DataFrame, y, p) -> pd.DataFrame:
    out = frame[["policy_id", "calendar_year", "age", "face_amount", "duration",
                 "elapsed_duration", "remaining_duration"]].reset_index(drop=True)
    out = pd.concat([out, one_hot_frequency(frame["premium_frequency"])], axis=1)
    out["annual_premium"] = frame["annual_premium"].to_numpy()
    out["y"] = np.asarray(y, dtype=np.int64)
    out["true_p"] = np.asarray(p, dtype=float)
    return out[DATASET_COLUMNS]


def _chunks(n: int, n_jobs: int):
    bounds = np.linspace(0, n, max(1, n_jobs) + 1).astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _pmap(fn, n: int, n_jobs: int):
    """Apply ``fn(slice)`` over row chunks and concatenate; order-preserving."""
    parts = _chunks(n, n_jobs)
    if n_jobs <= 1 or len(parts) <= 1:
        results = [fn(s) for s in parts]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(fn, parts))
    if not results:
        return np.empty(0)
    return np.concatenate(results)


def _death_times(rng: CounterRNG, ids, ages, mortality: MakehamParams, n_jobs: int) -> np.ndarray:
    if not mortality.has_hazard or len(ids) == 0:
        return np.full(len(ids), np.inf)
    u = rng.child("death").uniform(ids)

    def job(s):
        return invert_survival(ages[s], u[s], mortality)

    return _pmap(job, len(ids), n_jobs)


def simulate_events(initial_portfolio: Portfolio, profile: SurrenderProfile, horizon_years: int,
                    new_business_rate: float = 0.06,
                    mortality: MakehamParams = DEFAULT_MORTALITY,
                    rng: CounterRNG | None = None,
                    econ: EconomicAssumptions = DEFAULT_ECONOMICS,
                    tie_rule: bool = True, n_jobs: int = 1) -> Dataset:
    """Roll the portfolio forward, emitting one record per active policy-year.

    In every year each active policy surrenders if ``p(1|x) >= V`` with a
    fresh uniform ``V``.  Death (drawn once at entry by inverse transform) and
    maturity compete; when one falls inside the year at fraction ``tau``,
    a realised surrender wins only with probability ``tau``.  With
    ``tie_rule=False`` the competing event always wins.  All draws come from
    per-policy counter streams, so ``n_jobs`` never changes the output.
    """
    if horizon_years < 1:
        raise ValueError("horizon must be at least one year")
    rng = CounterRNG(0) if rng is None else rng
    surrender_stream = rng.child("surrender")
    tie_stream = rng.child("tie")
    nb_stream = rng.child("new-business")

    portfolio = initial_portfolio
    frame = portfolio.contracts
    death = _death_times(rng, frame["policy_id"].to_numpy(), frame["age"].to_numpy(),
                         mortality, n_jobs)
    # absolute calendar time of death per policy
    death_at = dict(zip(frame["policy_id"].to_numpy().tolist(),
                        (death + portfolio.calendar_year).tolist()))
    next_id = int(frame["policy_id"].max()) + 1 if len(frame) else 0
    blocks = []

    for step in range(horizon_years):
        frame = portfolio.contracts
        if len(frame) == 0:
            break
        year = portfolio.calendar_year
        ids = frame["policy_id"].to_numpy()
        p = _pmap(lambda s: profile.probability(frame.iloc[s]), len(frame), n_jobs)
        v = surrender_stream.uniform(ids, year)
        w = tie_stream.uniform(ids, year)

        to_death = np.array([death_at[i] for i in ids.tolist()]) - year
        to_maturity = frame["remaining_duration"].to_numpy()
        competing = np.minimum(to_death, to_maturity)
        ends = competing <= 1.0
        wants = p >= v
        if tie_rule:
            y = wants & (~ends | (w < competing))
        else:
            y = wants & ~ends
        blocks.append(_records_from_frame(frame, y, p))

        if step == horizon_years - 1:
            break
        leaving = ids[y | ends]
        portfolio = advance_year(portfolio, nb_stream, new_business_rate, terminated=leaving,
                                 next_policy_id=next_id, econ=econ, mort=mortality)
        fresh = portfolio.contracts["policy_id"].to_numpy() >= next_id
        if fresh.any():
            new = portfolio.contracts[fresh]
            t = _death_times(rng, new["policy_id"].to_numpy(), new["age"].to_numpy(),
                             mortality, n_jobs)
            death_at.update(zip(new["policy_id"].tolist(), (t + year + 1).tolist()))
            next_id = int(new["policy_id"].max()) + 1

    records = pd.concat(blocks, ignore_index=True) if blocks else pd.DataFrame(columns=DATASET_COLUMNS)
    records = records.sort_values(["policy_id", "calendar_year"], kind="stable").reset_index(drop=True)
    return Dataset(records, meta={"profile": profile.name, "horizon": horizon_years})


# --------------------------------------------------------------------------- split & scaling

def split_in_time(dataset: Dataset, share: float = 0.7) -> tuple[Dataset, Dataset]:
    """Split at the first calendar year whose cumulative record share reaches ``share``.

    Records of years up to and including the split year form the training
    set.  The split year is capped at the second-to-last observed year so the
    test set is never empty.
    """
    if not 0 < share < 1:
        raise ValueError("share must lie in (0, 1)")
    years = dataset.years
    observed, counts = np.unique(years, return_counts=True)
    if observed.size < 2:
        raise ValueError("need at least two calendar years to split in time")
    cumulative = np.cumsum(counts) / counts.sum()
    pos = int(np.argmax(cumulative >= share - 1e-12))
    split_year = int(observed[min(pos, observed.size - 2)])
    mask = years <= split_year
    train = Dataset(dataset.records[mask].reset_index(drop=True), split_year, dict(dataset.meta))
    test = Dataset(dataset.records[~mask].reset_index(drop=True), split_year, dict(dataset.meta))
    return train, test


class ContractScaler(TransformerMixin, BaseEstimator):
    """Min-max scale numeric contract features to ``feature_range``.

    Frequency indicator columns pass through unchanged.  Numeric columns that
    are constant on the fitting data are dropped with a warning.

    Parameters
    ----------
    features : sequence of str or None
        Model inputs.  ``"premium_frequency"`` expands to the three indicator
        columns.  ``None`` uses every contract feature.
    feature_range : tuple
        Target interval, ``(-1, 1)`` by default.
    """

    def __init__(self, features=None, feature_range=(-1.0, 1.0)):
        self.features = features
        self.feature_range = feature_range

    def _columns(self):
        keys = FEATURE_KEYS if self.features is None else self.features
        cols = []
        for key in keys:
            if key == "premium_frequency" or key in FREQUENCY_COLUMNS:
                cols.extend(c for c in FREQUENCY_COLUMNS if c not in cols)
            elif key in NUMERIC_FEATURES:
                cols.append(key)
            else:
                raise ValueError(f"unknown model feature {key!r}")
        return cols

    def fit(self, X, y=None):
        frame = X.records if isinstance(X, Dataset) else X
        if len(frame) == 0:
            raise ValueError("cannot fit scaler on empty data")
        numeric, indicators, lo, hi = [], [], [], []
        for col in self._columns():
            if col in FREQUENCY_COLUMNS:
                indicators.append(col)
                continue
            values = frame[col].to_numpy(dtype=float)
            vmin, vmax = values.min(), values.max()
            if vmax <= vmin:
                warnings.warn(f"feature {col!r} is constant on training data; dropped",
                              stacklevel=2)
                continue
            numeric.append(col)
            lo.append(vmin)
            hi.append(vmax)
        self.numeric_columns_ = numeric
        self.indicator_columns_ = indicators
        self.data_min_ = np.asarray(lo, dtype=float)
        self.data_max_ = np.asarray(hi, dtype=float)
        self.feature_names_out_ = np.asarray(numeric + indicators, dtype=object)
        return self

    def transform(self, X) -> pd.DataFrame:
        check_is_fitted(self, "feature_names_out_")
        frame = X.records if isinstance(X, Dataset) else X
        a, b = self.feature_range
        raw = frame[self.numeric_columns_].to_numpy(dtype=float)
        scaled = a + (b - a) * (raw - self.data_min_) / (self.data_max_ - self.data_min_)
        out = pd.DataFrame(scaled, columns=self.numeric_columns_, index=frame.index)
        for col in self.indicator_columns_:
            out[col] = frame[col].to_numpy(dtype=float)
        return out

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "feature_names_out_")
        return self.feature_names_out_.copy()

    def to_dict(self) -> dict:
        check_is_fitted(self, "feature_names_out_")
        return {"features": None if self.features is None else list(self.features),
                "feature_range": list(self.feature_range),
                "numeric_columns": list(self.numeric_columns_),
                "indicator_columns": list(self.indicator_columns_),
                "data_min": self.data_min_.tolist(), "data_max": self.data_max_.tolist()}

    @classmethod
    def from_dict(cls, spec: dict) -> "ContractScaler":
        scaler = cls(spec["features"], tuple(spec["feature_range"]))
        scaler.numeric_columns_ = list(spec["numeric_columns"])
        scaler.indicator_columns_ = list(spec["indicator_columns"])
        scaler.data_min_ = np.asarray(spec["data_min"], dtype=float)
        scaler.data_max_ = np.asarray(spec["data_max"], dtype=float)
        scaler.feature_names_out_ = np.asarray(
            scaler.numeric_columns_ + scaler.indicator_columns_, dtype=object)
        return scaler


def preprocess(train: Dataset, test: Dataset, features=None):
    """Fit the scaler on ``train`` only and return scaled feature tables for both."""
    scaler = ContractScaler(features).fit(train)
    return scaler.transform(train), scaler.transform(test), scaler

"""Endowment portfolio generation and yearly roll-forward."""
from __future__ import annotations

from dataclasses import dataclass, astuple, fields
from pathlib import Path

import numpy as np
import pandas as pd

from .actuarial import (DEFAULT_ECONOMICS, DEFAULT_MORTALITY, PREMIUM_FREQUENCIES,
                        EconomicAssumptions, MakehamParams, annual_premium)
from .rng import CounterRNG

FREQUENCY_PROBS = (0.15, 0.25, 0.60)

AGE_GAMMA = (5.5, 6.8)
FACE_GAMMA = (4.0, 2000.0)
FACE_OFFSET = 5000.0
DURATION_GAMMA = (5.0, 1.5)
DURATION_OFFSET = 5.0


@dataclass(frozen=True)
class Contract:
    calendar_year: int
    age: float
    face_amount: float
    duration: float
    elapsed_duration: float
    remaining_duration: float
    premium_frequency: str
    annual_premium: float
    policy_id: int


CONTRACT_COLUMNS = [f.name for f in fields(Contract)]


@dataclass
class Portfolio:
    """Active contracts at one calendar year, one row per policy."""

    contracts: pd.DataFrame
    calendar_year: int

    def __len__(self):
        return len(self.contracts)

    def __iter__(self):
        for row in self.contracts.itertuples(index=False):
            yield Contract(*row)

    def to_csv(self, path):
        self.contracts.to_csv(Path(path), index=False, columns=CONTRACT_COLUMNS)

    @classmethod
    def from_contracts(cls, contracts):
        frame = pd.DataFrame([astuple(c) for c in contracts], columns=CONTRACT_COLUMNS)
        years = frame["calendar_year"].unique()
        if len(years) > 1:
            raise ValueError("contracts span several calendar years")
        return cls(frame, int(years[0]) if len(years) else 0)


def sample_contracts(rng: CounterRNG, policy_ids, calendar_year: int,
                     is_new_business: bool = False,
                     econ: EconomicAssumptions = DEFAULT_ECONOMICS,
                     mort: MakehamParams = DEFAULT_MORTALITY) -> pd.DataFrame:
    """Draw one contract per policy id; each draw depends only on its id."""
    ids = np.asarray(policy_ids, dtype=np.int64)
    stream = rng.child("contract")
    age = stream.child("age").gamma(ids, *AGE_GAMMA)
    face = FACE_OFFSET + stream.child("face").gamma(ids, *FACE_GAMMA)
    duration = DURATION_OFFSET + stream.child("duration").gamma(ids, *DURATION_GAMMA)
    if is_new_business:
        elapsed = np.zeros(ids.size)
    else:
        elapsed = np.minimum(duration * stream.child("elapsed").uniform(ids), age)
    freq = np.asarray(PREMIUM_FREQUENCIES)[stream.child("frequency").choice(ids, FREQUENCY_PROBS)]
    premium = annual_premium(age - elapsed, face, duration, econ, mort,
                             frequency=freq, late_issue="single")
    return pd.DataFrame({
        "calendar_year": np.full(ids.size, calendar_year, dtype=np.int64),
        "age": age,
        "face_amount": face,
        "duration": duration,
        "elapsed_duration": elapsed,
        "remaining_duration": duration - elapsed,
        "premium_frequency": freq,
        "annual_premium": np.atleast_1d(premium),
        "policy_id": ids,
    })


def sample_contract(rng: CounterRNG, calendar_year: int, is_new_business: bool = False,
                    policy_id: int = 0, **assumptions) -> Contract:
    frame = sample_contracts(rng, [policy_id], calendar_year, is_new_business, **assumptions)
    return next(iter(Portfolio(frame, calendar_year)))


def generate_initial_portfolio(n0: int, rng: CounterRNG, **assumptions) -> Portfolio:
    if n0 < 1:
        raise ValueError("n0 must be at least 1")
    frame = sample_contracts(rng, np.arange(n0), 0, False, **assumptions)
    return Portfolio(frame, 0)


def new_business_count(active: int, rate: float) -> int:
    """``round(rate * active)`` with halves rounded up."""
    return int(np.floor(rate * active + 0.5))


def advance_year(portfolio: Portfolio, rng: CounterRNG, new_business_rate: float = 0.06,
                 terminated=None, next_policy_id: int | None = None, **assumptions) -> Portfolio:
    """Age survivors by one year and append new business.

    Contracts maturing within the year (remaining duration at most one year)
    always leave.  ``terminated`` lists policy ids leaving the portfolio this year.  New
    business ids continue from ``next_policy_id`` (default: one past the
    largest id present).
    """
    if new_business_rate < 0:
        raise ValueError("new business rate must be nonnegative")
    frame = portfolio.contracts
    if terminated is not None and len(terminated):
        frame = frame[~frame["policy_id"].isin(np.asarray(terminated))]
    frame = frame[frame["remaining_duration"] > 1.0].copy()
    year = portfolio.calendar_year + 1
    frame["calendar_year"] = year
    frame["age"] += 1.0
    frame["elapsed_duration"] += 1.0
    frame["remaining_duration"] -= 1.0

    n_new = new_business_count(len(frame), new_business_rate)
    if next_policy_id is None:
        next_policy_id = int(portfolio.contracts["policy_id"].max()) + 1 if len(portfolio) else 0
    if n_new:
        ids = np.arange(next_policy_id, next_policy_id + n_new)
        fresh = sample_contracts(rng, ids, year, True, **assumptions)
        frame = pd.concat([frame, fresh], ignore_index=True)
    return Portfolio(frame.reset_index(drop=True), year)

"""Makeham survival and equivalence-principle premiums for endowments."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PREMIUM_FREQUENCIES = ("upfront", "annual", "monthly")


@dataclass(frozen=True)
class MakehamParams:
    """Makeham law: hazard ``A + B * c**age``."""

    baseline_hazard: float = 0.00022
    age_factor: float = 2.7e-7
    age_base: float = 1.124

    def __post_init__(self):
        if self.baseline_hazard < 0 or self.age_factor < 0:
            raise ValueError("Makeham A and B must be nonnegative")
        if not self.age_base > 1:
            raise ValueError("Makeham c must exceed 1")

    @property
    def has_hazard(self) -> bool:
        return self.baseline_hazard + self.age_factor > 0


@dataclass(frozen=True)
class EconomicAssumptions:
    interest_rate: float = 0.02
    expense_acquisition: float = 0.025
    expense_admin: float = 0.03
    expense_amort: float = 0.001
    retirement_age: int = 67

    def __post_init__(self):
        if not self.interest_rate > -1:
            raise ValueError("interest rate must exceed -1")
        for name in ("expense_acquisition", "expense_admin", "expense_amort"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.retirement_age <= 0:
            raise ValueError("retirement age must be positive")


DEFAULT_MORTALITY = MakehamParams()
DEFAULT_ECONOMICS = EconomicAssumptions()


def survival_prob(age, t, params: MakehamParams = DEFAULT_MORTALITY):
    """Probability that a life aged ``age`` survives ``t`` more years."""
    age = np.asarray(age, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(age < 0) or np.any(t < 0):
        raise ValueError("age and horizon must be nonnegative")
    A, B, c = params.baseline_hazard, params.age_factor, params.age_base
    with np.errstate(over="ignore"):
        gompertz = B / np.log(c) * np.power(c, age) * np.expm1(t * np.log(c))
        out = np.exp(-A * t - gompertz)
    return out[()] if out.ndim == 0 else out


def invert_survival(age, u, params: MakehamParams = DEFAULT_MORTALITY,
                    tol: float = 1e-10, max_iter: int = 200, upper: float = 200.0):
    """Time ``t`` with ``survival_prob(age, t) == u``, by bisection on [0, upper].

    Vectorised over ``age`` and ``u``.  Raises if ``u`` lies outside (0, 1],
    if the bracket does not contain the root, or if bisection fails to reach
    ``tol`` within ``max_iter`` halvings.
    """
    if not params.has_hazard:
        raise ValueError("inversion needs a positive hazard (A + B > 0)")
    age, u = np.broadcast_arrays(np.asarray(age, dtype=float), np.asarray(u, dtype=float))
    if np.any(u <= 0) or np.any(u > 1):
        raise ValueError("u must lie in (0, 1]")
    if np.any(survival_prob(age, upper, params) > u):
        raise ValueError(f"root not bracketed within {upper} years")

    lo = np.zeros(age.shape)
    hi = np.full(age.shape, upper)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        above = survival_prob(age, mid, params) > u
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
        if np.all(hi - lo <= tol):
            break
    else:
        raise RuntimeError(
            f"bisection did not converge in {max_iter} iterations "
            f"(max width {np.max(hi - lo):.3e})")
    t = np.where(u == 1.0, 0.0, 0.5 * (lo + hi))
    return t[()] if t.ndim == 0 else t


def _premium_components(age_at_issue, duration, econ, mort, late_issue="raise"):
    """Per-unit-face APVs: benefits, contract annuity, premium annuity, payment term."""
    x = np.atleast_1d(np.asarray(age_at_issue, dtype=float))
    n = np.atleast_1d(np.asarray(duration, dtype=float))
    x, n = np.broadcast_arrays(x, n)
    if np.any(n < 1):
        raise ValueError("duration must be at least one year")
    if np.any(x < 0):
        raise ValueError("age at issue must be nonnegative")
    pay_term = np.minimum(n, econ.retirement_age - x)
    if late_issue == "single":
        # issued at or past retirement age: one premium at issue
        pay_term = np.where(pay_term <= 0, 1.0, pay_term)
    elif np.any(pay_term <= 0):
        raise ValueError("no admissible premium period before retirement age")

    v = 1.0 / (1.0 + econ.interest_rate)
    K = int(np.ceil(n.max()))
    k = np.arange(K, dtype=float)[None, :]
    n_col = n[:, None]
    in_term = k < n_col
    start = np.where(in_term, k, 0.0)
    stop = np.where(in_term, np.minimum(k + 1.0, n_col), 0.0)
    s_start = survival_prob(x[:, None], start, mort)
    s_stop = survival_prob(x[:, None], stop, mort)

    # death benefit at the end of the policy year of death (truncated at maturity)
    term = np.sum(np.where(in_term, v**stop * (s_start - s_stop), 0.0), axis=1)
    pure_endowment = v**n * survival_prob(x, n, mort)
    contract_annuity = np.sum(np.where(in_term, v**start * s_start, 0.0), axis=1)
    premium_annuity = np.sum(np.where(k < pay_term[:, None], v**start * s_start, 0.0), axis=1)
    return term + pure_endowment, contract_annuity, premium_annuity, pay_term


def annual_premium(age_at_issue, face_amount, duration,
                   econ: EconomicAssumptions = DEFAULT_ECONOMICS,
                   mort: MakehamParams = DEFAULT_MORTALITY,
                   frequency="annual", late_issue="raise"):
    """Level annual premium of an endowment under the equivalence principle.

    Premiums are due at the start of each policy year while the contract is
    in force and the policyholder is below retirement age.  Expenses: an
    acquisition charge ``alpha * F`` at issue, an admin charge ``beta`` on each
    premium, and ``gamma * F`` at the start of every contract year.

    For ``frequency == "upfront"`` the single premium is annualised linearly
    over the number of premium payments; other frequencies share the annual level premium.
    Vectorised over all arguments.

    ``late_issue="single"`` prices contracts issued at or after retirement
    age with a single premium at issue instead of raising.
    """
    face = np.asarray(face_amount, dtype=float)
    if np.any(face <= 0):
        raise ValueError("face amount must be positive")
    benefit, contract_ann, premium_ann, pay_term = _premium_components(
        age_at_issue, duration, econ, mort, late_issue)
    cost = benefit + econ.expense_acquisition + econ.expense_amort * contract_ann
    level = cost / ((1.0 - econ.expense_admin) * premium_ann)
    single = cost / (1.0 - econ.expense_admin)
    upfront = np.asarray(frequency) == "upfront"
    n_payments = np.ceil(pay_term)
    out = face * np.where(upfront, single / n_payments, level)
    return _squeeze(out, age_at_issue, face_amount, duration)


def single_premium(age_at_issue, face_amount, duration,
                   econ: EconomicAssumptions = DEFAULT_ECONOMICS,
                   mort: MakehamParams = DEFAULT_MORTALITY):
    """Gross single premium (the up-front payment before annualisation)."""
    benefit, contract_ann, _, _ = _premium_components(age_at_issue, duration, econ, mort)
    cost = benefit + econ.expense_acquisition + econ.expense_amort * contract_ann
    out = np.asarray(face_amount, dtype=float) * cost / (1.0 - econ.expense_admin)
    return _squeeze(out, age_at_issue, face_amount, duration)


def _squeeze(out, *inputs):
    if all(np.ndim(a) == 0 for a in inputs):
        return float(np.ravel(out)[0])
    return out

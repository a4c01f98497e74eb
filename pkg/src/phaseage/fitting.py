"""Least-squares Coxian fit to an age-class mortality table.

The objective is the survival-weighted squared error

    F = sum_x (d_hat_x - d_bar(x))^2 S_hat_x

between observed mortality rates ``d_hat_x`` and the model's conditional
probability of dying within ``[x, x+1)``.  The last age class is open but
is compared against ``d_bar`` at its start like every other class.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit

from . import matrix_core as mc
from .errors import InvalidModel
from .ph_model import CoxianParameters, coxian

logger = logging.getLogger(__name__)

#: keeps logit finite for continuation probabilities of exactly 0 or 1
PROB_CLAMP = 1e-15
#: exit rates outside this range are treated as infeasible by the optimiser
RATE_BOUNDS = (1e-4, 1e3)


@dataclass(frozen=True)
class MortalityTable:
    ages: tuple
    rates: tuple

    def __post_init__(self):
        ages = tuple(int(a) for a in self.ages)
        rates = tuple(float(r) for r in self.rates)
        problems = []
        if not ages:
            problems.append(("empty", "mortality table has no rows"))
        if len(ages) != len(rates):
            problems.append(("dimension", "ages and rates differ in length"))
        if ages and ages != tuple(range(ages[0], ages[0] + len(ages))):
            problems.append(("ages", "age classes must be consecutive unit intervals"))
        if ages and ages[0] != 0:
            problems.append(("ages", "first age class must start at 0"))
        bad = [a for a, r in zip(ages, rates) if not (0.0 < r <= 1.0)]
        if bad:
            problems.append(("rate", f"rates must lie in (0, 1] (classes {bad})"))
        if problems:
            raise InvalidModel(problems)
        object.__setattr__(self, "ages", ages)
        object.__setattr__(self, "rates", rates)

    @property
    def survivals(self):
        """``S_hat_x``: product of ``1 - d_hat_y`` over earlier classes."""
        d = np.asarray(self.rates)
        return np.concatenate(([1.0], np.cumprod(1.0 - d)[:-1]))

    def to_csv(self):
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\r\n")
        w.writerow(["age_class_start", "rate"])
        for a, r in zip(self.ages, self.rates):
            w.writerow([a, f"{r:.17g}"])
        return out.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [c.strip() for c in rows[0]] != ["age_class_start", "rate"]:
            raise InvalidModel([("format", "expected header 'age_class_start,rate'")])
        ages, rates = [], []
        for n, row in enumerate(rows[1:], start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise InvalidModel([("format", f"line {n}: expected 2 columns, got {len(row)}")])
            try:
                ages.append(int(row[0]))
                rates.append(float(row[1]))
            except ValueError as exc:
                raise InvalidModel([("format", f"line {n}: {exc}")]) from exc
        return cls(ages, rates)

    @classmethod
    def load(cls, path):
        return cls.from_csv(Path(path).read_text())


def black_robin_table():
    """Female age-specific mortality rates, age classes 0..12 (last one open)."""
    text = resources.files("phaseage.data").joinpath("black_robin_mortality.csv").read_text()
    return MortalityTable.from_csv(text)


def black_robin_parameters():
    """The published 13-phase Coxian parameters for the same table."""
    import json

    doc = json.loads(resources.files("phaseage.data").joinpath("black_robin_coxian.json").read_text())
    return CoxianParameters(doc["lambdas"], doc["continue_probs"])


def mortality_curve(ph, n):
    """``d_bar(x)`` for ``x = 0..n-1``, propagating ``alpha e^{Qx}`` one year at a time."""
    E = mc.expm(ph.Q, 1.0)
    one_step_death = 1.0 - E.sum(axis=1)
    row = ph.alpha.copy()
    out = np.empty(n)
    for x in range(n):
        surv = row.sum()
        if not surv > 1e-300:
            raise FloatingPointError(f"survival underflow at age {x}")
        out[x] = (row @ one_step_death) / surv
        row = row @ E
        # rescaling keeps the ratio exact and avoids underflow
        row = row / surv
    return out


def model_mortality(ph, x):
    """``P[x < L <= x+1 | L > x]`` for integer age ``x``."""
    if int(x) != x or x < 0:
        raise ValueError(f"x must be a non-negative integer, got {x}")
    row = ph.alpha @ mc.expm(ph.Q, float(x))
    surv = row.sum()
    if not surv > 1e-300:
        raise FloatingPointError(f"survival underflow at age {x}")
    return float(row @ (1.0 - mc.expm(ph.Q, 1.0).sum(axis=1)) / surv)


def objective(params, table):
    """Survival-weighted squared error between table and model mortality."""
    ph = coxian(params)
    d_hat = np.asarray(table.rates)
    d_bar = mortality_curve(ph, len(d_hat))
    return float(np.sum((d_hat - d_bar) ** 2 * table.survivals))


def objective_via_cdf(params, table):
    """Same objective with ``d_bar`` from differences of the lifetime cdf."""
    from .ph_model import lifetime_cdf

    ph = coxian(params)
    total = 0.0
    for x, d, S in zip(table.ages, table.rates, table.survivals):
        Fx, Fx1 = lifetime_cdf(ph, x), lifetime_cdf(ph, x + 1)
        total += (d - (Fx1 - Fx) / (1.0 - Fx)) ** 2 * S
    return total


def to_unconstrained(params):
    lam = np.log(np.asarray(params.lambdas))
    s = np.clip(np.asarray(params.continue_probs), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return np.concatenate([lam, logit(s)])


def from_unconstrained(z, m):
    z = np.asarray(z, dtype=float)
    return CoxianParameters(np.exp(z[:m]), expit(z[m:]))


def _fast_objective(m, d_hat, weights):
    idx = np.arange(m - 1)
    lo, hi = np.log(RATE_BOUNDS[0]), np.log(RATE_BOUNDS[1])

    def f(z):
        if np.any(z[:m] < lo) or np.any(z[:m] > hi):
            return np.inf
        lam = np.exp(z[:m])
        s = expit(z[m:])
        Q = np.diag(-lam)
        Q[idx, idx + 1] = lam[:-1] * s
        try:
            E = mc.expm(Q, 1.0)
        except FloatingPointError:
            return np.inf
        death = 1.0 - E.sum(axis=1)
        row = np.zeros(m)
        row[0] = 1.0
        total = 0.0
        for x in range(len(d_hat)):
            surv = row.sum()
            if not surv > 1e-300:
                return np.inf
            total += (d_hat[x] - (row @ death) / surv) ** 2 * weights[x]
            row = (row @ E) / surv
        return total

    return f


@dataclass(frozen=True)
class FitResult:
    params: CoxianParameters
    objective_value: float
    iterations: int
    converged: bool
    evaluations: int = 0
    start_values: tuple = ()

    def to_dict(self):
        return {
            "params": self.params.to_dict(),
            "objective_value": self.objective_value,
            "iterations": self.iterations,
            "converged": self.converged,
            "evaluations": self.evaluations,
        }


def default_start(table, m):
    """Constant hazard matching the mean rate, high continuation probabilities."""
    d = float(np.mean(table.rates))
    lam = -np.log1p(-min(d, 1 - 1e-9)) * np.ones(m)
    return CoxianParameters(lam, [0.9] * (m - 1))


def fit_coxian(table, m, starts=20, seed=0, initial=(), max_evals=100_000,
               xatol=1e-10, restarts=3):
    """Multi-start Nelder-Mead fit of an ``m``-phase Coxian.

    Rates and probabilities are optimised as ``log lambda`` and
    ``logit s`` so every iterate is a valid model; rates outside
    :data:`RATE_BOUNDS` count as infeasible.  ``initial`` adds
    user-supplied starting points in front of the default and jittered
    ones; ``starts`` is the total number of starts.  Each start is
    re-launched up to ``restarts`` times from its own optimum while that
    keeps improving.  Returns the best result over all starts.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    d_hat = np.asarray(table.rates)
    f = _fast_objective(m, d_hat, table.survivals)
    rng = np.random.default_rng(seed)

    points = [to_unconstrained(p) for p in initial]
    base = to_unconstrained(default_start(table, m))
    if len(points) < starts:
        points.append(base)
    while len(points) < starts:
        jitter = np.concatenate([rng.normal(0.0, 0.5, m), rng.normal(1.0, 1.5, m - 1)])
        points.append(np.concatenate([base[:m], np.zeros(m - 1)]) + jitter)

    best = None
    start_values = []
    for z0 in points:
        start_values.append(float(f(z0)))
        z, fz = np.asarray(z0, dtype=float), f(z0)
        iters = evals = 0
        converged = False
        for _ in range(restarts + 1):
            res = minimize(f, z, method="Nelder-Mead", options={
                "xatol": xatol, "fatol": np.inf, "maxfev": max_evals,
                "maxiter": max_evals, "adaptive": m > 2,
            })
            iters += int(res.nit)
            evals += int(res.nfev)
            converged = bool(res.success)
            improved = res.fun < fz
            if res.fun <= fz:
                z, fz = res.x, float(res.fun)
            if not improved or evals >= max_evals:
                break
        logger.debug("start %.3e -> %.6e (%d evaluations)", start_values[-1], fz, evals)
        if best is None or fz < best[1]:
            best = (z, fz, iters, converged, evals)

    z, fz, iters, converged, evals = best
    params = from_unconstrained(z, m)
    return FitResult(params, objective(params, table), iters, converged, evals, tuple(start_values))

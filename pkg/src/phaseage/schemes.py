"""Conditional laws of age, phase-entry time and sojourn at one observation.

Four observation mechanisms are supported:

* :class:`PoissonBirth` - births form a stationary Poisson stream and one
  living individual is picked at time 0;
* :class:`PoissonObs` - the individual is observed at the first epoch of a
  Poisson process of rate ``gamma`` started at its birth;
* :class:`UniformObs` - one observation at a uniform time on ``[0, t]``;
* :class:`RareLimit` - the common ``gamma -> 0`` / ``t -> inf`` limit.

Given the observed phase ``j`` the age ``A`` splits as ``A = Y + Z`` where
``Y`` is the last entry time into ``j`` and ``Z`` the elapsed sojourn.
Every law is returned as a :class:`MixedDistribution`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from . import matrix_core as mc
from .errors import ConditioningError, UnsupportedScheme
from .ph_model import check_phase

#: observation probabilities below this are treated as zero
ZERO_PROBABILITY = 1e-14


@dataclass(frozen=True)
class PoissonBirth:
    name = "birth"


@dataclass(frozen=True)
class PoissonObs:
    gamma: float
    name = "poisson"

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError(f"gamma must be positive, got {self.gamma}")


@dataclass(frozen=True)
class UniformObs:
    horizon: float
    name = "uniform"

    def __post_init__(self):
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError(f"horizon must be positive, got {self.horizon}")


@dataclass(frozen=True)
class RareLimit:
    name = "rare"


@dataclass(frozen=True)
class MixedDistribution:
    """Atom at zero plus an absolutely continuous part on ``(0, inf)``.

    ``cdf_fn`` and ``density_fn`` take a scalar ``s > 0``; :meth:`cdf` and
    :meth:`density` wrap them so they also accept arrays and handle
    ``s <= 0`` and ``s`` beyond ``support_bound``.  ``decay`` is an
    exponential rate bounding the tail, used to truncate integrals;
    ``jumps`` lists points where the density is discontinuous.
    """

    atom_at_zero: float
    cdf_fn: Callable[[float], float]
    density_fn: Callable[[float], float]
    support_bound: Optional[float] = None
    decay: float = 1.0
    jumps: tuple = field(default=())

    def _eval(self, fn, s, at_zero, beyond):
        s_arr = np.asarray(s, dtype=float)
        out = np.empty(s_arr.shape)
        flat_s = s_arr.reshape(-1)
        flat = out.reshape(-1)
        for i, x in enumerate(flat_s):
            if x < 0:
                flat[i] = 0.0
            elif x == 0:
                flat[i] = at_zero
            elif self.support_bound is not None and x > self.support_bound:
                flat[i] = beyond
            else:
                flat[i] = fn(float(x))
        return float(out) if s_arr.ndim == 0 else out

    def cdf(self, s):
        if self.support_bound is not None:
            fn = lambda x: 1.0 if x == self.support_bound else min(max(self.cdf_fn(x), 0.0), 1.0)
        else:
            fn = lambda x: min(max(self.cdf_fn(x), 0.0), 1.0)
        return self._eval(fn, s, self.atom_at_zero, 1.0)

    def density(self, s):
        fn = lambda x: max(self.density_fn(x), 0.0)
        return self._eval(fn, s, fn(0.0), 0.0)

    def survival(self, s):
        return 1.0 - self.cdf(s)

    def tail_point(self, eps=1e-14):
        """Right end of the support, or a point where ``1 - cdf < eps``."""
        if self.support_bound is not None:
            return float(self.support_bound)
        x = np.log(1.0 / eps) / self.decay
        while 1.0 - self.cdf_fn(x) > eps:
            x *= 2.0
        return x

    def continuous_mass(self, tol=1e-11):
        """Integral of the density over its (truncated) support."""
        upper = self.tail_point()
        pts = [p for p in self.jumps if 0 < p < upper]
        return mc.quadrature(self.density_fn, 0.0, upper, tol=tol, breakpoints=pts)

    def total_mass(self, tol=1e-11):
        return self.atom_at_zero + self.continuous_mass(tol)

    def mean(self, tol=1e-10):
        upper = self.tail_point()
        pts = [p for p in self.jumps if 0 < p < upper]
        return mc.quadrature(lambda x: 1.0 - self.cdf_fn(x), 0.0, upper, tol=tol, breakpoints=pts)

    def quantile(self, p):
        if not 0.0 < p < 1.0:
            raise ValueError("p must lie in (0, 1)")
        if p <= self.atom_at_zero:
            return 0.0
        hi = self.tail_point(eps=min(1e-14, (1 - p) / 10))
        return brentq(lambda x: self.cdf(x) - p, 0.0, hi, xtol=1e-13, rtol=1e-13)


def exponential_law(rate):
    """``Exp(rate)`` as a :class:`MixedDistribution`."""
    rate = float(rate)
    return MixedDistribution(
        0.0,
        lambda z: -np.expm1(-rate * z),
        lambda z: rate * np.exp(-rate * z),
        decay=rate,
    )


def _generator(ph, scheme):
    """Matrix whose exponential drives the scheme: ``Q - gamma I`` or ``Q``."""
    if isinstance(scheme, PoissonObs):
        return ph.Q - scheme.gamma * np.eye(ph.m)
    return ph.Q


def _green(ph, scheme):
    if isinstance(scheme, PoissonObs):
        return mc.solve_neg(_generator(ph, scheme), np.eye(ph.m))
    return ph.green


def _check_scheme(scheme):
    if not isinstance(scheme, (PoissonBirth, PoissonObs, UniformObs, RareLimit)):
        raise TypeError(f"unknown observation scheme {scheme!r}")


def phase_observation_probability(ph, scheme, j):
    """Probability that the observation finds the individual alive in phase ``j``.

    For :class:`PoissonBirth` and :class:`RareLimit` this is the long-run
    fraction of lifetime spent in ``j``.
    """
    _check_scheme(scheme)
    j = check_phase(ph, j)
    if isinstance(scheme, PoissonObs):
        G = _green(ph, scheme)
        return float(scheme.gamma * (ph.alpha @ G)[j - 1])
    if isinstance(scheme, UniformObs):
        return float(_uniform_weight(ph, scheme.horizon, j) / scheme.horizon)
    return float(ph.occupation[j - 1] / ph.occupation.sum())


def death_observation_probability(ph, scheme):
    """Probability that the (first) observation finds the individual dead."""
    _check_scheme(scheme)
    if isinstance(scheme, PoissonObs):
        G = _green(ph, scheme)
        return float(ph.alpha @ G @ ph.q0)
    if isinstance(scheme, UniformObs):
        alive = sum(phase_observation_probability(ph, scheme, j) for j in range(1, ph.m + 1))
        return float(1.0 - alive)
    return 0.0


def _uniform_weight(ph, t, j):
    # alpha (I - e^{Qt}) (-Q)^{-1} e_j
    E = mc.expm(ph.Q, t)
    g = ph.green[:, j - 1]
    return float(ph.alpha @ g - ph.alpha @ E @ g)


def _require(p, j):
    if not p >= ZERO_PROBABILITY:
        raise ConditioningError(f"phase {j} is observed with probability {p:.3e}")


def age_given_phase(ph, scheme, j):
    """Law of the age at observation given the observed phase ``j``."""
    _check_scheme(scheme)
    j = check_phase(ph, j)
    _require(phase_observation_probability(ph, scheme, j), j)
    alpha = ph.alpha

    if isinstance(scheme, UniformObs):
        t = float(scheme.horizon)
        g = ph.green[:, j - 1]
        tail_t = alpha @ mc.expm(ph.Q, t) @ g
        W = alpha @ g - tail_t

        def cdf(s):
            return 1.0 - (alpha @ mc.expm(ph.Q, s) @ g - tail_t) / W

        def density(s):
            if s > t:
                return 0.0
            return (alpha @ mc.expm(ph.Q, s))[j - 1] / W

        return MixedDistribution(0.0, cdf, density, support_bound=t,
                                 decay=mc.decay_rate(ph.Q), jumps=(t,))

    # Poisson birth, Poisson observation and the rare limit share one form
    # with M = Q - gamma I (gamma = 0 for the first and last).
    M = _generator(ph, scheme)
    g = _green(ph, scheme)[:, j - 1]
    D = alpha @ g

    def cdf(s):
        return 1.0 - (alpha @ mc.expm(M, s) @ g) / D

    def density(s):
        return (alpha @ mc.expm(M, s))[j - 1] / D

    return MixedDistribution(0.0, cdf, density, decay=mc.decay_rate(M))


def entry_time_given_phase(ph, scheme, j):
    """Law of ``Y_j``, the last time phase ``j`` was entered before observation.

    Has an atom at zero when the individual may still be in its initial phase.
    """
    _check_scheme(scheme)
    if isinstance(scheme, PoissonBirth):
        raise UnsupportedScheme("entry time is not defined under the Poisson birth scheme")
    j = check_phase(ph, j)
    _require(phase_observation_probability(ph, scheme, j), j)
    alpha = ph.alpha
    lam = ph.rate(j)
    # (Q + lambda_j I) e_j: inflow rates into j from the other phases
    inflow = ph.Q[:, j - 1].copy()
    inflow[j - 1] += lam

    if isinstance(scheme, UniformObs):
        t = float(scheme.horizon)
        g = ph.green[:, j - 1]
        Et = mc.expm(ph.Q, t)
        W = alpha @ g - alpha @ Et @ g
        atom = alpha[j - 1] * -np.expm1(-lam * t) / (lam * W)
        tail_t = alpha @ Et @ g

        def cdf(y):
            row = alpha @ mc.expm(ph.Q, y)
            num = lam * (row @ g - tail_t) + row[j - 1] * np.expm1(-lam * (t - y))
            return 1.0 - num / (lam * W)

        def density(y):
            if y > t:
                return 0.0
            row = alpha @ mc.expm(ph.Q, y)
            return (row @ inflow) * -np.expm1(-lam * (t - y)) / (lam * W)

        return MixedDistribution(atom, cdf, density, support_bound=t,
                                 decay=mc.decay_rate(ph.Q), jumps=(t,))

    gamma = scheme.gamma if isinstance(scheme, PoissonObs) else 0.0
    M = _generator(ph, scheme)
    G = _green(ph, scheme)
    D = (alpha @ G)[j - 1]
    scale = (lam + gamma) * D
    atom = alpha[j - 1] / scale
    Ginflow = G @ inflow

    def cdf(y):
        return 1.0 - (alpha @ mc.expm(M, y) @ Ginflow) / scale

    def density(y):
        return (alpha @ mc.expm(M, y) @ inflow) / scale

    return MixedDistribution(atom, cdf, density, decay=mc.decay_rate(M))


def sojourn_given_phase(ph, scheme, j):
    """Law of ``Z_j``, the time already spent in phase ``j`` at observation."""
    _check_scheme(scheme)
    if isinstance(scheme, PoissonBirth):
        raise UnsupportedScheme("sojourn time is not defined under the Poisson birth scheme")
    j = check_phase(ph, j)
    _require(phase_observation_probability(ph, scheme, j), j)
    lam = ph.rate(j)
    if isinstance(scheme, PoissonObs):
        return exponential_law(lam + scheme.gamma)
    if isinstance(scheme, RareLimit):
        return exponential_law(lam)

    alpha = ph.alpha
    t = float(scheme.horizon)
    g = ph.green[:, j - 1]
    W = alpha @ g - alpha @ mc.expm(ph.Q, t) @ g
    base = alpha @ g
    # (Q + lambda_j I)(-Q)^{-1} e_j = lambda_j (-Q)^{-1} e_j - e_j
    shifted = lam * g
    shifted[j - 1] -= 1.0

    def cdf(z):
        rest = base - alpha @ mc.expm(ph.Q, t - z) @ g
        return 1.0 - rest * np.exp(-lam * z) / W

    def density(z):
        if z > t:
            return 0.0
        row = alpha @ mc.expm(ph.Q, t - z)
        return np.exp(-lam * z) * (lam * base - row @ shifted) / W

    return MixedDistribution(0.0, cdf, density, support_bound=t,
                             decay=lam, jumps=(t,))


def scheme_limit_check(ph, j, grid, gamma=1e-6, horizon_factor=1e4):
    """Sup-distances on ``grid`` between age laws that must agree in the rare limit.

    Returns a dict with ``poisson_vs_rare`` (small ``gamma``),
    ``uniform_vs_rare`` (horizon ``horizon_factor`` times the mean lifetime)
    and ``rare_vs_birth``.
    """
    grid = np.asarray(grid, dtype=float)
    rare = age_given_phase(ph, RareLimit(), j).cdf(grid)
    birth = age_given_phase(ph, PoissonBirth(), j).cdf(grid)
    poisson = age_given_phase(ph, PoissonObs(gamma), j).cdf(grid)
    horizon = horizon_factor * float(ph.occupation.sum())
    uniform = age_given_phase(ph, UniformObs(horizon), j).cdf(grid)
    return {
        "poisson_vs_rare": float(np.max(np.abs(poisson - rare))),
        "uniform_vs_rare": float(np.max(np.abs(uniform - rare))),
        "rare_vs_birth": float(np.max(np.abs(rare - birth))),
    }

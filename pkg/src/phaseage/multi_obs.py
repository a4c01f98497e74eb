"""Age and lifetime given a sequence of Poisson phase observations.

An individual born with initial law ``alpha`` is observed at the epochs of
a Poisson process of rate ``gamma``.  Given that the first ``k``
observations found it alive in phases ``j_1..j_k``, the age at the k-th
observation is a sum of ``k`` conditionally independent first-passage
times.  Its cdf is ``N_k(s) / D_k`` with

    N_k(s) = alpha u_k - alpha e^{Ts} u_k - v_k e^{A_k s} w_k,
    D_k    = alpha u_k,

``T = Q - gamma I`` and ``A_k`` the block upper-bidiagonal matrix built by
:func:`build_Ak`.  Factors of ``gamma`` cancel in the ratio and are left
out of ``N_k`` and ``D_k``; :attr:`MultiObsResult.sequence_probability`
puts them back.

If the (k+1)-st observation finds the individual dead, its lifetime is the
age at the k-th observation plus a residual lifetime from ``j_k``
conditioned to end before the next observation epoch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matrix_core as mc
from .errors import ConditioningError
from .ph_model import PhaseType, check_phase
from .schemes import ZERO_PROBABILITY, MixedDistribution

#: default cap on the number of observations (cost grows like (k m)^3)
MAX_OBSERVATIONS = 50


@dataclass(frozen=True)
class PhaseSequence:
    phases: tuple
    terminal_death: bool = False

    def __post_init__(self):
        phases = tuple(int(j) for j in self.phases)
        if len(phases) < 1:
            raise ValueError("need at least one observed phase")
        if any(j < 1 for j in phases):
            raise ValueError(f"observed phases must be >= 1, got {phases}")
        object.__setattr__(self, "phases", phases)

    @property
    def k(self):
        return len(self.phases)

    def validate_for(self, ph, max_k=MAX_OBSERVATIONS):
        for j in self.phases:
            check_phase(ph, j)
        if self.k > max_k:
            raise ValueError(f"{self.k} observations exceed the cap of {max_k}")


@dataclass(frozen=True)
class MultiObsResult:
    """Conditional law plus the probability of the conditioning event."""

    law: MixedDistribution
    sequence_probability: float
    D: float

    def cdf(self, s):
        return self.law.cdf(s)

    def density(self, s):
        return self.law.density(s)

    def quantile(self, p):
        return self.law.quantile(p)


class _Pieces:
    """Vectors and matrices shared by the closed forms for one sequence."""

    def __init__(self, ph, gamma, seq):
        if not (np.isfinite(gamma) and gamma > 0):
            raise ValueError(f"gamma must be positive, got {gamma}")
        seq.validate_for(ph)
        self.ph = ph
        self.gamma = float(gamma)
        self.seq = seq
        m = ph.m
        self.m = m
        self.T = ph.Q - self.gamma * np.eye(m)
        self.R = mc.solve_neg(self.T, np.eye(m))
        idx = [j - 1 for j in seq.phases]
        self.idx = idx
        k = seq.k
        # tail[i] = prod_{l=i}^{k-1} R[j_l, j_{l+1}] (1-based i); empty product is 1
        tail = np.ones(k + 1)
        for i in range(k - 1, 0, -1):
            tail[i] = tail[i + 1] * self.R[idx[i - 1], idx[i]]
        self.tail = tail
        self.u = self.R[:, idx[0]] * tail[1]
        self.D = float(ph.alpha @ self.u)
        if not self.D * self.gamma ** k > ZERO_PROBABILITY:
            raise ConditioningError(f"observed sequence {seq.phases} has probability zero")
        self.A = build_Ak(ph, self.gamma, seq) if k >= 2 else self.T
        w = np.zeros(k * m)
        for i in range(2, k + 1):
            w[(i - 1) * m:i * m] = self.R[:, idx[i - 1]] * tail[i]
        self.w = w
        self.v = np.zeros(k * m)
        self.v[:m] = ph.alpha

    def N(self, s):
        au = self.ph.alpha @ self.u
        val = au - self.ph.alpha @ mc.expm(self.T, s) @ self.u
        if self.seq.k >= 2:
            val -= self.v @ mc.expm(self.A, s) @ self.w
        return float(val)

    def dN(self, s):
        val = -self.ph.alpha @ mc.expm(self.T, s) @ self.T @ self.u
        if self.seq.k >= 2:
            val -= self.v @ mc.expm(self.A, s) @ self.A @ self.w
        return float(val)


def build_Ak(ph, gamma, seq):
    """The ``k m x k m`` matrix with ``T = Q - gamma I`` on the diagonal.

    Block ``(i, i+1)`` is ``e_{j_i} e_{j_i}^T``: an observation in phase
    ``j_i`` followed by a restart in the same phase.
    """
    if seq.k < 2:
        raise ValueError("A_k needs at least two observations")
    seq.validate_for(ph)
    m = ph.m
    T = ph.Q - float(gamma) * np.eye(m)
    supers = []
    for j in seq.phases[:-1]:
        E = np.zeros((m, m))
        E[j - 1, j - 1] = 1.0
        supers.append(E)
    return mc.block_upper_bidiagonal([T] * seq.k, supers)


def age_at_kth_observation(ph: PhaseType, gamma, seq: PhaseSequence) -> MultiObsResult:
    """Age at the last of ``k`` Poisson observations given the observed phases."""
    if seq.terminal_death:
        raise ValueError("use lifetime_given_death_at_next for sequences ending in death")
    P = _Pieces(ph, gamma, seq)
    D = P.D
    law = MixedDistribution(
        0.0,
        lambda s: P.N(s) / D,
        lambda s: P.dN(s) / D,
        decay=mc.decay_rate(P.T),
    )
    return MultiObsResult(law, float(gamma ** seq.k * D), D)


def recursive_cdf(ph, gamma, seq, s):
    """``N_k(s) / D_k`` built level by level from ``N_2`` and ``D_2``.

    Uses ``N_k = N_{k-1} r_k - alpha B_{1k}(s) (-T)^{-1} e_{j_k}`` and
    ``D_k = D_{k-1} r_k`` with ``r_k = [(-T)^{-1}]_{j_{k-1} j_k}``, where
    ``B_{1k}`` is a corner block of ``exp(A_k s)``.  Independent of the
    aggregated vectors used by :func:`age_at_kth_observation`.
    """
    if seq.k < 2:
        raise ValueError("the recursion starts at k = 2")
    seq.validate_for(ph)
    m = ph.m
    T = ph.Q - float(gamma) * np.eye(m)
    R = mc.solve_neg(T, np.eye(m))
    idx = [j - 1 for j in seq.phases]
    alpha = ph.alpha
    ET = mc.expm(T, s)

    def corner(level):
        sub = PhaseSequence(seq.phases[:level])
        return mc.upper_right_block(mc.expm(build_Ak(ph, gamma, sub), s), m, m)

    r = R[idx[0], idx[1]]
    first = alpha @ R[:, idx[0]]
    N = (first - alpha @ ET @ R[:, idx[0]]) * r - alpha @ corner(2) @ R[:, idx[1]]
    D = first * r
    for level in range(3, seq.k + 1):
        r = R[idx[level - 2], idx[level - 1]]
        N = N * r - alpha @ corner(level) @ R[:, idx[level - 1]]
        D = D * r
    return float(N / D)


def conditioned_absorption(ph: PhaseType, gamma) -> MixedDistribution:
    """Law of ``X ~ PH(theta, G)`` given ``X <= Y`` with ``Y ~ Exp(gamma)`` independent.

    ``P[X <= Y] = 1 - gamma theta (gamma I - G)^{-1} 1``.
    """
    gamma = float(gamma)
    if not (np.isfinite(gamma) and gamma >= 0):
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    theta, G = ph.alpha, ph.Q
    m = ph.m
    H = G - gamma * np.eye(m)
    Rg = mc.solve_neg(H, np.eye(m))  # (gamma I - G)^{-1}
    one = np.ones(m)
    p = 1.0 - gamma * theta @ Rg @ one
    if not p > ZERO_PROBABILITY:
        raise ConditioningError(f"P[X <= Y] = {p:.3e} is numerically zero")
    RgG1 = Rg @ G @ one
    exit_rates = -G @ one

    def cdf(x):
        return (1.0 - gamma * theta @ Rg @ one + theta @ mc.expm(H, x) @ RgG1) / p

    def density(x):
        return (theta @ mc.expm(H, x) @ exit_rates) / p

    return MixedDistribution(0.0, cdf, density, decay=mc.decay_rate(H))


def death_before_next(ph, gamma, j):
    """``P[X <= Y]`` for the residual lifetime from phase ``j``."""
    m = ph.m
    H = ph.Q - float(gamma) * np.eye(m)
    return float(1.0 - gamma * mc.solve_neg(H, np.ones(m))[j - 1])


class _DeathPieces:
    """Block matrices for the lifetime law given death at observation k+1.

    The residual lifetime from ``j_k`` is ``PH(e_{j_k}, Q)`` conditioned to
    end before an independent ``Exp(gamma)``; its exponential factor is
    therefore ``e^{(Q - gamma I) u} = e^{T u}``.
    """

    def __init__(self, ph, gamma, seq):
        base = _Pieces(ph, gamma, PhaseSequence(seq.phases))
        self.base = base
        m, k = base.m, seq.k
        jk = base.idx[-1]
        T = base.T
        self.G = ph.Q
        self.H = T  # G - gamma I with G = Q
        self.RH = base.R  # (gamma I - G)^{-1} = (-T)^{-1}
        self.death_prob = death_before_next(ph, gamma, jk + 1)
        if not self.death_prob > ZERO_PROBABILITY:
            raise ConditioningError(f"death before the next observation from phase {jk + 1} is impossible")
        self.C = 1.0 / (base.D * self.death_prob)
        ek = np.zeros(m)
        ek[jk] = 1.0
        self.ek = ek
        self.G1 = self.G @ np.ones(m)
        self.Bk = np.block([[T, np.outer(base.u, ek)], [np.zeros((m, m)), self.H]])
        A = base.A
        self.Ck = np.block([[A, np.outer(base.w, ek)], [np.zeros((m, k * m)), self.H]])
        self.k = k
        self.m = m

    def _terms(self, s, derivative=False):
        b, m, k = self.base, self.m, self.k
        alpha = b.ph.alpha
        EH = mc.expm(self.H, s)
        EB = mc.expm(self.Bk, s)
        EC = mc.expm(self.Ck, s)
        if derivative:
            EB = self.Bk @ EB
            EC = self.Ck @ EC
            first = b.D * (self.ek @ (self.H @ EH) @ self.RH)
        else:
            first = b.D * (self.ek @ (EH - np.eye(m)) @ self.RH)
        I12 = mc.upper_right_block(EB, m, m)
        J1k = EC[:k * m, k * m:]
        second = alpha @ I12
        third = b.v @ J1k if k >= 2 else np.zeros(m)
        return first, second, third

    def cdf(self, s):
        """Closed form with ``+`` signs and ``G 1``."""
        first, second, third = self._terms(s)
        return float(self.C * (first + second + third) @ self.G1)

    def cdf_negated(self, s):
        """The same quantity with ``-`` signs and ``(-G) 1``."""
        first, second, third = self._terms(s)
        return float(self.C * (-first - second - third) @ (-self.G1))

    def density(self, s):
        first, second, third = self._terms(s, derivative=True)
        return float(self.C * (first + second + third) @ self.G1)


def lifetime_given_death_at_next(ph: PhaseType, gamma, seq: PhaseSequence) -> MultiObsResult:
    """Lifetime law given phases ``j_1..j_k`` observed and death found at observation k+1."""
    P = _DeathPieces(ph, gamma, seq)
    law = MixedDistribution(0.0, P.cdf, P.density, decay=mc.decay_rate(P.H))
    prob = gamma ** seq.k * P.base.D * P.death_prob
    return MultiObsResult(law, float(prob), P.base.D)


def lifetime_cdf_negated_form(ph, gamma, seq, s):
    """Death-conditioned lifetime cdf evaluated through the negated rearrangement."""
    return _DeathPieces(ph, gamma, seq).cdf_negated(s)

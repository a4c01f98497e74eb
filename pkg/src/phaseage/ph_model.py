"""Phase-type lifetime model PH(alpha, Q).

Phases are numbered ``1..m`` in every public function; phase ``0`` is the
absorbing (death) state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import matrix_core as mc
from .errors import InvalidModel, SingularMatrixError

ALPHA_SUM_TOL = 1e-12
ROW_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PhaseType:
    """A validated phase-type distribution.

    Build instances with :func:`validate` or :func:`coxian`; the
    constructor itself does not check invariants.
    """

    alpha: np.ndarray
    Q: np.ndarray
    coxian_params: "CoxianParameters | None" = field(default=None, repr=False)

    @property
    def m(self):
        return self.Q.shape[0]

    @cached_property
    def q0(self):
        """Absorption rate vector ``-Q 1``."""
        return -self.Q.sum(axis=1)

    def rate(self, j):
        """Total exit rate ``lambda_j = -Q_jj`` of phase ``j`` (1-based)."""
        i = check_phase(self, j) - 1
        return float(-self.Q[i, i])

    @cached_property
    def green(self):
        """``(-Q)^{-1}``; entry ``(i, j)`` is the expected time in ``j`` starting from ``i``."""
        return mc.solve_neg(self.Q, np.eye(self.m))

    @cached_property
    def occupation(self):
        """Row vector ``alpha (-Q)^{-1}`` of expected total time spent in each phase."""
        return self.alpha @ self.green

    def __eq__(self, other):
        if not isinstance(other, PhaseType):
            return NotImplemented
        return np.array_equal(self.alpha, other.alpha) and np.array_equal(self.Q, other.Q)

    __hash__ = None

    def to_dict(self):
        return {"alpha": self.alpha.tolist(), "Q": self.Q.tolist()}


@dataclass(frozen=True)
class CoxianParameters:
    """Rates ``lambdas`` (length m) and continuation probabilities (length m-1)."""

    lambdas: tuple
    continue_probs: tuple

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(x) for x in self.lambdas))
        object.__setattr__(self, "continue_probs", tuple(float(x) for x in self.continue_probs))
        problems = []
        if len(self.lambdas) < 1:
            problems.append(("empty", "need at least one phase"))
        if len(self.continue_probs) != max(len(self.lambdas) - 1, 0):
            problems.append((
                "dimension",
                f"{len(self.lambdas)} rates need {len(self.lambdas) - 1} continuation probabilities,"
                f" got {len(self.continue_probs)}",
            ))
        bad = [i + 1 for i, lam in enumerate(self.lambdas) if not (np.isfinite(lam) and lam > 0)]
        if bad:
            problems.append(("rate", f"rates must be positive and finite (phases {bad})"))
        bad = [i + 1 for i, s in enumerate(self.continue_probs) if not 0.0 <= s <= 1.0]
        if bad:
            problems.append(("probability", f"continuation probabilities must lie in [0, 1] (phases {bad})"))
        if problems:
            raise InvalidModel(problems)

    @property
    def m(self):
        return len(self.lambdas)

    def to_dict(self):
        return {"lambdas": list(self.lambdas), "continue_probs": list(self.continue_probs)}


def check_phase(ph, j):
    if isinstance(j, bool) or int(j) != j or not 1 <= j <= ph.m:
        raise IndexError(f"phase index {j!r} outside 1..{ph.m}")
    return int(j)


def violations(alpha, Q):
    """List every violated invariant of ``(alpha, Q)`` as ``(code, message)`` pairs."""
    out = []
    alpha = np.asarray(alpha, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] < 1:
        return [("shape", f"Q must be a non-empty square matrix, got shape {Q.shape}")]
    m = Q.shape[0]
    if alpha.ndim != 1 or alpha.shape[0] != m:
        return [("shape", f"alpha must have length {m}, got shape {alpha.shape}")]
    if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(alpha))):
        return [("finite", "entries must be finite")]

    off = Q - np.diag(np.diag(Q))
    neg = np.argwhere(off < 0)
    if len(neg):
        where = ", ".join(f"({i + 1},{j + 1})" for i, j in neg)
        out.append(("negative_offdiagonal", f"off-diagonal rates must be >= 0 at {where}"))
    diag = np.diag(Q)
    if np.any(diag >= 0):
        where = [i + 1 for i in np.flatnonzero(diag >= 0)]
        out.append(("diagonal", f"diagonal entries must be < 0 (phases {where})"))
    rows = Q.sum(axis=1)
    scale = np.maximum(np.abs(diag), 1.0)
    pos = np.flatnonzero(rows > ROW_SUM_TOL * scale)
    if len(pos):
        out.append(("positive_row_sum", f"row sums must be <= 0 (phases {[i + 1 for i in pos]})"))
    try:
        G = mc.solve_neg(Q, np.eye(m))
    except SingularMatrixError as exc:
        out.append(("singular", f"Q is singular, some phase is not transient ({exc})"))
    else:
        if np.any(G < -1e-12 * np.max(np.abs(G))):
            out.append(("singular", "(-Q)^{-1} has negative entries; Q is not a sub-generator"))

    if np.any(alpha < 0):
        out.append(("alpha_negative", "alpha has negative entries"))
    total = alpha.sum()
    if abs(total - 1.0) > ALPHA_SUM_TOL:
        out.append(("alpha_sum", f"alpha sums to {total!r}, not 1"))
    return out


def validate(alpha, Q):
    """Return a :class:`PhaseType` or raise :class:`InvalidModel` listing every problem."""
    problems = violations(alpha, Q)
    if problems:
        raise InvalidModel(problems)
    alpha = np.array(alpha, dtype=float)
    Q = np.array(Q, dtype=float)
    alpha.setflags(write=False)
    Q.setflags(write=False)
    return PhaseType(alpha, Q)


def coxian(params):
    """Coxian model: start in phase 1, leave phase j at rate lambda_j, continue w.p. s_j."""
    if not isinstance(params, CoxianParameters):
        params = CoxianParameters(*params)
    m = params.m
    lam = np.array(params.lambdas)
    Q = np.diag(-lam)
    for j, s in enumerate(params.continue_probs):
        Q[j, j + 1] = lam[j] * s
    alpha = np.zeros(m)
    alpha[0] = 1.0
    ph = validate(alpha, Q)
    return PhaseType(ph.alpha, ph.Q, params)


def is_coxian(ph):
    m = ph.m
    if ph.alpha[0] != 1.0 or np.any(ph.alpha[1:] != 0):
        return False
    allowed = np.eye(m, dtype=bool) | np.eye(m, k=1, dtype=bool)
    return not np.any(ph.Q[~allowed])


def restrict_to_prefix(ph, j):
    """Coxian model truncated to phases ``1..j``.

    Conditional on phase ``j`` being observed, a Coxian path has only visited
    phases ``1..j``, so every single-observation law for phase ``j`` can be
    computed on this smaller model.
    """
    if not is_coxian(ph):
        raise InvalidModel([("not_coxian", "prefix restriction needs a Coxian model")])
    j = check_phase(ph, j)
    if j == ph.m:
        return ph
    alpha = np.zeros(j)
    alpha[0] = 1.0
    params = None
    if ph.coxian_params is not None:
        params = CoxianParameters(ph.coxian_params.lambdas[:j], ph.coxian_params.continue_probs[:j - 1])
    sub = validate(alpha, ph.Q[:j, :j])
    return PhaseType(sub.alpha, sub.Q, params)


def lifetime_cdf(ph, x):
    """``P[L <= x] = 1 - alpha e^{Qx} 1``."""
    x = _age(x)
    return float(np.clip(1.0 - survival(ph, x), 0.0, 1.0))


def survival(ph, x):
    x = _age(x)
    return float(ph.alpha @ mc.expm(ph.Q, x).sum(axis=1))


def lifetime_density(ph, x):
    """``f_L(x) = alpha e^{Qx} q0``."""
    x = _age(x)
    return float(max(ph.alpha @ mc.expm(ph.Q, x) @ ph.q0, 0.0))


def phase_probability(ph, x, j):
    """``P[phase(x) = j] = (alpha e^{Qx})_j``."""
    x = _age(x)
    j = check_phase(ph, j)
    return float(max((ph.alpha @ mc.expm(ph.Q, x))[j - 1], 0.0))


def mean_lifetime(ph):
    """``alpha (-Q)^{-1} 1``."""
    return float(ph.occupation.sum())


def tail_point(ph, tol=1e-14):
    """An age beyond which the survival function is below ``tol``."""
    return mc.truncation_point(ph.Q, ph.alpha, tol)


def _age(x):
    x = float(x)
    if not np.isfinite(x) or x < 0:
        raise ValueError(f"age must be a finite non-negative number, got {x}")
    return x


# -- model files -----------------------------------------------------------

def model_from_dict(doc):
    """Build a model from ``{"alpha", "Q"}`` or Coxian ``{"lambdas", "continue_probs"}``."""
    if not isinstance(doc, dict):
        raise InvalidModel([("format", "model document must be a JSON object")])
    if "lambdas" in doc:
        probs = doc.get("continue_probs", [])
        try:
            return coxian(CoxianParameters(doc["lambdas"], probs))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, InvalidModel):
                raise
            raise InvalidModel([("format", str(exc))]) from exc
    if "alpha" in doc and "Q" in doc:
        try:
            alpha = np.asarray(doc["alpha"], dtype=float)
            Q = np.asarray(doc["Q"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise InvalidModel([("format", f"non-numeric entries: {exc}")]) from exc
        return validate(alpha, Q)
    raise InvalidModel([("format", "expected keys alpha and Q, or lambdas and continue_probs")])


def load_model(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidModel([("format", f"{path}: invalid JSON ({exc})")]) from exc
    return model_from_dict(doc)


def save_model(ph, path):
    doc = ph.coxian_params.to_dict() if ph.coxian_params is not None else ph.to_dict()
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")

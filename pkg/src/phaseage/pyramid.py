"""Age pyramids from phase frequencies.

Mixes the rare-limit conditional age law of each phase with externally
supplied asymptotic phase frequencies:

    f_x = sum_j fp_j P[age in class x | phase j].
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import matrix_core as mc
from .errors import ConditioningError, InvalidModel
from .ph_model import check_phase
from .schemes import ZERO_PROBABILITY

FREQ_SUM_TOL = 1e-10
#: [0,1), ..., [9,10), [10, inf)
DEFAULT_CLASSES = tuple(range(11))


@dataclass(frozen=True)
class PhaseFrequencies:
    freqs: tuple

    def __post_init__(self):
        f = tuple(float(x) for x in self.freqs)
        problems = []
        if not f:
            problems.append(("empty", "no phase frequencies"))
        if any(not np.isfinite(x) or x < 0 for x in f):
            problems.append(("negative", "phase frequencies must be non-negative"))
        if abs(sum(f) - 1.0) > FREQ_SUM_TOL:
            problems.append(("sum", f"phase frequencies sum to {sum(f)!r}, not 1"))
        if problems:
            raise InvalidModel(problems)
        object.__setattr__(self, "freqs", f)

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [c.strip() for c in rows[0]] != ["phase", "frequency"]:
            raise InvalidModel([("format", "expected header 'phase,frequency'")])
        pairs = []
        for n, row in enumerate(rows[1:], start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                pairs.append((int(row[0]), float(row[1])))
            except (ValueError, IndexError) as exc:
                raise InvalidModel([("format", f"line {n}: {exc}")]) from exc
        phases = [p for p, _ in pairs]
        if sorted(phases) != list(range(1, len(pairs) + 1)):
            raise InvalidModel([("format", "phases must be 1..m, each listed once")])
        return cls([f for _, f in sorted(pairs)])

    @classmethod
    def load(cls, path):
        return cls.from_csv(Path(path).read_text())


@dataclass(frozen=True)
class AgePyramid:
    class_bounds: tuple
    freqs: tuple

    def to_csv(self):
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\r\n")
        w.writerow(["class_start", "frequency"])
        for x, f in zip(self.class_bounds, self.freqs):
            w.writerow([f"{x:.17g}", f"{f:.17g}"])
        return out.getvalue()


def _class_edges(classes):
    edges = [float(x) for x in classes]
    if not edges or edges[0] != 0.0 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("class starts must be increasing and begin at 0")
    return edges


def phase_class_probabilities(ph, j, classes=DEFAULT_CLASSES):
    """Rare-limit probabilities that a phase-``j`` individual's age falls in each class.

    The last class is open-ended.
    """
    j = check_phase(ph, j)
    edges = _class_edges(classes)
    g = ph.green[:, j - 1]
    D = ph.alpha @ g
    if not D / ph.occupation.sum() >= ZERO_PROBABILITY:
        raise ConditioningError(f"phase {j} is never occupied")
    # survival of the conditional age law at each edge: alpha e^{Qx} g / D
    surv = np.array([ph.alpha @ mc.expm(ph.Q, x) @ g for x in edges]) / D
    surv[0] = 1.0
    upper = np.append(surv[1:], 0.0)
    return surv - upper


def age_class_probability(ph, j, x, width=1.0):
    """``P[age in [x, x+width) | phase j]`` in the rare limit; ``width=None`` means ``[x, inf)``."""
    j = check_phase(ph, j)
    x = float(x)
    if x < 0:
        raise ValueError("class start must be non-negative")
    g = ph.green[:, j - 1]
    D = ph.alpha @ g
    if not D / ph.occupation.sum() >= ZERO_PROBABILITY:
        raise ConditioningError(f"phase {j} is never occupied")
    lo = ph.alpha @ mc.expm(ph.Q, x) @ g / D
    if width is None:
        return float(lo)
    hi = ph.alpha @ mc.expm(ph.Q, x + float(width)) @ g / D
    return float(lo - hi)


def compute_pyramid(ph, fp, classes=DEFAULT_CLASSES):
    """Age-class frequencies of a population with phase frequencies ``fp``."""
    if not isinstance(fp, PhaseFrequencies):
        fp = PhaseFrequencies(fp)
    if len(fp.freqs) != ph.m:
        raise ValueError(f"{len(fp.freqs)} phase frequencies for a {ph.m}-phase model")
    total = np.zeros(len(classes))
    for j, w in enumerate(fp.freqs, start=1):
        if w == 0.0:
            continue
        total += w * phase_class_probabilities(ph, j, classes)
    return AgePyramid(tuple(float(x) for x in classes), tuple(float(v) for v in total))

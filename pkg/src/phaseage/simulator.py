"""Monte Carlo oracle for the conditional laws.

Trajectories of the absorbing chain are simulated with competing
exponential clocks and observation epochs are laid over them
independently.  Conditioning is done by rejection.

Randomness is split into substreams keyed by ``(seed, stream, batch)``
where batches are fixed-size blocks of replications, so the output does
not depend on how many threads process the batches.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import InsufficientAcceptance, UnsupportedScheme
from .multi_obs import PhaseSequence
from .ph_model import check_phase, tail_point
from .schemes import PoissonBirth, PoissonObs, RareLimit, UniformObs

TARGETS = ("age", "entry_time", "sojourn", "multi_age", "multi_lifetime")
THREADS_ENV = "PHASEAGE_THREADS"
#: survival level at which the long uniform window standing in for the rare limit is cut
RARE_WINDOW_TOL = 1e-13


@dataclass(frozen=True)
class Trajectory:
    jump_times: np.ndarray
    phases: np.ndarray
    absorption_time: float

    def phase_at(self, x):
        """Phase occupied at age ``x``; 0 once absorbed."""
        if x >= self.absorption_time:
            return 0
        i = np.searchsorted(self.jump_times, x, side="right") - 1
        return int(self.phases[i])

    def entry_time_at(self, x):
        """Time the phase occupied at ``x`` was last entered."""
        if x >= self.absorption_time:
            return self.absorption_time
        i = np.searchsorted(self.jump_times, x, side="right") - 1
        return float(self.jump_times[i])


class _Jumps:
    """Exit rates and cumulative jump probabilities (column 0 = death)."""

    def __init__(self, ph):
        self.m = ph.m
        self.rates = -np.diag(ph.Q).copy()
        P = np.zeros((ph.m, ph.m + 1))
        P[:, 0] = ph.q0 / self.rates
        off = ph.Q - np.diag(np.diag(ph.Q))
        P[:, 1:] = off / self.rates[:, None]
        cum = np.cumsum(P, axis=1)
        cum[:, -1] = 1.0
        self.cum = cum
        init = np.cumsum(ph.alpha)
        init[-1] = 1.0
        self.init_cum = init

    def next_phase(self, phase, u):
        """Next phase (0 = death) for 1-based ``phase`` given uniforms ``u``."""
        table = self.cum[phase - 1]
        return (u[:, None] >= table).sum(axis=1)

    def initial(self, u):
        return (u[:, None] >= self.init_cum[None, :]).sum(axis=1) + 1


def simulate_trajectory(ph, rng):
    """One full trajectory from birth to absorption."""
    jumps = _Jumps(ph)
    phase = int(jumps.initial(np.array([rng.random()]))[0])
    t = 0.0
    times, phases = [0.0], [phase]
    while True:
        t += rng.exponential() / jumps.rates[phase - 1]
        nxt = int(jumps.next_phase(np.array([phase]), np.array([rng.random()]))[0])
        if nxt == 0:
            return Trajectory(np.array(times), np.array(phases), t)
        phase = nxt
        times.append(t)
        phases.append(phase)


def observe_poisson(traj, gamma, rng):
    """Poisson(``gamma``) observations from birth, stopping at the first that finds death."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    out = []
    t = 0.0
    while True:
        t += rng.exponential() / gamma
        phase = traj.phase_at(t)
        out.append((t, phase))
        if phase == 0:
            return out


def observe_uniform(traj, t, rng):
    """A single observation at a uniform time on ``[0, t]``."""
    if not t > 0:
        raise ValueError("t must be positive")
    x = rng.uniform(0.0, t)
    return x, traj.phase_at(x)


def run_until(jumps, start, horizon, rng):
    """Simulate paths from ``start`` phases up to per-path ``horizon`` ages.

    Returns ``(phase, entry, absorption)``: the phase at the horizon (0 if
    dead), the entry time of that phase's current sojourn, and the
    absorption time (``inf`` for paths still alive at the horizon).
    """
    n = start.shape[0]
    phase_out = np.zeros(n, dtype=np.int64)
    entry_out = np.zeros(n)
    absorb_out = np.full(n, np.inf)
    rows = np.arange(n)
    phase = start.astype(np.int64)
    entry = np.zeros(n)
    hor = horizon.astype(float)
    while rows.size:
        leave = entry + rng.standard_exponential(rows.size) / jumps.rates[phase - 1]
        stay = leave > hor
        r = rows[stay]
        phase_out[r] = phase[stay]
        entry_out[r] = entry[stay]
        move = ~stay
        rows, phase, leave, hor = rows[move], phase[move], leave[move], hor[move]
        nxt = jumps.next_phase(phase, rng.random(rows.size))
        dead = nxt == 0
        absorb_out[rows[dead]] = leave[dead]
        entry_out[rows[dead]] = leave[dead]
        alive = ~dead
        rows, phase, entry, hor = rows[alive], nxt[alive], leave[alive], hor[alive]
    return phase_out, entry_out, absorb_out


@dataclass(frozen=True)
class SimulationConfig:
    """``replications`` simulated individuals (per segment for sequence targets)."""

    replications: int
    seed: int
    scheme: object = None
    batch: int = 1 << 16
    min_accepted: int = 1000
    threads: int | None = None

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")

    def n_threads(self):
        if self.threads is not None:
            return max(1, int(self.threads))
        return max(1, int(os.environ.get(THREADS_ENV, "1")))


def _stream(seed, key, batch):
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(key, batch))
    return np.random.Generator(np.random.Philox(ss))


def _batched(config, key, work):
    """Run ``work(rng, size)`` over the replication batches and concatenate in order."""
    sizes = []
    left = config.replications
    while left > 0:
        sizes.append(min(config.batch, left))
        left -= sizes[-1]

    def one(b):
        return work(_stream(config.seed, key, b), sizes[b])

    threads = config.n_threads()
    if threads == 1 or len(sizes) == 1:
        parts = [one(b) for b in range(len(sizes))]
    else:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(one, range(len(sizes))))
    return [np.concatenate(cols) for cols in zip(*parts)]


def _single_epochs(ph, scheme, rng, size):
    if isinstance(scheme, PoissonObs):
        return rng.standard_exponential(size) / scheme.gamma
    if isinstance(scheme, UniformObs):
        return rng.uniform(0.0, scheme.horizon, size)
    if isinstance(scheme, (RareLimit, PoissonBirth)):
        # stationary-age sampling: an age uniform on a window that the
        # lifetime exceeds with negligible probability
        return rng.uniform(0.0, tail_point(ph, RARE_WINDOW_TOL), size)
    raise TypeError(f"unknown scheme {scheme!r}")


@dataclass
class EmpiricalResult:
    """Sorted accepted samples with helpers for cdf, bands and KS distances."""

    samples: np.ndarray
    trials: int
    level: float = 0.99
    extra: dict = field(default_factory=dict)

    @property
    def n(self):
        return int(self.samples.size)

    @property
    def acceptance(self):
        return self.n / self.trials

    def cdf(self, grid):
        grid = np.asarray(grid, dtype=float)
        return np.searchsorted(self.samples, grid, side="right") / self.n

    def atom_at_zero(self):
        return float(np.count_nonzero(self.samples == 0.0)) / self.n

    def mean(self):
        return float(self.samples.mean())

    def standard_error(self):
        return float(self.samples.std(ddof=1) / np.sqrt(self.n))

    def band_halfwidth(self):
        """Dvoretzky-Kiefer-Wolfowitz half-width at the configured level."""
        return float(np.sqrt(np.log(2.0 / (1.0 - self.level)) / (2.0 * self.n)))

    def band(self, grid):
        F = self.cdf(grid)
        eps = self.band_halfwidth()
        return F, np.clip(F - eps, 0.0, 1.0), np.clip(F + eps, 0.0, 1.0)

    def ks_exact(self, cdf):
        """Exact KS distance to a vectorised cdf callable."""
        return float(stats.ks_1samp(self.samples, cdf, method="asymp").statistic)

    def ks_grid(self, cdf, grid):
        """Sup of ``|F_n - F|`` over ``grid``, using both one-sided limits of ``F_n``."""
        grid = np.asarray(grid, dtype=float)
        F = np.asarray(cdf(grid), dtype=float)
        right = np.searchsorted(self.samples, grid, side="right") / self.n
        left = np.searchsorted(self.samples, grid, side="left") / self.n
        return float(max(np.max(np.abs(right - F)), np.max(np.abs(left - F))))

    def within_band(self, cdf, grid):
        F_emp, lo, hi = self.band(grid)
        F = np.asarray(cdf(np.asarray(grid, dtype=float)), dtype=float)
        return bool(np.all((F >= lo - 1e-15) & (F <= hi + 1e-15)))

    def to_csv(self, grid, handle=None):
        """CSV with columns ``grid_point, empirical_cdf, lower_band, upper_band``."""
        F, lo, hi = self.band(grid)
        out = handle if handle is not None else io.StringIO()
        w = csv.writer(out, lineterminator="\r\n")
        w.writerow(["grid_point", "empirical_cdf", "lower_band", "upper_band"])
        for row in zip(np.asarray(grid, dtype=float), F, lo, hi):
            w.writerow([f"{v:.17g}" for v in row])
        if handle is None:
            return out.getvalue()
        return None


def _single(config, ph, target, j):
    scheme = config.scheme
    if isinstance(scheme, PoissonBirth) and target != "age":
        raise UnsupportedScheme(f"{target} is not defined under the Poisson birth scheme")
    j = check_phase(ph, j)
    jumps = _Jumps(ph)

    def work(rng, size):
        epoch = _single_epochs(ph, scheme, rng, size)
        start = jumps.initial(rng.random(size))
        phase, entry, _ = run_until(jumps, start, epoch, rng)
        hit = phase == j
        if target == "age":
            vals = epoch[hit]
        elif target == "entry_time":
            vals = entry[hit]
        else:
            vals = epoch[hit] - entry[hit]
        return (vals,)

    (vals,) = _batched(config, 0, work)
    return vals


def _segment(config, ph, key, start_phase, want_phase):
    """First-epoch outcomes of paths restarted in ``start_phase`` (or drawn from alpha).

    ``want_phase = 0`` keeps paths found dead at the epoch and returns their
    absorption times; otherwise returns epochs at which ``want_phase`` is seen.
    """
    gamma = config.scheme.gamma
    jumps = _Jumps(ph)

    def work(rng, size):
        epoch = rng.standard_exponential(size) / gamma
        if start_phase is None:
            start = jumps.initial(rng.random(size))
        else:
            start = np.full(size, start_phase, dtype=np.int64)
        phase, _, absorb = run_until(jumps, start, epoch, rng)
        hit = phase == want_phase
        return ((absorb if want_phase == 0 else epoch)[hit],)

    (vals,) = _batched(config, key, work)
    return vals


def _multi(config, ph, target, seq):
    """Sequence-conditioned samples built segment by segment.

    Observation epochs are stopping times and the chain is strong Markov,
    so given the observed phases the inter-observation segments are
    independent, each distributed as a path restarted in the previously
    observed phase and conditioned on the next observation.  Each segment
    is sampled by rejection from its own substream and the ``i``-th
    accepted draws are summed across segments.
    """
    if not isinstance(config.scheme, PoissonObs):
        raise UnsupportedScheme("sequence targets need the Poisson observation scheme")
    seq.validate_for(ph)
    pools = []
    prev = None
    for i, j in enumerate(seq.phases):
        pools.append(_segment(config, ph, i + 1, prev, j))
        prev = j
    if target == "multi_lifetime":
        pools.append(_segment(config, ph, seq.k + 1, prev, 0))
    n = min(p.size for p in pools)
    total = np.zeros(n)
    for p in pools:
        total += p[:n]
    counts = [int(p.size) for p in pools]
    return total, counts


def empirical_conditional(config, ph, target, condition):
    """Empirical conditional law of ``target`` given ``condition``.

    ``condition`` is a phase index for ``age``, ``entry_time`` and
    ``sojourn``, and a :class:`PhaseSequence` for ``multi_age`` and
    ``multi_lifetime``.
    """
    if target not in TARGETS:
        raise ValueError(f"target must be one of {TARGETS}")
    extra = {}
    if target.startswith("multi"):
        if not isinstance(condition, PhaseSequence):
            condition = PhaseSequence(tuple(condition), target == "multi_lifetime")
        vals, counts = _multi(config, ph, target, condition)
        extra["segment_accepted"] = counts
    else:
        vals = _single(config, ph, target, condition)
    if vals.size < config.min_accepted:
        raise InsufficientAcceptance(vals.size, config.min_accepted)
    return EmpiricalResult(np.sort(vals), config.replications, extra=extra)


def sequence_frequency(config, ph, seq):
    """Fraction of individuals whose first ``k`` Poisson observations read ``seq``.

    Whole-path rejection: every individual is simulated from birth and
    observed ``k`` times.  Returns ``(frequency, standard_error)``.
    """
    if not isinstance(config.scheme, PoissonObs):
        raise UnsupportedScheme("sequence frequencies need the Poisson observation scheme")
    seq.validate_for(ph)
    gamma = config.scheme.gamma
    jumps = _Jumps(ph)
    k = seq.k

    def work(rng, size):
        start = jumps.initial(rng.random(size))
        ok = np.ones(size, dtype=bool)
        phase = start
        for i in range(k):
            # restart each interval in the phase just observed (Markov property
            # plus memoryless epochs); paths already rejected are carried along
            epoch = rng.standard_exponential(size) / gamma
            phase, _, _ = run_until(jumps, np.where(phase > 0, phase, 1), epoch, rng)
            ok &= phase == seq.phases[i]
        return (ok,)

    (ok,) = _batched(config, 0, work)
    p = ok.mean()
    return float(p), float(np.sqrt(p * (1 - p) / ok.size))

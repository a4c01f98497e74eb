"""End-to-end acceptance checks, one group per numbered criterion.

``conftest.py`` prints a PASS/FAIL line per criterion in the terminal
summary.
"""

import time

import numpy as np
import pytest
from scipy.integrate import quad_vec
from scipy.stats import gamma as gamma_dist

from phaseage import matrix_core as mc
from phaseage.cli import main
from phaseage.fitting import black_robin_parameters, black_robin_table, fit_coxian, mortality_curve, objective
from phaseage.multi_obs import (PhaseSequence, age_at_kth_observation, build_Ak, lifetime_cdf_negated_form,
                                lifetime_given_death_at_next, recursive_cdf)
from phaseage.ph_model import coxian, save_model, validate
from phaseage.pyramid import PhaseFrequencies, compute_pyramid, phase_class_probabilities
from phaseage.schemes import (PoissonBirth, PoissonObs, RareLimit, UniformObs, age_given_phase,
                              entry_time_given_phase, phase_observation_probability, scheme_limit_check,
                              sojourn_given_phase)
from phaseage.simulator import SimulationConfig, empirical_conditional

from conftest import ALPHA_1, ALPHA_2, TOY_Q, toy

SEQUENCES = [(1, 2, 3, 3, 4), (2, 3, 1, 1, 4)]


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


# 1 -------------------------------------------------------------------------

def test_criterion_1_scheme_coincidence():
    grid = np.linspace(0.0, 10.0, 101)
    with Timer() as t:
        for alpha in (ALPHA_1, ALPHA_2):
            ph = toy(alpha)
            for j in range(1, 6):
                if phase_observation_probability(ph, RareLimit(), j) <= 0:
                    continue
                d = scheme_limit_check(ph, j, grid, gamma=1e-6, horizon_factor=1e4)
                assert d["rare_vs_birth"] <= 1e-12
                assert d["poisson_vs_rare"] <= 1e-4
                assert d["uniform_vs_rare"] <= 1e-4
    assert t.elapsed < 10


# 2 -------------------------------------------------------------------------

def test_criterion_2_sojourn_law():
    ph = toy(ALPHA_1)
    rate = 1.0 + ph.rate(4)
    # 10^6 accepted sojourns; phase 4 is observed in about 1.65% of replications
    cfg = SimulationConfig(62_000_000, seed=2024, scheme=PoissonObs(1.0))
    with Timer() as t:
        res = empirical_conditional(cfg, ph, "sojourn", 4)
    assert res.n >= 1_000_000
    assert abs(res.mean() - 1 / rate) <= 3 * res.standard_error()
    assert res.ks_exact(lambda z: -np.expm1(-rate * np.asarray(z))) <= 0.005
    assert t.elapsed < 60


# 3 -------------------------------------------------------------------------

def _laws(ph, scheme):
    for j in range(1, 6):
        if phase_observation_probability(ph, scheme, j) < 1e-14:
            continue
        yield age_given_phase(ph, scheme, j)
        if not isinstance(scheme, PoissonBirth):
            yield entry_time_given_phase(ph, scheme, j)
            yield sojourn_given_phase(ph, scheme, j)


@pytest.mark.parametrize("alpha", [ALPHA_1, ALPHA_2], ids=["alpha1", "alpha2"])
@pytest.mark.parametrize("scheme", [PoissonBirth(), PoissonObs(1.0), UniformObs(2.0), RareLimit()],
                         ids=["birth", "poisson", "uniform", "rare"])
def test_criterion_3_normalization(alpha, scheme):
    ph = toy(alpha)
    count = 0
    for law in _laws(ph, scheme):
        count += 1
        assert law.atom_at_zero + law.continuous_mass(tol=1e-11) == pytest.approx(1.0, abs=1e-8)
        grid = np.linspace(0.0, law.tail_point(1e-10), 400)
        assert np.all(np.diff(law.cdf(grid)) >= 0)
        if isinstance(scheme, UniformObs):
            assert law.cdf(scheme.horizon) == 1.0
    assert count >= 5


# 4 -------------------------------------------------------------------------

def _blocks(kind, k):
    T = TOY_Q - np.eye(5)
    if kind == "sequence":
        A = build_Ak(toy(), 1.0, PhaseSequence((1, 2, 3)[:k]))
        diag = [A[i * 5:(i + 1) * 5, i * 5:(i + 1) * 5] for i in range(k)]
        sup = [A[i * 5:(i + 1) * 5, (i + 1) * 5:(i + 2) * 5] for i in range(k - 1)]
        return diag, sup
    rates = TOY_Q - np.diag(np.diag(TOY_Q))
    diag = [T - 0.5 * i * np.eye(5) for i in range(k)]
    sup = [rates + i * np.eye(5) for i in range(k - 1)]
    return diag, sup


def _nested(diag, sup, s):
    """Nested adaptive quadrature of the convolution integral defining block (1, k)."""
    opts = dict(epsabs=1e-12, epsrel=1e-12)
    if len(diag) == 2:
        f = lambda u: mc.expm(diag[0], u) @ sup[0] @ mc.expm(diag[1], s - u)
        return quad_vec(f, 0.0, s, **opts)[0]

    def outer(u1):
        head = mc.expm(diag[0], u1) @ sup[0]
        inner = lambda u2: mc.expm(diag[1], u2) @ sup[1] @ mc.expm(diag[2], s - u1 - u2)
        return head @ quad_vec(inner, 0.0, s - u1, **opts)[0]

    return quad_vec(outer, 0.0, s, **opts)[0]


@pytest.mark.parametrize("kind", ["sequence", "dense"])
@pytest.mark.parametrize("k", [2, 3])
def test_criterion_4_carbonell_identity(kind, k):
    diag, sup = _blocks(kind, k)
    for s in (0.5, 1.0, 2.0):
        block = mc.carbonell_block(diag, sup, s, k)
        assert np.max(np.abs(block - _nested(diag, sup, s))) <= 1e-8


# 5 -------------------------------------------------------------------------

@pytest.mark.parametrize("seq", SEQUENCES, ids=["seq1", "seq2"])
def test_criterion_5a_closed_form_vs_recursion(seq):
    ph = toy(ALPHA_1)
    law = age_at_kth_observation(ph, 1.0, PhaseSequence(seq))
    grid = np.linspace(0.05, 12.0, 50)
    rec = np.array([recursive_cdf(ph, 1.0, PhaseSequence(seq), s) for s in grid])
    assert np.max(np.abs(law.cdf(grid) - rec)) <= 1e-10


@pytest.mark.parametrize("seq", SEQUENCES, ids=["seq1", "seq2"])
def test_criterion_5b_monte_carlo_band(seq):
    ph = toy(ALPHA_1)
    law = age_at_kth_observation(ph, 1.0, PhaseSequence(seq))
    cfg = SimulationConfig(7_000_000, seed=55, scheme=PoissonObs(1.0))
    with Timer() as t:
        res = empirical_conditional(cfg, ph, "multi_age", PhaseSequence(seq))
    assert res.n >= 100_000
    grid = np.linspace(0.0, law.quantile(0.9999), 200)
    assert res.within_band(law.cdf, grid)
    assert t.elapsed < 300


def test_criterion_5c_fatter_tail():
    ph = toy(ALPHA_1)
    q1, q2 = (age_at_kth_observation(ph, 1.0, PhaseSequence(s)).quantile(0.9) for s in SEQUENCES)
    assert q2 > q1


# 6 -------------------------------------------------------------------------

@pytest.mark.parametrize("seq", SEQUENCES, ids=["seq1", "seq2"])
def test_criterion_6a_two_forms_agree(seq):
    ph = toy(ALPHA_1)
    s_seq = PhaseSequence(seq, True)
    life = lifetime_given_death_at_next(ph, 1.0, s_seq)
    for s in np.linspace(0.05, 12.0, 50):
        assert abs(life.cdf(s) - lifetime_cdf_negated_form(ph, 1.0, s_seq, s)) <= 1e-10


@pytest.mark.parametrize("k", [1, 2, 4])
def test_criterion_6b_single_phase_erlang(k):
    lam, gamma = 0.9, 1.7
    ph = validate([1.0], [[-lam]])
    life = lifetime_given_death_at_next(ph, gamma, PhaseSequence((1,) * k, True))
    erlang = gamma_dist(a=k + 1, scale=1.0 / (lam + gamma))
    for s in np.linspace(0.05, 8.0, 30):
        assert abs(life.cdf(s) - erlang.cdf(s)) <= 1e-10


@pytest.mark.parametrize("seq", SEQUENCES, ids=["seq1", "seq2"])
def test_criterion_6c_monte_carlo_band(seq):
    ph = toy(ALPHA_1)
    life = lifetime_given_death_at_next(ph, 1.0, PhaseSequence(seq, True))
    cfg = SimulationConfig(7_000_000, seed=66, scheme=PoissonObs(1.0))
    res = empirical_conditional(cfg, ph, "multi_lifetime", PhaseSequence(seq, True))
    assert res.n >= 100_000
    grid = np.linspace(0.0, life.quantile(0.9999), 200)
    assert res.within_band(life.cdf, grid)


# 7 -------------------------------------------------------------------------

def test_criterion_7_fit_reproduction():
    table = black_robin_table()
    published = black_robin_parameters()
    with Timer() as t:
        res = fit_coxian(table, 13, starts=4, seed=0, initial=[published])
    F_pub = objective(published, table)
    assert res.objective_value <= F_pub + 1e-9
    curve = mortality_curve(coxian(res.params), 13)
    assert np.all(np.abs(curve[:5] - np.asarray(table.rates[:5])) <= 0.08)
    assert t.elapsed < 300


# 8 -------------------------------------------------------------------------

def test_criterion_8_pyramid_properties(regression):
    ph = coxian(black_robin_parameters())
    rng = np.random.default_rng(8)
    for _ in range(5):
        f1, f2 = rng.dirichlet(np.ones(13)), rng.dirichlet(np.ones(13))
        a = rng.random()
        p1 = np.array(compute_pyramid(ph, PhaseFrequencies(f1)).freqs)
        p2 = np.array(compute_pyramid(ph, PhaseFrequencies(f2)).freqs)
        mix = a * f1 + (1 - a) * f2
        pm = np.array(compute_pyramid(ph, PhaseFrequencies(mix / mix.sum())).freqs)
        assert abs(p1.sum() - 1.0) <= 1e-8
        assert np.max(np.abs(pm - (a * p1 + (1 - a) * p2))) <= 1e-12
    for j in range(1, 14):
        pyr = compute_pyramid(ph, PhaseFrequencies(np.eye(13)[j - 1]))
        assert np.max(np.abs(np.array(pyr.freqs) - phase_class_probabilities(ph, j))) <= 1e-12
    uniform = compute_pyramid(ph, PhaseFrequencies(np.full(13, 1 / 13)))
    assert np.allclose(uniform.freqs, regression["pyramid"]["uniform_fp_freqs"], atol=1e-12, rtol=0)


# 9 -------------------------------------------------------------------------

@pytest.mark.parametrize("target, condition", [
    ("age", ["--phase", "4"]),
    ("entry_time", ["--phase", "3"]),
    ("multi_lifetime", ["--seq", "1,2,3"]),
])
def test_criterion_9_determinism(tmp_path, monkeypatch, target, condition):
    model = tmp_path / "toy.json"
    save_model(validate(ALPHA_2, TOY_Q), model)
    outputs = []
    for i, threads in enumerate(("1", "4", "1")):
        monkeypatch.setenv("PHASEAGE_THREADS", threads)
        out = tmp_path / f"run{i}.csv"
        argv = ["simulate", "--model", str(model), "--gamma", "1", "--target", target, *condition,
                "--n", "300000", "--batch", "16384", "--seed", "99", "--grid", "0:6:61", "--out", str(out)]
        assert main(argv) == 0
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1] == outputs[2]

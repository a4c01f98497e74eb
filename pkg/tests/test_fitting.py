import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phaseage.errors import InvalidModel
from phaseage.fitting import (MortalityTable, black_robin_parameters, black_robin_table, fit_coxian,
                              from_unconstrained, model_mortality, mortality_curve, objective,
                              objective_via_cdf, to_unconstrained)
from phaseage.ph_model import CoxianParameters, coxian


def test_builtin_table_and_parameters():
    table = black_robin_table()
    assert table.ages == tuple(range(13))
    assert table.rates[0] == 0.19 and table.rates[-1] == 0.67
    params = black_robin_parameters()
    assert params.m == 13 and len(params.continue_probs) == 12
    assert params.continue_probs[8] == 0.06


def test_survivals():
    t = MortalityTable([0, 1, 2], [0.5, 0.2, 0.1])
    assert np.allclose(t.survivals, [1.0, 0.5, 0.4])


@pytest.mark.parametrize("ages, rates, code", [
    ([0, 1], [0.1], "dimension"),
    ([0, 2], [0.1, 0.2], "ages"),
    ([1, 2], [0.1, 0.2], "ages"),
    ([0, 1], [0.1, 0.0], "rate"),
    ([0, 1], [0.1, 1.5], "rate"),
    ([], [], "empty"),
])
def test_table_validation(ages, rates, code):
    with pytest.raises(InvalidModel) as exc:
        MortalityTable(ages, rates)
    assert code in exc.value.codes


def test_table_csv_round_trip(tmp_path):
    t = black_robin_table()
    path = tmp_path / "t.csv"
    path.write_text(t.to_csv())
    assert MortalityTable.load(path) == t
    with pytest.raises(InvalidModel):
        MortalityTable.from_csv("age,rate\n0,0.1\n")
    with pytest.raises(InvalidModel):
        MortalityTable.from_csv("age_class_start,rate\n0,x\n")
    with pytest.raises(InvalidModel):
        MortalityTable.from_csv("age_class_start,rate\n0,0.1,3\n")


def test_published_objective(regression):
    F = objective(black_robin_parameters(), black_robin_table())
    assert F == pytest.approx(regression["fit"]["objective_published"], abs=1e-15)
    assert F == pytest.approx(objective_via_cdf(black_robin_parameters(), black_robin_table()), abs=1e-12)


def test_curve_matches_pointwise_definition(robin):
    curve = mortality_curve(robin, 13)
    for x in (0, 4, 12):
        assert curve[x] == pytest.approx(model_mortality(robin, x), abs=1e-13)
    with pytest.raises(ValueError):
        model_mortality(robin, 1.5)


def test_single_phase_constant_hazard_is_closed_form():
    d = 0.3
    table = MortalityTable(range(5), [d] * 5)
    res = fit_coxian(table, 1, starts=2)
    assert res.params.lambdas[0] == pytest.approx(-np.log1p(-d), abs=1e-8)
    assert res.objective_value < 1e-14
    ph = coxian(res.params)
    assert np.allclose(mortality_curve(ph, 5), d, atol=1e-9)


def test_fit_never_worse_than_its_starts():
    table = black_robin_table()
    res = fit_coxian(table, 3, starts=3, seed=1)
    assert res.objective_value <= min(res.start_values) + 1e-12
    assert len(res.start_values) == 3
    d = res.to_dict()
    assert set(d) >= {"params", "objective_value", "iterations", "converged"}


def test_fit_rejects_bad_m():
    with pytest.raises(ValueError):
        fit_coxian(black_robin_table(), 0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.01, 20.0), min_size=1, max_size=6), st.data())
def test_unconstrained_round_trip(lams, data):
    probs = data.draw(st.lists(st.floats(1e-6, 1 - 1e-6), min_size=len(lams) - 1, max_size=len(lams) - 1))
    p = CoxianParameters(lams, probs)
    q = from_unconstrained(to_unconstrained(p), len(lams))
    assert np.allclose(q.lambdas, p.lambdas, rtol=1e-12)
    assert np.allclose(q.continue_probs, p.continue_probs, atol=1e-12)

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quaymaint.utilities import (
    UtilityFunction,
    episode_collapse_probability,
    evaluate_utility,
    fmeca_objective_score,
    fmeca_utility,
    make_utility,
    score,
    threshold_utility,
)

import oracles


def test_collapse_probability_examples():
    assert episode_collapse_probability(0.0) == 0.0
    assert episode_collapse_probability(2 * math.log(0.9)) == pytest.approx(0.19, abs=1e-15)
    with pytest.raises(ValueError):
        episode_collapse_probability(0.1)


@settings(max_examples=200)
@given(st.floats(-50, 0), st.floats(-50, 0))
def test_collapse_probability_increasing(a, b):
    if a < b:
        assert episode_collapse_probability(a) >= episode_collapse_probability(b)


@pytest.mark.parametrize("p, want", [(0.05, -5), (0.15, -12), (0.25, -15)])
def test_threshold_examples(p, want):
    assert threshold_utility(-5, p) == want


def test_threshold_boundaries_use_lower_branch():
    assert threshold_utility(-5, 0.1) == -5
    assert threshold_utility(-5, 0.2) == -12


def test_threshold_monotone_variant():
    assert threshold_utility(-5, 0.15, monotone=True) == 3 * (-5 - 1)
    assert threshold_utility(-0.5, 0.25, monotone=True) == 5 * (-0.5 - 2)


def test_threshold_literal_form_rewards_risk_for_cheap_episodes():
    # the literal tiers exceed the unpenalised branch whenever r_cost > -3.5
    assert threshold_utility(-2, 0.5) == 0 > threshold_utility(-2, 0.05)


@settings(max_examples=300)
@given(st.floats(-30, -3.5001), st.floats(0, 1), st.floats(0, 1))
def test_threshold_monotone_in_p_where_costly(r, p1, p2):
    lo, hi = sorted((p1, p2))
    assert threshold_utility(r, hi) <= threshold_utility(r, lo)


@settings(max_examples=300)
@given(st.floats(-30, 0), st.floats(-30, 0), st.floats(0, 1))
def test_threshold_non_decreasing_in_cost_return(r1, r2, p):
    lo, hi = sorted((r1, r2))
    assert threshold_utility(lo, p) <= threshold_utility(hi, p)


def test_fmeca_score_examples():
    assert fmeca_objective_score(0.0, 4.0) == 0.0
    assert fmeca_objective_score(4.0, 4.0) == pytest.approx(6 * math.log10(11) + 4, abs=1e-12)
    assert fmeca_objective_score(2.0, 4.0) == pytest.approx(4.6689, abs=1e-4)


def test_fmeca_score_jump_is_four():
    below = fmeca_objective_score(np.nextafter(0.2, 0), 0.2)
    at = fmeca_objective_score(0.2, 0.2)
    assert at - below == pytest.approx(4.0, abs=1e-9)


@pytest.mark.parametrize(
    "r, p, want",
    [(0, 0, -1.0), (-2, 0.1, -(6 * math.log10(6)) ** 2), (-4, 0, -(6 * math.log10(11) + 4))],
)
def test_fmeca_utility_examples(r, p, want):
    assert fmeca_utility(r, p) == pytest.approx(want, rel=1e-12)


def test_fmeca_examples_printed_values():
    assert fmeca_utility(-2, 0.1) == pytest.approx(-21.799, abs=1e-3)
    assert fmeca_utility(-4, 0) == pytest.approx(-10.24836, abs=1e-5)


def test_fmeca_monotone_over_random_pairs():
    g = np.random.default_rng(0)
    n = 100_000
    r1, r2 = -g.uniform(0, 10, n), -g.uniform(0, 10, n)
    p1, p2 = g.uniform(0, 1, n), g.uniform(0, 1, n)
    u = fmeca_utility
    cost_worse = np.where(np.abs(r1) >= np.abs(r2), u(r1, p1), u(r2, p1)) <= np.where(
        np.abs(r1) >= np.abs(r2), u(r2, p1), u(r1, p1)
    )
    risk_worse = u(r1, np.maximum(p1, p2)) <= u(r1, np.minimum(p1, p2))
    assert cost_worse.all() and risk_worse.all()
    assert np.all(u(r1, p1) <= -1)


@settings(max_examples=300)
@given(st.floats(-20, 0), st.floats(0, 1))
def test_utilities_match_independent_formulas(r, p):
    assert threshold_utility(r, p) == pytest.approx(oracles.threshold_u(r, p), abs=1e-12)
    assert fmeca_utility(r, p) == pytest.approx(oracles.fmeca_u(r, p), rel=1e-12)


def test_vectorised_matches_scalar():
    g = np.random.default_rng(1)
    r, p = -g.uniform(0, 8, 50), g.uniform(0, 1, 50)
    for f in (threshold_utility, fmeca_utility):
        vec = f(r, p)
        assert np.array_equal(vec, [f(a, b) for a, b in zip(r, p)])


def test_evaluate_utility_examples():
    u = make_utility("threshold")
    assert evaluate_utility(u, -1.5, math.log(0.95)) == -1.5
    assert evaluate_utility(make_utility("fmeca"), 0.0, 0.0) == -1.0
    assert score(-1.5) == 1.5


def test_utility_object_on_vector_returns():
    u = make_utility("fmeca", c_max=4, f_max=0.2)
    returns = np.array([[-2.0, math.log(0.9)], [0.0, 0.0]])
    assert np.allclose(u(returns), [fmeca_utility(-2.0, 0.1), -1.0], rtol=1e-12)


@pytest.mark.parametrize(
    "kind, params",
    [("threshold", {"levels": (0.2, 0.1)}), ("threshold", {"multipliers": (0, 5)}),
     ("fmeca", {"c_max": 0}), ("linear", {})],
)
def test_invalid_parameters(kind, params):
    with pytest.raises(ValueError):
        UtilityFunction(kind, params)

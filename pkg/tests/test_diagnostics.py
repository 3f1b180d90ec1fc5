import numpy as np
import pytest
from helpers import ex1_cost, random_control_coupled, random_state_coupled

from mfteams.diagnostics import (
    ConvergenceReport,
    Evaluator,
    check_exchangeability,
    cost_gap,
    expected_max_abs_normal,
    loglog_slope,
    policy_gap_max,
    policy_gap_sup,
    symmetrize,
    uniform_integrability_stat,
)
from mfteams.exact import exact_cost
from mfteams.model import LinearPolicy, scalar_control_coupled, scalar_state_coupled
from mfteams.montecarlo import MCConfig
from mfteams.static import solve_control_coupled_N, solve_control_coupled_limit, solve_state_coupled_N, solve_state_coupled_limit

EX1 = scalar_state_coupled()
MC = MCConfig(samples=4000, seed=17)


def test_report_invariants():
    with pytest.raises(ValueError):
        ConvergenceReport([1, 2], [0.1], [0.1, 0.2], [0, 0], [1, 1])
    with pytest.raises(ValueError):
        ConvergenceReport([1], [-0.1], [0.1], [0], [1])
    r = ConvergenceReport([1, 2], [0.2, 0.1], [0.1, 0.05], [0, 0], [1, 1])
    assert r.rows()[1] == (2, 0.1, 0.05, 0, 1)


# --- policy gap -------------------------------------------------------------


def test_identical_policies_have_zero_gap():
    p = solve_state_coupled_limit(EX1)
    assert policy_gap_sup(EX1, p, p, 50, MC) == 0.0
    assert cost_gap(EX1, 50, p, p).value == 0.0


def test_example_one_policy_gap_oracle():
    p_inf = solve_state_coupled_limit(EX1)
    gaps = []
    for N in (10, 100, 1000):
        gap = policy_gap_sup(EX1, solve_state_coupled_N(EX1, N), p_inf, N, MCConfig(samples=4000, seed=1))
        # sd of v is sqrt(2)
        oracle = 0.25 / N * expected_max_abs_normal(N, np.sqrt(2.0))
        assert gap == pytest.approx(oracle, rel=0.03)
        gaps.append(gap)
    assert gaps[0] > gaps[1] > gaps[2]


def test_policy_gap_is_homogeneous():
    a = policy_gap_sup(EX1, LinearPolicy([[0.3]]), LinearPolicy([[0.1]]), 20, MC)
    b = policy_gap_sup(EX1, LinearPolicy([[0.6]]), LinearPolicy([[0.2]]), 20, MC)
    assert b == pytest.approx(2 * a, rel=1e-14)
    assert policy_gap_max(EX1, LinearPolicy([[0.3]]), LinearPolicy([[0.1]]), 20, MC) >= a


def test_expected_max_abs_normal_small_cases():
    assert expected_max_abs_normal(1) == pytest.approx(np.sqrt(2 / np.pi), rel=1e-10)
    assert expected_max_abs_normal(1, sd=3.0) == pytest.approx(3 * np.sqrt(2 / np.pi), rel=1e-10)


# --- cost gap ---------------------------------------------------------------


def test_example_one_cost_gap_exact():
    p_inf = solve_state_coupled_limit(EX1)
    N = 10
    g = solve_state_coupled_N(EX1, N)
    cg = cost_gap(EX1, N, g, p_inf)
    assert cg.value == pytest.approx(abs(ex1_cost(0.25 * 1.1, N) - ex1_cost(0.25, N)), rel=1e-10)
    assert cg.value > 0 and cg.ci == 0.0 and cg.difference < 0


def test_cost_gap_scales_like_one_over_n_squared():
    p_inf = solve_state_coupled_limit(EX1)
    scaled = [cost_gap(EX1, N, solve_state_coupled_N(EX1, N), p_inf).value * N * N for N in (10, 30, 100, 300, 1000)]
    assert max(scaled) <= 1.1 * min(scaled)


def test_control_cost_gap_decreases():
    spec = scalar_control_coupled()
    p_inf = solve_control_coupled_limit(spec).policy
    gaps = [cost_gap(spec, N, solve_control_coupled_N(spec, N).policy, p_inf).value for N in (10, 100)]
    assert gaps[0] > gaps[1] > 0


def test_mc_cost_gap_agrees_with_exact():
    p_inf = solve_state_coupled_limit(EX1)
    pN = solve_state_coupled_N(EX1, 10)
    exact = cost_gap(EX1, 10, pN, p_inf)
    mc = cost_gap(EX1, 10, pN, p_inf, Evaluator.MONTE_CARLO, MCConfig(samples=100_000, seed=3))
    assert abs(mc.difference - exact.difference) <= 5 * mc.ci / 1.96


# --- uniform integrability --------------------------------------------------


def test_ui_trivial_case():
    ui = uniform_integrability_stat(scalar_state_coupled(Q=0.0), LinearPolicy([[0.0]]), [10, 100], mc=MC)
    assert ui.values == (0.0, 0.0) and ui.slope == 0.0


def test_ui_bounded_for_limit_policy():
    ui = uniform_integrability_stat(EX1, solve_state_coupled_limit(EX1), [10, 100, 1000], mc=MCConfig(samples=10_000, seed=20240501))
    assert ui.slope <= 0.05
    assert ui.sup == max(ui.values)


def test_ui_negative_control():
    ui = uniform_integrability_stat(EX1, lambda N: LinearPolicy([[0.25 * N]]), [10, 100, 1000], mc=MCConfig(samples=2000, seed=1))
    assert ui.slope > 0.5


def test_ui_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        uniform_integrability_stat(EX1, LinearPolicy([[0.0]]), [10], epsilon=0.0)


def test_loglog_slope():
    assert loglog_slope([10, 100, 1000], [1.0, 0.1, 0.01]) == pytest.approx(-1.0)
    assert loglog_slope([10, 100], [0.0, 0.0]) == 0.0
    assert np.isnan(loglog_slope([10, 100], [0.0, 1.0]))


# --- exchangeability and symmetrization -------------------------------------


def test_exchangeability_examples():
    pols = [LinearPolicy([[g]]) for g in (0.1, 0.2, 0.3)]
    a, b = check_exchangeability(EX1, 3, pols, [0, 2, 1])
    assert b == pytest.approx(a, rel=1e-12)
    same = [LinearPolicy([[0.2]])] * 3
    a, b = check_exchangeability(EX1, 3, same, [2, 0, 1])
    assert a == b
    a, b = check_exchangeability(EX1, 2, pols[:2], [0, 1], Evaluator.MONTE_CARLO, MC)
    assert a == b


def test_exchangeability_input_checks():
    pols = [LinearPolicy([[0.1]])] * 3
    with pytest.raises(ValueError):
        check_exchangeability(EX1, 3, pols, [0, 0, 1])
    with pytest.raises(ValueError):
        check_exchangeability(EX1, 4, pols, [0, 1, 2, 3])


def test_random_permutation_invariance(rng):
    for make in (random_state_coupled, random_control_coupled):
        for _ in range(30):
            spec = make(rng)
            N = int(rng.integers(2, 7))
            pols = [LinearPolicy(rng.normal(size=(spec.action_dim, spec.obs_dim))) for _ in range(N)]
            a, b = check_exchangeability(spec, N, pols, rng.permutation(N))
            assert abs(a - b) <= 1e-12 * max(1.0, abs(a))


def test_symmetrize_examples():
    pols = [LinearPolicy([[0.1]]), LinearPolicy([[0.3]])]
    sym = symmetrize(EX1, 2, pols)
    assert sym.gain[0, 0] == pytest.approx(0.2, abs=1e-15)
    assert exact_cost(EX1, 2, sym) <= exact_cost(EX1, 2, pols) + 1e-12
    same = [LinearPolicy([[0.4]])] * 3
    assert exact_cost(EX1, 3, symmetrize(EX1, 3, same)) == exact_cost(EX1, 3, same)
    d = 0.07
    assert symmetrize(EX1, 2, [LinearPolicy([[0.25 + d]]), LinearPolicy([[0.25 - d]])]).gain[0, 0] == pytest.approx(0.25, abs=1e-15)


def test_symmetrization_never_increases_cost(rng):
    for make in (random_state_coupled, random_control_coupled):
        for _ in range(50):
            spec = make(rng)
            N = int(rng.integers(2, 6))
            pols = [LinearPolicy(rng.normal(size=(spec.action_dim, spec.obs_dim))) for _ in range(N)]
            assert exact_cost(spec, N, symmetrize(spec, N, pols)) <= exact_cost(spec, N, pols) + 1e-12

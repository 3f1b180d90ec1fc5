import numpy as np
import pytest
from helpers import ex1_closed_form_gain, random_control_coupled, random_state_coupled, sqrtm_spd

from mfteams.exact import exact_cost
from mfteams.model import (
    Basis,
    InvalidSpecError,
    LinearPolicy,
    NoiseLaw,
    ObservationKind,
    ObservationModel,
    QuadraticCost,
    TeamSpec,
    scalar_control_coupled,
    scalar_state_coupled,
)
from mfteams.static import (
    ContractionError,
    FixedPointConfig,
    NonConvergenceError,
    StepRule,
    _iteration_map,
    _Problem,
    l_n,
    l_n_scaled,
    scalar_control_gain,
    solve_control_coupled_N,
    solve_control_coupled_limit,
    solve_state_coupled_N,
    solve_state_coupled_limit,
)


def _gain(policy):
    return float(np.asarray(policy.gain).ravel()[0])


def _exact_gradient(spec, N, gains, h=1e-4, **kw):
    """Central differences of the exact cost w.r.t. every DM's gain (exact for quadratics)."""
    grads = np.zeros_like(gains)
    for k in range(gains.shape[0]):
        for idx in np.ndindex(gains.shape[1:]):
            up, dn = gains.copy(), gains.copy()
            up[(k,) + idx] += h
            dn[(k,) + idx] -= h
            jp = exact_cost(spec, N, [LinearPolicy(g) for g in up], **kw)
            jm = exact_cost(spec, N, [LinearPolicy(g) for g in dn], **kw)
            grads[(k,) + idx] = (jp - jm) / (2 * h)
    return grads


# --- state coupling ---------------------------------------------------------


def test_state_coupled_examples():
    spec = scalar_state_coupled()
    assert _gain(solve_state_coupled_N(spec, 4)) == pytest.approx(0.3125, abs=1e-15)
    assert _gain(solve_state_coupled_limit(spec)) == pytest.approx(0.25, abs=1e-15)
    # 0.25 (1 + 1e-6)
    assert _gain(solve_state_coupled_N(spec, 10**6)) == pytest.approx(0.25000025, abs=1e-15)
    spec = scalar_state_coupled(R=3.0, Q=1.0, var_x=1.0, var_z=3.0)
    assert _gain(solve_state_coupled_limit(spec)) == pytest.approx(0.0625, abs=1e-15)


@pytest.mark.parametrize("N", [1, 2, 5, 50])
def test_state_coupled_zero_q(N):
    spec = scalar_state_coupled(Q=0.0)
    assert _gain(solve_state_coupled_N(spec, N)) == 0.0
    assert _gain(solve_state_coupled_limit(spec)) == 0.0


@pytest.mark.parametrize("N", [1, 2, 3, 7, 100])
def test_state_coupled_matches_analytic_minimizer(N):
    spec = scalar_state_coupled()
    assert _gain(solve_state_coupled_N(spec, N)) == pytest.approx(ex1_closed_form_gain(N), abs=1e-14)


def test_state_coupled_gap_times_n_is_constant():
    spec = scalar_state_coupled(R=2.0, Q=0.7, var_x=1.3, var_z=0.4)
    g_inf = _gain(solve_state_coupled_limit(spec))
    vals = [(_gain(solve_state_coupled_N(spec, N)) - g_inf) * N for N in (1, 10, 100, 1000, 10**5)]
    assert np.ptp(vals) < 1e-12


def test_state_coupled_stationary_for_random_instances(rng):
    for _ in range(20):
        spec = random_state_coupled(rng)
        N = int(rng.integers(1, 6))
        pol = solve_state_coupled_N(spec, N)
        gains = np.stack([pol.gain] * N)
        assert np.max(np.abs(_exact_gradient(spec, N, gains))) < 1e-7


def test_state_coupled_two_point_uses_estimate_basis():
    spec = scalar_state_coupled(state_law=NoiseLaw.two_point(1.0))
    pol = solve_state_coupled_N(spec, 3)
    assert pol.basis is Basis.ESTIMATE
    assert _gain(pol) == pytest.approx(0.5 * (1 + 1 / 3), abs=1e-15)


def test_state_solver_rejects_control_spec():
    with pytest.raises(ValueError):
        solve_state_coupled_N(scalar_control_coupled(), 3)
    with pytest.raises(ValueError):
        solve_state_coupled_N(scalar_state_coupled(), 0)


# --- control coupling -------------------------------------------------------


def test_control_coupled_examples():
    spec = scalar_control_coupled()
    assert _gain(solve_control_coupled_N(spec, 2).policy) == pytest.approx(2 / 17, abs=1e-12)
    assert _gain(solve_control_coupled_limit(spec).policy) == pytest.approx(0.2, abs=1e-12)


def test_control_coupled_approaches_limit_monotonically():
    spec = scalar_control_coupled()
    lim = _gain(solve_control_coupled_limit(spec).policy)
    gaps = [abs(_gain(solve_control_coupled_N(spec, N).policy) - lim) for N in (10, 100, 1000)]
    assert gaps[0] > gaps[1] > gaps[2]


def test_control_coupled_vector_limit():
    obs = ObservationModel(ObservationKind.SHARED_STATE, np.eye(2), NoiseLaw.gaussian(np.eye(2)), NoiseLaw.gaussian(np.eye(2)))
    spec = TeamSpec(2, 2, 2, "ControlCoupled", QuadraticCost(3 * np.eye(2), np.eye(2), np.eye(2)), obs)
    np.testing.assert_allclose(solve_control_coupled_limit(spec).policy.gain, 0.2 * np.eye(2), atol=1e-12)


def test_zero_coupling_gives_zero_policy():
    spec = scalar_control_coupled(D=0.0, Q=0.0)
    for N in (1, 2, 10):
        res = solve_control_coupled_N(spec, N)
        assert _gain(res.policy) == 0.0 and res.iterations == 0
    assert _gain(solve_control_coupled_limit(spec).policy) == 0.0


def test_degenerate_ln_returns_zero_immediately():
    # Q/N - D = 0 at N = 2
    spec = scalar_control_coupled(R=3.0, D=0.5, Q=1.0)
    res = solve_control_coupled_N(spec, 2)
    assert res.iterations == 0 and _gain(res.policy) == 0.0


@pytest.mark.parametrize("N", [1, 2, 3, 10, 1000])
@pytest.mark.parametrize("kappa", [0.0, 1.0, 2.0])
def test_scalar_closed_form(N, kappa):
    spec = scalar_control_coupled(R=2.5, D=0.8, Q=1.3, H=0.7, var_x=1.4, var_z=0.6, cross_weight=kappa)
    got = _gain(solve_control_coupled_N(spec, N).policy)
    assert got == pytest.approx(scalar_control_gain(2.5, 0.8, 1.3, 0.7, 1.4, 0.6, N, kappa), abs=1e-11)


def test_ln_forms_agree(rng):
    for _ in range(100):
        spec = random_control_coupled(rng)
        N = int(rng.integers(1, 2000))
        np.testing.assert_allclose(l_n(spec.cost, N), l_n_scaled(spec.cost, N), rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("rule", list(StepRule))
def test_step_rules_agree(rule):
    # block Hessian eigenvalues below 2 so the unit step contracts too
    spec = scalar_control_coupled(R=1.2, D=0.3, Q=0.5)
    base = solve_control_coupled_N(spec, 5).policy.gain
    res = solve_control_coupled_N(spec, 5, FixedPointConfig(step_rule=rule))
    np.testing.assert_allclose(res.policy.gain, base, atol=1e-11)
    assert res.residual <= 1e-12 and res.spectral_radius_ok


def test_unit_step_can_fail_to_contract():
    spec = scalar_control_coupled(R=30.0, D=1.0)
    with pytest.raises(ContractionError):
        solve_control_coupled_N(spec, 5, FixedPointConfig(step_rule=StepRule.UNIT))
    # the default rule handles the same instance
    assert solve_control_coupled_N(spec, 5).residual <= 1e-12


def test_max_iter_exceeded():
    with pytest.raises(NonConvergenceError) as info:
        solve_control_coupled_N(scalar_control_coupled(), 5, FixedPointConfig(max_iter=2))
    assert info.value.iterations == 2 and info.value.residual > 0


def test_config_validation():
    with pytest.raises(ValueError):
        FixedPointConfig(tol=0.0)
    with pytest.raises(ValueError):
        FixedPointConfig(max_iter=0)
    with pytest.raises(ValueError):
        FixedPointConfig(step_rule="Newton")


def _weighted_residuals(spec, N, iters=5000):
    problem = _Problem(spec, N)
    lo, hi = problem.hessian_spectrum()
    step = _iteration_map(problem, StepRule.PAPER_EPSILON, 0.5 * (lo + hi))
    W = sqrtm_spd(spec.obs_model.obs_covariance)
    pi = np.zeros((1, problem.n, problem.m))
    out = []
    for _ in range(iters):
        new = step(pi)
        out.append(np.linalg.norm((new - pi)[0] @ W))
        pi = new
        if out[-1] < 1e-13:
            break
    return np.asarray(out)


def test_default_step_converges_random(rng):
    for _ in range(100):
        spec = random_control_coupled(rng, d=int(rng.integers(1, 5)), m=int(rng.integers(1, 5)))
        res = solve_control_coupled_N(spec, int(rng.integers(1, 50)))
        assert res.residual <= 1e-12 and res.iterations <= 10_000


def test_default_step_is_monotone_in_weighted_norm(rng):
    # the map is self-adjoint for <a, b> = tr(a Svv b'), so ||delta Svv^{1/2}||_F never grows
    for _ in range(100):
        spec = random_control_coupled(rng, d=int(rng.integers(1, 5)), m=int(rng.integers(1, 5)))
        h = _weighted_residuals(spec, int(rng.integers(1, 50)))
        assert np.all(np.diff(h) <= 1e-12 * h[:-1] + 1e-15)


def test_sup_norm_residual_is_not_always_monotone(rng):
    increases = []
    for _ in range(200):
        spec = random_control_coupled(rng, d=int(rng.integers(1, 5)), m=int(rng.integers(1, 5)))
        h = np.asarray(solve_control_coupled_N(spec, int(rng.integers(1, 50))).history)
        if h.size > 3:
            increases.append(np.max(np.diff(h[1:]) / h[1:-1]))
    assert max(increases) > 1e-3


def test_control_solutions_are_stationary(rng):
    for _ in range(20):
        spec = random_control_coupled(rng)
        N = int(rng.integers(1, 5))
        res = solve_control_coupled_N(spec, N)
        gains = np.stack([res.policy.gain] * N)
        assert np.max(np.abs(_exact_gradient(spec, N, gains))) < 1e-7
        np.testing.assert_allclose(res.direct.gain, res.policy.gain, atol=1e-10)


def test_limit_iteration_matches_direct(rng):
    for _ in range(30):
        spec = random_control_coupled(rng)
        res = solve_control_coupled_limit(spec)
        assert res.consistency_gap <= 1e-10


def test_large_n_approaches_limit(rng):
    for _ in range(10):
        spec = random_control_coupled(rng)
        lim = solve_control_coupled_limit(spec).policy.gain
        g = solve_control_coupled_N(spec, 10**5).policy.gain
        assert np.max(np.abs(g - lim)) < 1e-3 * (1 + np.max(np.abs(lim)))


def test_per_dm_observation_matrices_are_stationary():
    spec = scalar_control_coupled()
    hs = np.array([[[1.0]], [[0.5]], [[2.0]]])
    res = solve_control_coupled_N(spec, 3, hs=hs)
    assert isinstance(res.policy, list) and len(res.policy) == 3
    assert np.max(np.abs(_exact_gradient(spec, 3, res.gains, hs=hs))) < 1e-7


def test_asymmetric_weights_are_stationary():
    spec = scalar_control_coupled()
    alpha = [[[1.0]], [[0.5]]]
    res = solve_control_coupled_N(spec, 4, asym_weights=alpha)
    gains = res.gains
    assert abs(gains[0, 0, 0]) < abs(gains[3, 0, 0])
    assert np.max(np.abs(_exact_gradient(spec, 4, gains, asym_weights=alpha))) < 1e-7


def test_invalid_spec_is_rejected():
    with pytest.raises(InvalidSpecError):
        solve_control_coupled_N(scalar_control_coupled(R=1.0, D=1.0), 3)
    with pytest.raises(ValueError):
        solve_control_coupled_N(scalar_state_coupled(), 3)

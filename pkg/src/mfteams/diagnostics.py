"""Convergence, integrability and symmetry diagnostics for N-DM teams."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .exact import exact_cost
from .model import LinearPolicy, require_valid, stack_policies
from .montecarlo import (
    MCConfig,
    _map_chunks,
    actions,
    chunk_bounds,
    cost_samples,
    sample_scenarios,
    summarize,
)


class Evaluator(str, enum.Enum):
    EXACT = "exact"
    MONTE_CARLO = "mc"


@dataclass
class ConvergenceReport:
    """Per-N diagnostics; every list has one entry per element of ``ns``."""

    ns: list
    policy_gap: list
    cost_gap: list
    cost_gap_ci: list
    ui_stat: list
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        k = len(self.ns)
        for name in ("policy_gap", "cost_gap", "cost_gap_ci", "ui_stat"):
            if len(getattr(self, name)) != k:
                raise ValueError(f"{name} has {len(getattr(self, name))} entries, expected {k}")
        if any(g < 0 for g in self.policy_gap) or any(g < 0 for g in self.cost_gap):
            raise ValueError("gaps must be non-negative")

    def rows(self):
        return list(zip(self.ns, self.policy_gap, self.cost_gap, self.cost_gap_ci, self.ui_stat))


# --- policy gap -------------------------------------------------------------


def _gap_per_scenario(spec, N, policy_N, policy_inf, mc):
    if not isinstance(policy_inf, LinearPolicy):
        raise ValueError("the limit policy must be a single LinearPolicy")
    stack_policies(spec, N, policy_N)
    stack_policies(spec, N, policy_inf)
    width = max(spec.action_dim, spec.obs_dim, spec.state_dim)

    def run(lo, hi):
        sc = sample_scenarios(spec, N, mc.seed, lo, hi, mc.antithetic)
        d = actions(spec, N, policy_N, sc.v) - actions(spec, N, policy_inf, sc.v)
        return np.sqrt(np.sum(d * d, axis=-1)).max(axis=1)

    return np.concatenate(_map_chunks(run, chunk_bounds(mc.samples, N, width)))


def policy_gap_sup(spec, policy_N, policy_inf, N, mc=None):
    """Mean over scenarios of ``max_i |gamma_N(v_i) - gamma_inf(v_i)|``."""
    mc = mc or MCConfig()
    return float(np.mean(_gap_per_scenario(spec, N, policy_N, policy_inf, mc)))


def policy_gap_max(spec, policy_N, policy_inf, N, mc=None):
    """Max over scenarios of the same per-scenario statistic."""
    mc = mc or MCConfig()
    return float(np.max(_gap_per_scenario(spec, N, policy_N, policy_inf, mc)))


# --- cost gap ---------------------------------------------------------------


@dataclass(frozen=True)
class CostGap:
    value: float
    ci: float  # half-width of the 95% interval; 0 for exact evaluation
    difference: float

    def __float__(self):
        return self.value


def cost_gap(spec, N, policy_N, policy_inf, evaluator=Evaluator.EXACT, mc=None):
    """``|J_N(policy_N) - J_N(policy_inf)|``.

    The Monte Carlo evaluator runs both profiles on the same scenarios.
    """
    evaluator = Evaluator(evaluator)
    if evaluator is Evaluator.EXACT:
        d = exact_cost(spec, N, policy_N) - exact_cost(spec, N, policy_inf)
        return CostGap(abs(d), 0.0, d)
    mc = mc or MCConfig()
    c = cost_samples(spec, N, [policy_N, policy_inf], mc)
    mean, se = summarize(c[0] - c[1], mc.antithetic)
    return CostGap(abs(mean), 1.96 * se, mean)


# --- uniform integrability --------------------------------------------------


@dataclass(frozen=True)
class IntegrabilityResult:
    ns: tuple
    values: tuple
    stderr: tuple
    slope: float

    @property
    def sup(self):
        return max(self.values)


def loglog_slope(ns, values):
    """Least-squares slope of ``log(value)`` on ``log(N)``; 0 for an all-zero sequence."""
    values = np.asarray(values, dtype=np.float64)
    if np.all(values == 0.0):
        return 0.0
    if np.any(values <= 0.0):
        return float("nan")
    return float(np.polyfit(np.log(np.asarray(ns, dtype=np.float64)), np.log(values), 1)[0])


def uniform_integrability_stat(spec, policy_inf, ns, epsilon=1.0, mc=None, **cost_kw):
    """Monte Carlo ``E[|X_N|^(1+epsilon)]`` per N, X_N the per-scenario average cost.

    ``policy_inf`` may be a callable ``N -> policy`` (used by negative controls
    whose policy depends on N).  ``cost_kw`` is passed to ``cost_samples``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    mc = mc or MCConfig()
    vals, ses = [], []
    for N in ns:
        pol = policy_inf(N) if callable(policy_inf) else policy_inf
        x = cost_samples(spec, N, [pol], mc, **cost_kw)[0]
        mean, se = summarize(np.abs(x) ** (1.0 + epsilon), mc.antithetic)
        vals.append(mean)
        ses.append(se)
    return IntegrabilityResult(tuple(ns), tuple(vals), tuple(ses), loglog_slope(ns, vals))


# --- exchangeability and symmetrization -------------------------------------


def check_exchangeability(spec, N, policies, permutation, evaluator=Evaluator.EXACT, mc=None):
    """J_N under the original and the permuted assignment of policies to DMs."""
    require_valid(spec)
    policies = list(policies)
    if len(policies) != N:
        raise ValueError(f"expected {N} policies")
    perm = [int(p) for p in permutation]
    if sorted(perm) != list(range(N)):
        raise ValueError("not a permutation of range(N)")
    permuted = [policies[p] for p in perm]
    if Evaluator(evaluator) is Evaluator.EXACT:
        return exact_cost(spec, N, policies), exact_cost(spec, N, permuted)
    mc = mc or MCConfig()
    c = cost_samples(spec, N, [policies, permuted], mc)
    return float(np.mean(c[0])), float(np.mean(c[1]))


def symmetrize(spec, N, policies):
    """Average over all permutations, which for linear policies is the mean gain."""
    gains, basis = stack_policies(spec, N, policies)
    if np.all(gains == gains[0]):
        # the floating-point mean of equal values can drift by an ulp
        return LinearPolicy(gains[0], basis)
    return LinearPolicy(gains.mean(axis=0), basis)


def expected_max_abs_normal(N, sd=1.0, nodes=400):
    """``E[max_{i<=N} |v_i|]`` for i.i.d. N(0, sd^2) by quadrature on the CDF."""
    from scipy import integrate, special

    def tail(t):
        p = special.erf(t / math.sqrt(2.0))
        return 1.0 - p**N

    val, _ = integrate.quad(tail, 0.0, np.inf, limit=nodes)
    return sd * val


__all__ = [
    "ConvergenceReport",
    "CostGap",
    "Evaluator",
    "IntegrabilityResult",
    "check_exchangeability",
    "cost_gap",
    "expected_max_abs_normal",
    "loglog_slope",
    "policy_gap_max",
    "policy_gap_sup",
    "symmetrize",
    "uniform_integrability_stat",
]

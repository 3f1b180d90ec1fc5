"""Closed-form expected team cost J_N for linear policies.

Everything here is second-moment algebra: with linear policies the expected
quadratic cost depends on the laws only through ``E[f f']`` and ``E[f x']``
of the policy feature ``f``, which ``model.feature_moments`` supplies (for
two-point laws the moments of ``E[x|v]`` come from quadrature).
"""

import numpy as np

from .model import Basis, Coupling, observation_gain, require_valid, stack_policies


class CapabilityError(ValueError):
    """The exact evaluator does not cover this law / policy combination."""


def _asym_array(weights, N, n):
    out = np.zeros((N, n, n))
    if weights is None:
        return out
    weights = list(weights)
    if len(weights) > N:
        raise ValueError("more asymmetric weights than decision makers")
    for k, a in enumerate(weights):
        out[k] = np.asarray(a, dtype=np.float64).reshape(n, n)
    return out


def state_coupled_cost(spec, N, policies):
    from .model import feature_moments

    gains, basis = stack_policies(spec, N, policies)
    F, C = feature_moments(spec, basis)
    R, Q = spec.cost.R, spec.cost.Q
    Sx = spec.obs_model.state_law.covariance
    c = 1.0 + 1.0 / N
    base = (c * c + (N - 1) / N**2) * Sx
    total = 0.0
    for G in gains:
        GF = G @ F @ G.T
        GC = G @ C
        cov_e = GF - c * (GC + GC.T) + base
        total += np.trace(R @ GF) + np.trace(Q @ cov_e)
    return float(total / N)


def control_coupled_cost(spec, N, policies, hs=None, asym_weights=None):
    obs = spec.obs_model
    if not obs.is_gaussian:
        raise CapabilityError("exact control-coupled cost needs Gaussian laws")
    if isinstance(policies, (list, tuple)) and len(policies) == 1:
        policies = policies[0]
    gains, basis = stack_policies(spec, N, policies)
    from .model import LinearPolicy

    P = np.stack([observation_gain(spec, LinearPolicy(g, basis)) for g in gains]) if basis is Basis.ESTIMATE else gains
    Hs = _per_dm_h(spec, N, hs)
    R, Q, D, kappa = spec.cost.R, spec.cost.Q, spec.cost.D, spec.cost.cross_weight
    Sx, Sz = obs.state_law.covariance, obs.noise_law.covariance
    n = spec.action_dim
    alpha = _asym_array(asym_weights, N, n)
    M = R + Q / N**2 - 2.0 * D / N
    B = Q / N**2 - kappa * D / N
    lin = Q / N - D
    F = np.einsum("kij,kjl->kil", P, Hs)  # u_k = F_k x + P_k z_k
    total = np.trace(Q @ Sx)
    Fsum = F.sum(axis=0)
    total += np.trace(Fsum.T @ B @ Fsum @ Sx)
    for k in range(N):
        Mk = M + alpha[k] / N
        cov_u = F[k] @ Sx @ F[k].T + P[k] @ Sz @ P[k].T
        total += np.trace(Mk @ cov_u) - np.trace(F[k].T @ B @ F[k] @ Sx)
        total += 2.0 * np.trace(lin @ F[k] @ Sx)
    return float(total / N)


def _per_dm_h(spec, N, hs):
    if hs is None:
        return np.broadcast_to(spec.obs_model.H, (N,) + spec.obs_model.H.shape)
    Hs = np.asarray(hs, dtype=np.float64)
    if Hs.shape != (N,) + spec.obs_model.H.shape:
        raise ValueError(f"per-DM H must have shape {(N,) + spec.obs_model.H.shape}")
    return Hs


def exact_cost(spec, N, policies, *, hs=None, asym_weights=None):
    """Exact J_N of the given linear policies (one shared or N individual)."""
    require_valid(spec)
    if spec.coupling is Coupling.STATE:
        if hs is not None or asym_weights is not None:
            raise CapabilityError("per-DM H and asymmetric weights apply to control coupling only")
        return state_coupled_cost(spec, N, policies)
    return control_coupled_cost(spec, N, policies, hs=hs, asym_weights=asym_weights)


def asymmetric_term(spec, N, policies, asym_weights):
    """Exact ``E[(1/N) sum_{k<M} u_k' alpha_k u_k]``.

    This is the extra term as it appears inside the team average; its
    contribution to J_N is this value divided by N.
    """
    obs = spec.obs_model
    gains, basis = stack_policies(spec, N, policies)
    n = spec.action_dim
    alpha = _asym_array(asym_weights, N, n)
    total = 0.0
    for k in range(len(list(asym_weights))):
        G = gains[k] if basis is Basis.OBSERVATION else gains[k] @ spec.conditional_mean.matrix
        total += np.trace(alpha[k] @ G @ obs.obs_covariance @ G.T)
    return float(total / N)

"""Seeded Monte Carlo for team costs, stationarity and empirical measures.

Scenario ``s`` draws every primitive from its own Philox stream, so any
subset of scenarios can be regenerated independently.  Work is split into
chunks whose boundaries depend only on ``(N, samples)``; chunks may run on a
thread pool (``MFTEAMS_THREADS``) and are reduced in index order, which keeps
serial and parallel results bit-identical.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels, rng
from .exact import CapabilityError
from .model import (
    Basis,
    Coupling,
    LinearPolicy,
    ObservationKind,
    apply_matrix,
    policy_features,
    require_valid,
    stack_policies,
)

CHUNK_ELEMENTS = 1 << 18
TEST_BANK_VERSION = "tanh-16-v1"
_BANK_SEED = 0x5EED_7E57


@dataclass(frozen=True)
class MCConfig:
    samples: int = 10_000
    seed: int = 0
    antithetic: bool = False

    def __post_init__(self):
        if int(self.samples) < 1:
            raise ValueError("samples must be >= 1")
        if not 0 <= int(self.seed) < 1 << 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.antithetic and self.samples % 2:
            raise ValueError("antithetic sampling needs an even number of samples")


@dataclass(frozen=True, eq=False)
class Scenario:
    """Joint draws for a batch of scenarios.

    ``x`` has shape (S, N, state_dim) for private states and (S, state_dim)
    for a shared state; ``z`` and ``v`` have shape (S, N, obs_dim).
    """

    x: np.ndarray
    z: np.ndarray
    v: np.ndarray

    def __len__(self):
        return self.v.shape[0]


@dataclass(frozen=True)
class CostEstimate:
    mean: float
    stderr: float
    samples: int
    exact: bool = False

    def ci(self, z=1.96):
        return (self.mean - z * self.stderr, self.mean + z * self.stderr)


# --- threading / chunking ---------------------------------------------------


def thread_count():
    raw = os.environ.get("MFTEAMS_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return min(4, os.cpu_count() or 1)


def chunk_bounds(samples, N, width=1, pair=False):
    size = max(1, CHUNK_ELEMENTS // max(1, N * width))
    if pair:
        size += size & 1
    return [(lo, min(lo + size, samples)) for lo in range(0, samples, size)]


def _map_chunks(fn, bounds, threads=None):
    threads = thread_count() if threads is None else threads
    if threads <= 1 or len(bounds) <= 1:
        return [fn(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda b: fn(*b), bounds))


# --- sampling ---------------------------------------------------------------


def _state_count(spec, N):
    return N if spec.obs_model.kind is ObservationKind.PRIVATE_IID else 1


def _draws_per_scenario(spec, N):
    obs = spec.obs_model
    nx = obs.state_law.uniforms_per_draw(_state_count(spec, N))
    nz = obs.noise_law.uniforms_per_draw(N)
    return nx, nz


def observe(spec, x, z):
    """``v = x + z`` (private states) or ``v = H x + z`` (shared state)."""
    if spec.obs_model.kind is ObservationKind.PRIVATE_IID:
        return x + z
    return apply_matrix(spec.obs_model.H, x)[:, None, :] + z


def sample_scenarios(spec, N, seed, lo, hi, antithetic=False):
    """Scenarios ``lo..hi-1`` of the stream family ``(seed, SCENARIO)``.

    With ``antithetic`` the odd scenario of each pair negates the primitives
    of its even partner (all supported laws are symmetric).
    """
    obs = spec.obs_model
    nx, nz = _draws_per_scenario(spec, N)
    idx = np.arange(lo, hi, dtype=np.uint64)
    base = idx >> np.uint64(1) if antithetic else idx
    u = rng.uniforms(seed, rng.SCENARIO, base, nx + nz)
    S = hi - lo
    x = obs.state_law.transform(u[:, :nx], _state_count(spec, N))
    z = obs.noise_law.transform(u[:, nx:], N)
    if obs.kind is not ObservationKind.PRIVATE_IID:
        x = x[:, 0, :]
    if antithetic:
        sign = np.where(idx & np.uint64(1), -1.0, 1.0)
        x = x * sign.reshape((S,) + (1,) * (x.ndim - 1))
        z = z * sign[:, None, None]
    return Scenario(x, z, observe(spec, x, z))


def sample_scenario(spec, N, stream, seed=0):
    """The single scenario with index ``stream`` (arrays without the batch axis)."""
    require_valid(spec)
    sc = sample_scenarios(spec, N, seed, int(stream), int(stream) + 1)
    return Scenario(sc.x[0], sc.z[0], sc.v[0])


# --- costs ------------------------------------------------------------------


def apply_gains(gains, f):
    """Per-DM actions ``u[:, i] = gains[i] @ f[:, i]`` in a fixed summation order."""
    S, N, k = f.shape
    n = gains.shape[1]
    out = np.zeros((S, N, n))
    if gains.shape[0] == 1:
        return apply_matrix(gains[0], f)
    for a in range(n):
        acc = out[..., a]
        for j in range(k):
            acc += gains[None, :, a, j] * f[..., j]
    return out


def actions(spec, N, policies, v):
    gains, basis = stack_policies(spec, N, policies)
    if np.all(gains == gains[0]):
        gains = gains[:1]
    return apply_gains(gains, policy_features(spec, basis, v))


def _asym_term(u, asym_weights):
    if not asym_weights:
        return 0.0
    N, n = u.shape[1], u.shape[2]
    total = np.zeros(u.shape[0])
    for k, a in enumerate(asym_weights):
        a = np.asarray(a, dtype=np.float64).reshape(n, n)
        uk = u[:, k, :]
        total += np.einsum("si,ij,sj->s", uk, a, uk)
    # the term sits inside the team average, hence 1/N twice
    return total / (N * N)


def scenario_costs(spec, u, x, asym_weights=None):
    """Per-scenario team cost ``(1/N) sum_i c_i`` for actions ``u`` of shape (S, N, n)."""
    cost = spec.cost
    if spec.coupling is Coupling.STATE:
        return kernels.state_coupled_costs(u, x, cost.R, cost.Q)
    out = kernels.control_coupled_costs(u, x, cost.R, cost.D, cost.Q, cost.cross_weight)
    return out + _asym_term(u, asym_weights)


def _per_dm_h(spec, N, hs):
    if hs is None:
        return None
    hs = np.asarray(hs, dtype=np.float64)
    if hs.shape != (N,) + spec.obs_model.H.shape:
        raise ValueError(f"per-DM H must have shape {(N,) + spec.obs_model.H.shape}")
    return hs


def _scenarios_with_h(spec, N, seed, lo, hi, antithetic, hs):
    sc = sample_scenarios(spec, N, seed, lo, hi, antithetic)
    if hs is None:
        return sc
    hx = np.einsum("kij,sj->ski", hs, sc.x)
    return Scenario(sc.x, sc.z, hx + sc.z)


def cost_samples(spec, N, policy_sets, mc, *, hs=None, asym_weights=None, threads=None):
    """Per-scenario costs, one row per policy profile, on common random numbers."""
    require_valid(spec)
    hs = _per_dm_h(spec, N, hs)
    width = max(spec.action_dim, spec.obs_dim, spec.state_dim)

    def run(lo, hi):
        sc = _scenarios_with_h(spec, N, mc.seed, lo, hi, mc.antithetic, hs)
        return np.stack([scenario_costs(spec, actions(spec, N, p, sc.v), sc.x, asym_weights) for p in policy_sets])

    parts = _map_chunks(run, chunk_bounds(mc.samples, N, width, mc.antithetic), threads)
    return np.concatenate(parts, axis=1)


def summarize(samples, antithetic=False):
    samples = np.asarray(samples, dtype=np.float64)
    if antithetic:
        samples = 0.5 * (samples[0::2] + samples[1::2])
    n = samples.size
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
    return mean, se


def estimate_cost_N(spec, N, policies, mc=None, *, hs=None, asym_weights=None, threads=None):
    """Monte Carlo J_N with its standard error."""
    mc = mc or MCConfig()
    if spec.coupling is Coupling.STATE and (hs is not None or asym_weights):
        raise ValueError("per-DM H and asymmetric weights apply to control coupling only")
    c = cost_samples(spec, N, [policies], mc, hs=hs, asym_weights=asym_weights, threads=threads)[0]
    mean, se = summarize(c, mc.antithetic)
    return CostEstimate(mean, se, mc.samples)


def paired_difference(spec, N, policies_a, policies_b, mc=None, **kw):
    """``J_N(a) - J_N(b)`` on common random numbers."""
    mc = mc or MCConfig()
    c = cost_samples(spec, N, [policies_a, policies_b], mc, **kw)
    mean, se = summarize(c[0] - c[1], mc.antithetic)
    return CostEstimate(mean, se, mc.samples)


def pbp_deviation_test(spec, N, policies, dm_index, perturbations, mc=None):
    """Cost change from shifting DM ``dm_index``'s gain by each perturbation.

    Returns one ``CostEstimate`` of ``J_N(perturbed) - J_N(baseline)`` per
    perturbation, all on the same scenarios.
    """
    if not 0 <= dm_index < N:
        raise ValueError("dm_index out of range")
    mc = mc or MCConfig()
    gains, basis = stack_policies(spec, N, policies)
    base = [LinearPolicy(g, basis) for g in gains]
    sets = [base]
    for d in perturbations:
        p = list(base)
        p[dm_index] = base[dm_index].shifted(np.broadcast_to(np.asarray(d, dtype=np.float64), gains.shape[1:]))
        sets.append(p)
    c = cost_samples(spec, N, sets, mc)
    out = []
    for row in c[1:]:
        mean, se = summarize(row - c[0], mc.antithetic)
        out.append(CostEstimate(mean, se, mc.samples))
    return out


# --- stationarity -----------------------------------------------------------


@dataclass(frozen=True)
class StationarityResult:
    """Per-DM projected conditional gradients.

    ``residual[i]`` is the max-norm of ``E[g_i f_i']`` where ``g_i`` is the
    finite-difference gradient of the conditional expected cost in ``u_i`` and
    ``f_i`` DM i's policy feature; ``stderr[i]`` is the standard error of the
    entry attaining it and ``zscore[i]`` the largest ``|entry| / SE``.
    """

    residual: np.ndarray
    stderr: np.ndarray
    zscore: np.ndarray

    def within(self, k):
        return bool(np.all(self.zscore <= k))

    def exceeds(self, k):
        return bool(np.all(self.zscore > k))


def _resampled(spec, N, sc, i, seed, lo, hi):
    """Keep DM i's observation, redraw everything else from its law given it."""
    obs = spec.obs_model
    cm = spec.conditional_mean
    S = hi - lo
    nx, nz = _draws_per_scenario(spec, N)
    npost = cm.uniforms_needed()
    idx = (np.uint64(i) << np.uint64(32)) | np.arange(lo, hi, dtype=np.uint64)
    u = rng.uniforms(seed, rng.RESAMPLE, idx, nx + nz + npost)
    fresh_x = obs.state_law.transform(u[:, :nx], _state_count(spec, N))
    fresh_z = obs.noise_law.transform(u[:, nx:nx + nz], N)
    vi = sc.v[:, i, :]
    xi = cm.sample_state(vi, u[:, nx + nz:])
    if obs.kind is ObservationKind.PRIVATE_IID:
        x, z = fresh_x, fresh_z
        x[:, i, :] = xi
        z[:, i, :] = vi - xi
        return Scenario(x, z, x + z)
    z = fresh_z
    hx = apply_matrix(obs.H, xi)
    z[:, i, :] = vi - hx
    v = hx[:, None, :] + z
    return Scenario(xi, z, v)


def stationarity_residual(spec, N, policies, mc=None, fd_step=1e-4, threads=None):
    """Projected conditional gradient test of stationarity for every DM.

    For each scenario and DM ``i`` the other DMs' primitives (and ``x``
    given ``v_i``) are redrawn from their conditional law, the team cost is
    differenced at ``u_i +/- h e_k`` and the gradient is projected on the
    policy feature.  At a stationary linear policy the projections have
    mean zero.
    """
    require_valid(spec)
    if fd_step <= 0:
        raise ValueError("fd_step must be positive")
    mc = mc or MCConfig()
    gains, basis = stack_policies(spec, N, policies)
    n = spec.action_dim
    width = max(spec.action_dim, spec.obs_dim, spec.state_dim)

    def run(lo, hi):
        sc = sample_scenarios(spec, N, mc.seed, lo, hi, mc.antithetic)
        out = []
        for i in range(N):
            rs = _resampled(spec, N, sc, i, mc.seed, lo, hi)
            u = apply_gains(gains, policy_features(spec, basis, rs.v))
            f = policy_features(spec, basis, rs.v[:, i, :])
            grad = np.empty((hi - lo, n))
            for k in range(n):
                up, dn = u.copy(), u.copy()
                up[:, i, k] += fd_step
                dn[:, i, k] -= fd_step
                grad[:, k] = (scenario_costs(spec, up, rs.x) - scenario_costs(spec, dn, rs.x)) / (2.0 * fd_step)
            out.append(grad[:, :, None] * f[:, None, :])
        return np.stack(out)  # (N, S, n, k)

    parts = _map_chunks(run, chunk_bounds(mc.samples, N, width * N, mc.antithetic), threads)
    proj = np.concatenate(parts, axis=1)
    if mc.antithetic:
        proj = 0.5 * (proj[:, 0::2] + proj[:, 1::2])
    S = proj.shape[1]
    mean = proj.mean(axis=1)
    se = proj.std(axis=1, ddof=1) / math.sqrt(S)
    flat_m = np.abs(mean).reshape(N, -1)
    flat_se = se.reshape(N, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(flat_se > 0, flat_m / np.where(flat_se > 0, flat_se, 1.0), np.where(flat_m > 0, np.inf, 0.0))
    arg = flat_m.argmax(axis=1)
    rows = np.arange(N)
    return StationarityResult(flat_m[rows, arg], flat_se[rows, arg], z.max(axis=1))


# --- empirical measures -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Uniform measure on the atoms ``(actions[i], observations[i])``."""

    actions: np.ndarray
    observations: np.ndarray

    def __post_init__(self):
        if self.actions.shape[0] != self.observations.shape[0]:
            raise ValueError("atom arrays differ in length")

    def __len__(self):
        return self.actions.shape[0]

    @property
    def weights(self):
        return np.full(len(self), 1.0 / len(self))

    def integrate(self, g):
        return float(np.mean(g(self.actions, self.observations)))


def empirical_measure(spec, N, policy, scenario):
    """Atoms ``(gamma(v_i), v_i)`` of one scenario under a symmetric policy."""
    if not isinstance(policy, LinearPolicy):
        raise ValueError("empirical_measure needs a single symmetric policy")
    v = np.asarray(scenario.v, dtype=np.float64)
    if v.shape != (N, spec.obs_dim):
        raise ValueError(f"scenario observations must have shape {(N, spec.obs_dim)}")
    f = policy_features(spec, policy.basis, v)
    return EmpiricalMeasure(apply_matrix(policy.gain, f), v)


@dataclass(frozen=True, eq=False)
class TanhTest:
    """``g(u, v) = tanh(a'u + b'v + c)``."""

    a: np.ndarray
    b: np.ndarray
    c: float

    def __call__(self, u, v):
        return np.tanh(apply_matrix(self.a[None], u)[..., 0] + apply_matrix(self.b[None], v)[..., 0] + self.c)


def constant_test(u, v):
    return np.ones(u.shape[:-1])


def default_test_bank(action_dim, obs_dim, size=16):
    """Fixed bank of bounded continuous test functions (version ``TEST_BANK_VERSION``)."""
    k = action_dim + obs_dim + 1
    raw = rng.standard_normals(_BANK_SEED, rng.BANK, np.arange(size), k)
    return [TanhTest(r[:action_dim].copy(), r[action_dim:-1].copy(), float(0.5 * r[-1])) for r in raw]


def reference_sampler(spec, policy, seed=0):
    """Draws of one DM's ``(action, observation)`` from the limit marginal law."""

    def draw(n):
        obs = spec.obs_model
        nx, nz = obs.state_law.uniforms_per_draw(1), obs.noise_law.uniforms_per_draw(1)
        u = rng.uniforms(seed, rng.REFERENCE, np.arange(n), nx + nz)
        x = obs.state_law.transform(u[:, :nx], 1)[:, 0]
        z = obs.noise_law.transform(u[:, nx:], 1)[:, 0]
        v = apply_matrix(obs.H, x) + z
        return apply_matrix(policy.gain, policy_features(spec, policy.basis, v)), v

    return draw


def weak_convergence_stat(measure, reference_sampler, test_bank=None, reference_draws=1_000_000):
    """``|int g dQ_N - int g dQ|`` for each test function ``g``.

    ``reference_sampler(n)`` returns ``n`` draws ``(actions, observations)``
    of the reference law; its integrals use ``reference_draws`` draws.
    """
    if test_bank is None:
        test_bank = default_test_bank(measure.actions.shape[1], measure.observations.shape[1])
    if not test_bank:
        raise ValueError("test bank is empty")
    ua, va = reference_sampler(reference_draws)
    return np.array([abs(measure.integrate(g) - float(np.mean(g(ua, va)))) for g in test_bank])


def weak_convergence_curve(spec, policy, ns, replicates=100, seed=0, reference_draws=1_000_000, test_bank=None):
    """Mean test-bank gap per N (averaged over replicate scenarios) and its log-log slope."""
    require_valid(spec)
    if spec.obs_model.kind is not ObservationKind.PRIVATE_IID:
        raise CapabilityError("the marginal reference law applies to private i.i.d. observations")
    ns = list(ns)
    if test_bank is None:
        test_bank = default_test_bank(spec.action_dim, spec.obs_dim)
    ua, va = reference_sampler(spec, policy, seed)(reference_draws)
    ref = np.array([float(np.mean(g(ua, va))) for g in test_bank])
    gaps = []
    for N in ns:
        sc = sample_scenarios(spec, N, seed, 0, replicates)
        f = policy_features(spec, policy.basis, sc.v)
        u = apply_matrix(policy.gain, f)
        emp = np.stack([np.mean(g(u, sc.v), axis=1) for g in test_bank], axis=1)
        gaps.append(float(np.mean(np.abs(emp - ref))))
    slope = float(np.polyfit(np.log(ns), np.log(gaps), 1)[0]) if len(ns) > 1 else float("nan")
    return np.array(gaps), slope


# --- misc -------------------------------------------------------------------


def mean_action_variance(spec, N, policy, mc=None):
    """Sample variance over scenarios of the population-average action."""
    mc = mc or MCConfig()
    width = max(spec.action_dim, spec.obs_dim)

    def run(lo, hi):
        sc = sample_scenarios(spec, N, mc.seed, lo, hi, mc.antithetic)
        return actions(spec, N, policy, sc.v).mean(axis=1)

    means = np.concatenate(_map_chunks(run, chunk_bounds(mc.samples, N, width)))
    return np.var(means, axis=0, ddof=1)


__all__ = [
    "CostEstimate",
    "EmpiricalMeasure",
    "MCConfig",
    "Scenario",
    "StationarityResult",
    "TEST_BANK_VERSION",
    "TanhTest",
    "constant_test",
    "cost_samples",
    "default_test_bank",
    "empirical_measure",
    "estimate_cost_N",
    "paired_difference",
    "pbp_deviation_test",
    "reference_sampler",
    "sample_scenario",
    "sample_scenarios",
    "stationarity_residual",
    "weak_convergence_curve",
    "weak_convergence_stat",
]

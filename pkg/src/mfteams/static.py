"""Team-optimal linear policies for N-DM teams and their mean-field limits.

State coupling has a closed form.  Control coupling is solved as a fixed
point of the per-DM first-order conditions

    M_k pi_k + (Q/N - D) S_k + (1/N)(Q/N - kappa D) sum_{p != k} pi_p H_p S_k = 0,

with ``M_k = R + Q/N^2 - 2D/N`` (plus ``alpha_k/N`` for asymmetric effort
weights), ``S_k`` the conditional-mean gain of ``x`` given ``v_k`` and
``kappa = cost.cross_weight``.  The iteration is a parallel (Jacobi) sweep
over DMs; every solve is cross-checked against a direct vectorized linear
solve.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .model import (
    Basis,
    Coupling,
    LawFamily,
    LinearPolicy,
    ObservationKind,
    conditional_mean_gain,
    min_eig,
    require_valid,
)

CONSISTENCY_TOL = 1e-8
DIRECT_DENSE_LIMIT = 4096


class NonConvergenceError(RuntimeError):
    def __init__(self, residual, iterations):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"fixed-point iteration did not converge: residual {residual:.3e} after {iterations} iterations")


class ContractionError(RuntimeError):
    """The iteration map is not a contraction (spectral radius >= 1)."""


class ConsistencyError(RuntimeError):
    """Iteration and direct solve disagree."""


class StepRule(str, enum.Enum):
    PAPER_EPSILON = "PaperEpsilon"  # relaxed step 1/eps, eps = (lmax + lmin)/2 of the block Hessian
    UNIT = "Unit"  # relaxed step with eps = 1
    JACOBI = "Jacobi"  # pi_k <- -M_k^{-1}[...], the plain parallel sweep


@dataclass(frozen=True)
class FixedPointConfig:
    tol: float = 1e-12
    max_iter: int = 10_000
    step_rule: StepRule = StepRule.PAPER_EPSILON

    def __post_init__(self):
        object.__setattr__(self, "step_rule", StepRule(self.step_rule))
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class SolveResult:
    policy: LinearPolicy | list
    iterations: int
    residual: float
    spectral_radius_ok: bool
    spectral_radius: float
    direct: LinearPolicy | list | None = None
    consistency_gap: float = 0.0
    history: list = field(default_factory=list, repr=False)

    @property
    def gains(self):
        if isinstance(self.policy, LinearPolicy):
            return self.policy.gain
        return np.stack([p.gain for p in self.policy])


# --- state coupling ---------------------------------------------------------


def _check_state_coupled(spec):
    require_valid(spec)
    if spec.coupling is not Coupling.STATE or spec.obs_model.kind is not ObservationKind.PRIVATE_IID:
        raise ValueError("expected a StateCoupled spec with PrivateIID observations")


def _state_gain(spec, factor):
    R, Q = spec.cost.R, spec.cost.Q
    A = np.linalg.solve(R + Q, Q) * factor
    cm = spec.conditional_mean
    if cm.matrix is not None:
        return LinearPolicy(A @ cm.matrix, Basis.OBSERVATION)
    return LinearPolicy(A, Basis.ESTIMATE)


def solve_state_coupled_N(spec, N):
    """``u_i = (R+Q)^{-1} Q (1 + 1/N) E[x_i | v_i]``.

    Gaussian laws give an observation-basis gain; otherwise the gain acts on
    ``E[x | v]``.
    """
    _check_state_coupled(spec)
    if N < 1:
        raise ValueError("N must be positive")
    return _state_gain(spec, 1.0 + 1.0 / N)


def solve_state_coupled_limit(spec):
    """``u = (R+Q)^{-1} Q E[x | v]``, the pointwise N -> infinity limit."""
    _check_state_coupled(spec)
    return _state_gain(spec, 1.0)


# --- control coupling -------------------------------------------------------


def l_n(cost, N):
    """``(R + Q/N^2 - 2D/N)^{-1} (Q/N - D)``."""
    R, Q, D = cost.R, cost.Q, cost.D
    return np.linalg.solve(R + Q / N**2 - 2.0 * D / N, Q / N - D)


def l_n_scaled(cost, N):
    """The same matrix written as ``-(N^2 R - 2DN + Q)^{-1} (N^2 D - N Q)``."""
    R, Q, D = cost.R, cost.Q, cost.D
    return -np.linalg.solve(N * N * R - 2.0 * N * D + Q, N * N * D - N * Q)


def _check_control_coupled(spec):
    require_valid(spec)
    if spec.coupling is not Coupling.CONTROL:
        raise ValueError("expected a ControlCoupled spec")


def _gain_s(spec, H):
    obs = spec.obs_model
    Sx, Sz = obs.state_law.covariance, obs.noise_law.covariance
    Svv = H @ Sx @ H.T + Sz
    return np.linalg.solve(Svv.T, (Sx @ H.T).T).T


def _vec(a):
    return a.reshape(-1, order="F")


def _unvec(x, shape):
    return x.reshape(shape, order="F")


class _Problem:
    """Linear operator form ``A(pi) = b`` of the stationarity conditions.

    ``A(pi)_k = M_k pi_k + B sum_{p != k} pi_p W_pk`` with ``W_pk = H_p S_k``.
    """

    def __init__(self, spec, N, hs=None, asym_weights=None):
        cost = spec.cost
        n, m = spec.action_dim, spec.obs_dim
        self.N, self.n, self.m = N, n, m
        R, Q, D, kappa = cost.R, cost.Q, cost.D, cost.cross_weight
        self.M = R + Q / N**2 - 2.0 * D / N
        self.B = (Q / N - kappa * D) / N
        self.lin = Q / N - D
        H = spec.obs_model.H
        self.symmetric = hs is None and not asym_weights
        if self.symmetric:
            self.Hs = H[None]
            self.Mk = self.M[None]
        else:
            self.Hs = np.broadcast_to(H, (N,) + H.shape).copy() if hs is None else np.asarray(hs, dtype=np.float64)
            if self.Hs.shape != (N,) + H.shape:
                raise ValueError(f"per-DM H must have shape {(N,) + H.shape}")
            alpha = np.zeros((N, n, n))
            for k, a in enumerate(asym_weights or ()):
                alpha[k] = np.asarray(a, dtype=np.float64).reshape(n, n)
            self.Mk = self.M[None] + alpha / N
        self.Ss = np.stack([_gain_s(spec, Hk) for Hk in self.Hs])
        self.rhs = -np.einsum("ij,kjl->kil", self.lin, self.Ss)
        self.K = self.Mk.shape[0]

    def apply(self, pi):
        """A(pi); ``pi`` has shape (K, n, m)."""
        if self.symmetric:
            return (self.M @ pi[0] + (self.N - 1) * self.B @ pi[0] @ self.Hs[0] @ self.Ss[0])[None]
        PH = np.einsum("kij,kjl->kil", pi, self.Hs)
        total = PH.sum(axis=0)
        others = total[None] - PH
        return np.einsum("kij,kjl->kil", self.Mk, pi) + np.einsum("ij,kjl,klm->kim", self.B, others, self.Ss)

    def jacobi(self, pi):
        """pi_k <- M_k^{-1} (b_k - B sum_{p!=k} pi_p W_pk)."""
        off = self.apply(pi) - np.einsum("kij,kjl->kil", self.Mk, pi)
        return np.linalg.solve(self.Mk, self.rhs - off)

    def hessian_spectrum(self):
        """Extreme eigenvalues of the block matrix with diagonal M_k and off-diagonal B."""
        if self.symmetric:
            lo = np.linalg.eigvalsh(self.M - self.B)
            hi = np.linalg.eigvalsh(self.M + (self.N - 1) * self.B)
            ev = np.concatenate([hi, lo]) if self.N > 1 else hi
            return float(ev.min()), float(ev.max())
        N, n = self.N, self.n
        big = np.kron(np.ones((N, N)) - np.eye(N), self.B)
        for k in range(N):
            big[k * n:(k + 1) * n, k * n:(k + 1) * n] = self.Mk[k]
        ev = np.linalg.eigvalsh(big)
        return float(ev[0]), float(ev[-1])

    def dense(self):
        size = self.K * self.n * self.m
        mat = np.empty((size, size))
        shape = (self.K, self.n, self.m)
        for j in range(size):
            e = np.zeros(size)
            e[j] = 1.0
            mat[:, j] = self._flat(self.apply(self._unflat(e, shape)))
        return mat

    def _flat(self, pi):
        return np.concatenate([_vec(p) for p in pi])

    def _unflat(self, x, shape):
        K, n, m = shape
        return np.stack([_unvec(x[k * n * m:(k + 1) * n * m], (n, m)) for k in range(K)])

    def direct(self):
        size = self.K * self.n * self.m
        shape = (self.K, self.n, self.m)
        b = self._flat(self.rhs)
        if size <= DIRECT_DENSE_LIMIT:
            return self._unflat(np.linalg.solve(self.dense(), b), shape)
        op = LinearOperator((size, size), matvec=lambda x: self._flat(self.apply(self._unflat(x, shape))))
        x, info = gmres(op, b, rtol=1e-14, atol=0.0, restart=50, maxiter=2000)
        if info != 0:
            raise ConsistencyError("direct solve (GMRES) did not converge")
        return self._unflat(x, shape)


def _iteration_map(problem, rule, eps):
    if rule is StepRule.JACOBI:
        return problem.jacobi
    return lambda pi: pi - (problem.apply(pi) - problem.rhs) / eps


def _spectral_radius(step, shape, size_limit=1024):
    """Spectral radius of the linear part of the affine map ``step``."""
    size = int(np.prod(shape))
    if size > size_limit:
        return None
    zero = np.zeros(shape)
    base = step(zero)
    cols = np.empty((size, size))
    for j in range(size):
        e = np.zeros(size)
        e[j] = 1.0
        cols[:, j] = (step(e.reshape(shape)) - base).ravel()
    return float(np.abs(np.linalg.eigvals(cols)).max())


def _iterate(step, pi0, cfg):
    pi = pi0
    history = []
    for it in range(1, cfg.max_iter + 1):
        new = step(pi)
        residual = float(np.max(np.abs(new - pi)))
        history.append(residual)
        pi = new
        if not np.isfinite(residual):
            break
        if residual <= cfg.tol:
            return pi, it, residual, history
    raise NonConvergenceError(history[-1], len(history))


def _wrap(spec, pis, symmetric):
    if symmetric:
        return LinearPolicy(pis[0])
    return [LinearPolicy(p) for p in pis]


def solve_control_coupled_N(spec, N, cfg=None, *, hs=None, asym_weights=None):
    """Optimal linear policies for the N-DM control-coupled team.

    Symmetric teams (shared ``H``, no asymmetric weights) return a single
    ``LinearPolicy``; otherwise a list with one policy per DM.  ``hs`` gives
    per-DM observation matrices, ``asym_weights`` extra effort weights
    ``alpha_k`` on the first ``len(asym_weights)`` DMs.
    """
    _check_control_coupled(spec)
    cfg = cfg or FixedPointConfig()
    if N < 1:
        raise ValueError("N must be positive")
    problem = _Problem(spec, N, hs, asym_weights)
    shape = (problem.K, problem.n, problem.m)
    if not np.any(problem.lin):
        zero = np.zeros(shape)
        return SolveResult(_wrap(spec, zero, problem.symmetric), 0, 0.0, True, 0.0, _wrap(spec, zero, problem.symmetric))

    eps = 1.0
    if cfg.step_rule is StepRule.PAPER_EPSILON:
        lmin, lmax = problem.hessian_spectrum()
        eps = 0.5 * (lmin + lmax)
    step = _iteration_map(problem, cfg.step_rule, eps)
    rho = _spectral_radius(step, shape)
    if rho is None and cfg.step_rule is StepRule.PAPER_EPSILON:
        lmin, lmax = problem.hessian_spectrum()
        rho = (lmax - lmin) / (lmax + lmin)
    if rho is not None and rho >= 1.0:
        raise ContractionError(f"iteration map has spectral radius {rho:.6g} >= 1")

    pi, iters, residual, history = _iterate(step, np.zeros(shape), cfg)
    direct = problem.direct()
    gap = float(np.max(np.abs(pi - direct)))
    if gap > CONSISTENCY_TOL:
        raise ConsistencyError(f"iteration and direct solve differ by {gap:.3e}")
    return SolveResult(
        policy=_wrap(spec, pi, problem.symmetric),
        iterations=iters,
        residual=residual,
        spectral_radius_ok=rho is None or rho < 1.0,
        spectral_radius=float("nan") if rho is None else rho,
        direct=_wrap(spec, direct, problem.symmetric),
        consistency_gap=gap,
        history=history,
    )


def solve_control_coupled_limit(spec, cfg=None):
    """Limit fixed point ``R pi = D [S + kappa pi H S]``."""
    _check_control_coupled(spec)
    cfg = cfg or FixedPointConfig()
    cost = spec.cost
    R, D, kappa = cost.R, cost.D, cost.cross_weight
    H = spec.obs_model.H
    S = conditional_mean_gain(spec.obs_model).matrix
    n, m = spec.action_dim, spec.obs_dim
    HS = H @ S
    rhs = D @ S
    if not np.any(rhs):
        zero = LinearPolicy(np.zeros((n, m)))
        return SolveResult(zero, 0, 0.0, True, 0.0, zero)

    def apply(pi):
        return R @ pi - kappa * D @ pi @ HS

    if cfg.step_rule is StepRule.JACOBI:
        def step(pi):
            return np.linalg.solve(R, D @ (S + kappa * pi @ HS))
    else:
        eps = 1.0
        if cfg.step_rule is StepRule.PAPER_EPSILON:
            ev = np.concatenate([np.linalg.eigvalsh(R), np.linalg.eigvalsh(R - kappa * D)])
            eps = 0.5 * (ev.min() + ev.max())

        def step(pi):
            return pi - (apply(pi) - rhs) / eps

    rho = _spectral_radius(step, (n, m), size_limit=4096)
    if rho >= 1.0:
        raise ContractionError(f"limit map has spectral radius {rho:.6g} >= 1")
    pi, iters, residual, history = _iterate(step, np.zeros((n, m)), cfg)
    A = np.kron(np.eye(m), R) - kappa * np.kron(HS.T, D)
    direct = _unvec(np.linalg.solve(A, _vec(rhs)), (n, m))
    gap = float(np.max(np.abs(pi - direct)))
    if gap > CONSISTENCY_TOL:
        raise ConsistencyError(f"iteration and direct solve differ by {gap:.3e}")
    return SolveResult(LinearPolicy(pi), iters, residual, True, rho, LinearPolicy(direct), gap, history)


def scalar_control_gain(R, D, Q, H, var_x, var_z, N, cross_weight=1.0):
    """Scalar closed form ``pi_N = -L_N S / (1 + c L_N (N-1)/N H S)`` (c adjusts kappa)."""
    S = var_x * H / (H * H * var_x + var_z)
    M = R + Q / N**2 - 2.0 * D / N
    L = (Q / N - D) / M
    Lc = (Q / N - cross_weight * D) / M
    return -L * S / (1.0 + Lc * (N - 1) / N * H * S)

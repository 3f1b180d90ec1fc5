"""Finite- and infinite-horizon LQR for the classical chain and its average cost.

The chain is ``X_{t+1} = A X_t + B u_t + w_t`` with stage cost
``X'QX + u'Ru``.  Backward recursion (terminal value 0):

    G^t = -(R + B'k^{t+1}B)^{-1} B'k^{t+1}A
    k^t = Q + A'k^{t+1}A + A'k^{t+1}B G^t

Average costs of linear state feedback are evaluated exactly through the
state covariance recursion; ``trace_expansion_cost`` rebuilds the same number
from the static reduction ``X_t = C_t zeta`` over the primitive vector
``zeta = (X_0, w_0, ..., w_{T-1})`` for short horizons.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import rng
from .model import TOL_PD, DynamicLQGSpec, ValidationReport, apply_matrix, is_symmetric, min_eig
from .montecarlo import CostEstimate, MCConfig, _map_chunks, summarize

TRACE_EXPANSION_MAX_T = 20
DEFAULT_BETAS = (0.9, 0.99, 0.999)
STALL_SWEEPS = 200
STALL_TOL = 1e-8


class ControllabilityError(ValueError):
    pass


class RiccatiNonConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    """``k_seq[t] = k_T^t`` for t = 0..T and ``g_seq[t] = G_T^t`` for t = 0..T-1."""

    k_seq: tuple
    g_seq: tuple
    k_inf: np.ndarray | None = None
    g_inf: np.ndarray | None = None

    @property
    def horizon(self):
        return len(self.g_seq)


def controllability_check(A, B):
    """Rank of ``[B, AB, ..., A^{n-1}B]`` by SVD; returns ``(controllable, rank)``."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.asarray(B, dtype=np.float64)
    n = A.shape[0]
    if B.ndim < 2:
        B = B.reshape(n, -1)
    if A.shape != (n, n) or B.shape[0] != n:
        raise ValueError("A must be n x n and B n x m")
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    s = linalg.svd(np.hstack(blocks), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return False, 0
    rank = int(np.sum(s > n * s[0] * 1e-12))
    return rank == n, rank


def validate_dynamic(spec: DynamicLQGSpec) -> ValidationReport:
    report = ValidationReport()
    n = spec.A.shape[0]
    if spec.A.shape != (n, n):
        report.add("A must be square")
        return report
    m = spec.B.shape[1] if spec.B.ndim == 2 else 0
    if spec.B.shape != (n, m):
        report.add(f"B must have {n} rows")
    for name, want, strict in (("Q", (n, n), False), ("R", (m, m), True), ("Sigma_w", (n, n), True), ("Sigma_0", (n, n), True)):
        a = getattr(spec, name)
        if a.shape != want:
            report.add(f"{name} must have shape {want}, got {a.shape}")
        elif not is_symmetric(a):
            report.add(f"{name} not symmetric")
        elif strict and min_eig(a) <= TOL_PD:
            report.add(f"{name} not positive definite")
        elif not strict and min_eig(a) < -TOL_PD:
            report.add(f"{name} not positive semi-definite")
    if report.ok and not controllability_check(spec.A, spec.B)[0]:
        report.add("(A, B) not controllable")
    return report


def _step(spec, k):
    """One Riccati step ``(k^{t+1}) -> (k^t, G^t)`` via a Cholesky solve."""
    A, B = spec.A, spec.B
    kA = k @ A
    S = spec.R + B.T @ k @ B
    G = -linalg.cho_solve(linalg.cho_factor(S, lower=True), B.T @ kA)
    knew = spec.Q + A.T @ kA + kA.T @ B @ G
    return 0.5 * (knew + knew.T), G


def riccati_map(spec, k):
    return _step(spec, k)[0]


def finite_horizon_lqr(spec, T):
    if T < 1:
        raise ValueError("T must be >= 1")
    validate_dynamic(spec).raise_if_invalid()
    n = spec.A.shape[0]
    k = np.zeros((n, n))
    ks, gs = [k], []
    for _ in range(T):
        k, G = _step(spec, k)
        ks.append(k)
        gs.append(G)
    return RiccatiSolution(tuple(reversed(ks)), tuple(reversed(gs)))


def infinite_horizon_lqr(spec, tol=1e-12, max_iter=100_000):
    """Value iteration from 0 until the Frobenius one-step residual is <= tol * max(1, |K|).

    Badly scaled instances can stall above that threshold at the rounding
    floor of the recursion; a residual that has not improved for
    ``STALL_SWEEPS`` sweeps is accepted when it is within ``STALL_TOL``
    relative, otherwise the iteration fails.
    """
    report = validate_dynamic(spec)
    if "(A, B) not controllable" in report.issues:
        raise ControllabilityError("(A, B) is not controllable")
    report.raise_if_invalid()
    n = spec.A.shape[0]
    k = np.zeros((n, n))
    best, since = np.inf, 0
    for _ in range(max_iter):
        knew, _ = _step(spec, k)
        r = np.linalg.norm(knew - k)
        scale = max(1.0, np.linalg.norm(knew))
        k = knew
        if r <= tol * scale:
            break
        if r < best:
            best, since = r, 0
        else:
            since += 1
            if since >= STALL_SWEEPS and best <= STALL_TOL * scale:
                break
    else:
        raise RiccatiNonConvergenceError(f"value iteration did not reach {tol:g} in {max_iter} steps")
    _, G = _step(spec, k)
    return k, G


def closed_loop_radius(spec, G):
    return float(np.max(np.abs(np.linalg.eigvals(spec.A + spec.B @ G))))


def solve(spec, T, tol=1e-12):
    fin = finite_horizon_lqr(spec, T)
    K, G = infinite_horizon_lqr(spec, tol)
    return RiccatiSolution(fin.k_seq, fin.g_seq, K, G)


def discounted_fixed_point(spec, beta, k0=None, tol=1e-12, max_iter=100_000):
    """Fixed point ``C_beta`` of the discounted recursion."""
    A, B, Q, R = spec.A, spec.B, spec.Q, spec.R
    n = A.shape[0]
    C = np.zeros((n, n)) if k0 is None else k0
    for _ in range(max_iter):
        bCA = beta * C @ A
        S = R + beta * B.T @ C @ B
        Cn = Q + A.T @ bCA - bCA.T @ B @ linalg.cho_solve(linalg.cho_factor(S, lower=True), B.T @ bCA)
        Cn = 0.5 * (Cn + Cn.T)
        if np.linalg.norm(Cn - C) <= tol * max(1.0, np.linalg.norm(Cn)):
            return Cn
        C = Cn
    raise RiccatiNonConvergenceError(f"discounted iteration (beta={beta}) did not converge")


def beta_homotopy(spec, betas=DEFAULT_BETAS, tol=1e-12):
    """``C_beta`` along an increasing discount schedule, each warm-started from the previous."""
    out, C = [], None
    for b in betas:
        if not 0 < b < 1:
            raise ValueError("discount factors must lie in (0, 1)")
        C = discounted_fixed_point(spec, b, C, tol)
        out.append(C)
    return out


# --- average costs ----------------------------------------------------------


def _schedule(spec, T, gains):
    gains = [np.atleast_2d(np.asarray(g, dtype=np.float64)) for g in (gains if isinstance(gains, (list, tuple)) else [gains])]
    if len(gains) == 1:
        gains = gains * T
    if len(gains) != T:
        raise ValueError(f"gain schedule must have length 1 or {T}")
    want = (spec.B.shape[1], spec.A.shape[0])
    for g in gains:
        if g.shape != want:
            raise ValueError(f"gain shape {g.shape} does not match {want}")
    return gains


def exact_average_cost(spec, T, gains):
    """``(1/T) sum_t Tr((Q + G_t'RG_t) P_t)`` with the state covariance ``P_t``."""
    gains = _schedule(spec, T, gains)
    P = spec.Sigma_0.copy()
    total = 0.0
    for G in gains:
        total += np.trace((spec.Q + G.T @ spec.R @ G) @ P)
        F = spec.A + spec.B @ G
        P = F @ P @ F.T + spec.Sigma_w
    return float(total / T)


def trace_expansion_cost(spec, T, gains):
    """The same cost from ``X_t = C_t zeta`` with ``C_t = [L^{t,0}, L^{t,1}, ..., I, 0, ...]``."""
    if T > TRACE_EXPANSION_MAX_T:
        raise ValueError(f"trace expansion is limited to T <= {TRACE_EXPANSION_MAX_T}")
    gains = _schedule(spec, T, gains)
    n = spec.A.shape[0]
    cov = linalg.block_diag(spec.Sigma_0, *([spec.Sigma_w] * T))
    F = [spec.A + spec.B @ G for G in gains]
    total = 0.0
    for t in range(T):
        C = np.zeros((n, n * (T + 1)))
        # L^{t,k} = F_{t-1} ... F_k; column block k multiplies zeta_k
        L = np.eye(n)
        for k in range(t, -1, -1):
            C[:, k * n:(k + 1) * n] = L
            if k > 0:
                L = L @ F[k - 1]
        H = spec.Q + gains[t].T @ spec.R @ gains[t]
        total += np.trace(C.T @ H @ C @ cov)
    return float(total / T)


def cost_gap_theorem64(spec, T):
    """``|J_T(time-varying G_T^t) - J_T(stationary G_inf)|``, evaluated exactly."""
    fin = finite_horizon_lqr(spec, T)
    _, G = infinite_horizon_lqr(spec)
    return abs(exact_average_cost(spec, T, list(fin.g_seq)) - exact_average_cost(spec, T, G))


def is_psd_ordered(lo, hi, tol=1e-10):
    """``lo <= hi`` in the PSD order."""
    d = hi - lo
    return bool(np.linalg.eigvalsh(0.5 * (d + d.T)).min() >= -tol * max(1.0, np.abs(hi).max()))


def simulate_average_cost(spec, T, gains, mc=None, chunk=4096):
    """Monte Carlo average cost of a gain schedule on the ``CHAIN`` streams."""
    mc = mc or MCConfig()
    gains = _schedule(spec, T, gains)
    n = spec.A.shape[0]
    f0 = linalg.cholesky(spec.Sigma_0, lower=True)
    fw = linalg.cholesky(spec.Sigma_w, lower=True)

    def run(lo, hi):
        z = rng.standard_normals(mc.seed, rng.CHAIN, np.arange(lo, hi), n * (T + 1)).reshape(hi - lo, T + 1, n)
        X = apply_matrix(f0, z[:, 0])
        acc = np.zeros(hi - lo)
        for t, G in enumerate(gains):
            u = apply_matrix(G, X)
            acc += np.einsum("si,ij,sj->s", X, spec.Q, X) + np.einsum("si,ij,sj->s", u, spec.R, u)
            X = apply_matrix(spec.A, X) + apply_matrix(spec.B, u) + apply_matrix(fw, z[:, t + 1])
        return acc / T

    bounds = [(lo, min(lo + chunk, mc.samples)) for lo in range(0, mc.samples, chunk)]
    mean, se = summarize(np.concatenate(_map_chunks(run, bounds)))
    return CostEstimate(mean, se, mc.samples)


def scalar_are_root(A, B, Q, R):
    """Positive root of the scalar ARE by bisection (an independent oracle)."""
    def f(k):
        return Q + A * A * k - (A * B * k) ** 2 / (R + B * B * k) - k

    lo, hi = 0.0, 1.0
    while f(hi) > 0:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)

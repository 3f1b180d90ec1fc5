"""Problem data for static mean-field LQ teams and the classical LQG chain.

Two static instance families are supported:

* state coupling with private i.i.d. observations ``v_i = x_i + z_i`` and
  per-DM cost ``u'Ru + (u - x_i - mean(x))'Q(u - x_i - mean(x))``;
* control coupling with a shared state ``v_i = H x + z_i`` and cost
  ``u_i'R u_i - 2 u_i'D (x + mean(u))`` plus ``(x + mean(u))'Q(x + mean(u))``
  counted once per team.

All types are immutable; arrays are copied and frozen on construction.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, special

TOL_PD = 1e-10
MAX_DIM = 64


class InvalidSpecError(ValueError):
    """Raised when a solver receives a spec that fails ``validate``."""

    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("invalid spec: " + "; ".join(self.issues))


class IllPosedEstimatorError(ValueError):
    pass


class Coupling(str, enum.Enum):
    STATE = "StateCoupled"
    CONTROL = "ControlCoupled"


class ObservationKind(str, enum.Enum):
    PRIVATE_IID = "PrivateIID"
    SHARED_STATE = "SharedState"


class LawFamily(str, enum.Enum):
    GAUSSIAN = "Gaussian"
    TWO_POINT = "TwoPointSymmetric"


class Basis(str, enum.Enum):
    """What a linear gain multiplies: the raw observation or E[x | v]."""

    OBSERVATION = "observation"
    ESTIMATE = "estimate"


def _frozen(a, ndim=2):
    arr = np.array(a, dtype=np.float64)
    if arr.ndim == 0 and ndim == 2:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1 and ndim == 2:
        arr = arr.reshape(1, -1) if arr.size == 1 else arr
    arr.setflags(write=False)
    return arr


def _sym_sqrt(cov):
    w, V = np.linalg.eigh(0.5 * (cov + cov.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def min_eig(a):
    return float(np.linalg.eigvalsh(0.5 * (a + a.T)).min())


def is_symmetric(a, tol=1e-12):
    return a.ndim == 2 and a.shape[0] == a.shape[1] and np.allclose(a, a.T, rtol=0, atol=tol * max(1.0, np.abs(a).max()))


@dataclass(frozen=True, eq=False)
class NoiseLaw:
    """Zero-mean law of a random vector.

    Two-point laws take the values ``+a_j`` / ``-a_j`` with probability 1/2,
    independently across coordinates; their covariance is ``diag(a**2)``.
    """

    family: LawFamily
    covariance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "family", LawFamily(self.family))
        object.__setattr__(self, "covariance", _frozen(self.covariance))

    @classmethod
    def gaussian(cls, covariance):
        return cls(LawFamily.GAUSSIAN, covariance)

    @classmethod
    def two_point(cls, magnitude):
        a = np.atleast_1d(np.asarray(magnitude, dtype=np.float64))
        return cls(LawFamily.TWO_POINT, np.diag(a * a))

    @property
    def dim(self):
        return self.covariance.shape[0]

    @property
    def is_gaussian(self):
        return self.family is LawFamily.GAUSSIAN

    @cached_property
    def magnitude(self):
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @cached_property
    def factor(self):
        """Symmetric square root of the covariance."""
        return _sym_sqrt(self.covariance)

    def uniforms_per_draw(self, count):
        """Uniforms consumed to produce ``count`` independent draws."""
        k = count * self.dim
        if self.is_gaussian:
            return k + (k & 1)
        return k

    def transform(self, u, count):
        """Map uniforms ``(S, uniforms_per_draw(count))`` to draws ``(S, count, dim)``."""
        from .rng import normals_from_uniforms

        S = u.shape[0]
        k = count * self.dim
        if self.is_gaussian:
            z = normals_from_uniforms(u)[:, :k].reshape(S, count, self.dim)
            return apply_matrix(self.factor, z)
        signs = np.where(u[:, :k] < 0.5, -1.0, 1.0).reshape(S, count, self.dim)
        return signs * self.magnitude


def apply_matrix(M, a):
    """``a @ M.T`` over the last axis with a batch-size independent summation order."""
    out = np.zeros(a.shape[:-1] + (M.shape[0],))
    for i in range(M.shape[0]):
        acc = out[..., i]
        for j in range(M.shape[1]):
            if M[i, j] != 0.0:
                acc += M[i, j] * a[..., j]
    return out


@dataclass(frozen=True, eq=False)
class ObservationModel:
    kind: ObservationKind
    H: np.ndarray
    state_law: NoiseLaw
    noise_law: NoiseLaw

    def __post_init__(self):
        object.__setattr__(self, "kind", ObservationKind(self.kind))
        object.__setattr__(self, "H", _frozen(self.H))

    @property
    def is_gaussian(self):
        return self.state_law.is_gaussian and self.noise_law.is_gaussian

    @cached_property
    def obs_covariance(self):
        H, Sx = self.H, self.state_law.covariance
        return H @ Sx @ H.T + self.noise_law.covariance


@dataclass(frozen=True, eq=False)
class QuadraticCost:
    """Cost weights.

    ``cross_weight`` sets how strongly D couples one DM's action to the other
    DMs' actions in the control-coupled cost.  With 2.0 the cost is exactly
    ``(1/N) E[sum_i u_i'Ru_i - 2 u_i'D(x + mean u) + (x + mean u)'Q(x + mean u)]``;
    with the default 1.0 the action-action D coupling is halved, which is the
    cost whose first-order conditions are the fixed point
    ``pi = -L_N [S + (N-1)/N pi H S]``.  Unused for state coupling.
    """

    R: np.ndarray
    Q: np.ndarray
    D: np.ndarray | None = None
    cross_weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "R", _frozen(self.R))
        object.__setattr__(self, "Q", _frozen(self.Q))
        if self.D is not None:
            object.__setattr__(self, "D", _frozen(self.D))
        object.__setattr__(self, "cross_weight", float(self.cross_weight))


@dataclass(frozen=True, eq=False)
class TeamSpec:
    action_dim: int
    obs_dim: int
    state_dim: int
    coupling: Coupling
    cost: QuadraticCost
    obs_model: ObservationModel

    def __post_init__(self):
        object.__setattr__(self, "coupling", Coupling(self.coupling))

    @cached_property
    def conditional_mean(self):
        return conditional_mean_gain(self.obs_model)


@dataclass(frozen=True, eq=False)
class LinearPolicy:
    """``u = gain @ v`` (observation basis) or ``u = gain @ E[x | v]`` (estimate basis)."""

    gain: np.ndarray
    basis: Basis = Basis.OBSERVATION

    def __post_init__(self):
        object.__setattr__(self, "gain", _frozen(self.gain))
        object.__setattr__(self, "basis", Basis(self.basis))

    def scaled(self, factor):
        return LinearPolicy(self.gain * factor, self.basis)

    def shifted(self, delta):
        return LinearPolicy(self.gain + delta, self.basis)

    def __repr__(self):
        return f"LinearPolicy(gain={self.gain.tolist()}, basis={self.basis.value!r})"


@dataclass(frozen=True, eq=False)
class DynamicLQGSpec:
    """``X_{t+1} = A X_t + B u_t + w_t``, stage cost ``X'QX + u'Ru``."""

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Sigma_w: np.ndarray
    Sigma_0: np.ndarray

    def __post_init__(self):
        B = np.asarray(self.B, dtype=np.float64)
        if B.ndim == 1 and B.size > 1:
            B = B.reshape(-1, 1)
        object.__setattr__(self, "B", B)
        for name in ("A", "B", "Q", "R", "Sigma_w", "Sigma_0"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def n(self):
        return self.A.shape[0]


@dataclass
class ValidationReport:
    issues: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.issues

    def add(self, msg):
        self.issues.append(msg)

    def raise_if_invalid(self):
        if self.issues:
            raise InvalidSpecError(self.issues)


def _check_matrix(report, name, a, shape):
    if a.shape != shape:
        report.add(f"{name} has shape {a.shape}, expected {shape}")
        return False
    if not np.all(np.isfinite(a)):
        report.add(f"{name} has non-finite entries")
        return False
    return True


def validate(spec: TeamSpec) -> ValidationReport:
    """Check every standing assumption; an empty report means valid."""
    report = ValidationReport()
    dims = {"action_dim": spec.action_dim, "obs_dim": spec.obs_dim, "state_dim": spec.state_dim}
    for name, d in dims.items():
        if not isinstance(d, (int, np.integer)) or d < 1:
            report.add(f"{name} must be a positive integer")
        elif d > MAX_DIM:
            report.add(f"{name} exceeds {MAX_DIM}")
    if not report.ok:
        return report
    n, m, s = spec.action_dim, spec.obs_dim, spec.state_dim
    cost, obs = spec.cost, spec.obs_model

    if spec.coupling is Coupling.STATE and obs.kind is not ObservationKind.PRIVATE_IID:
        report.add("StateCoupled requires PrivateIID observations")
    if spec.coupling is Coupling.CONTROL and obs.kind is not ObservationKind.SHARED_STATE:
        report.add("ControlCoupled requires SharedState observations")
    if n != s:
        report.add("action_dim must equal state_dim (actions and states are added in the cost)")

    if _check_matrix(report, "R", cost.R, (n, n)):
        if not is_symmetric(cost.R):
            report.add("R not symmetric")
        elif min_eig(cost.R) <= TOL_PD:
            report.add("R not positive definite")
    if _check_matrix(report, "Q", cost.Q, (n, n)):
        if not is_symmetric(cost.Q):
            report.add("Q not symmetric")
        elif min_eig(cost.Q) < -TOL_PD:
            report.add("Q not positive semi-definite")
    if spec.coupling is Coupling.CONTROL:
        if cost.D is None:
            report.add("ControlCoupled requires D")
        elif _check_matrix(report, "D", cost.D, (n, n)):
            if not is_symmetric(cost.D):
                report.add("D not symmetric")
            elif min_eig(cost.D) < -TOL_PD:
                report.add("D not positive semi-definite")
            elif cost.R.shape == (n, n) and min_eig(cost.R - 2.0 * cost.D) <= TOL_PD:
                report.add("R - 2D not positive definite")
        if not 0.0 <= cost.cross_weight <= 2.0:
            report.add("cross_weight must lie in [0, 2]")

    H_ok = _check_matrix(report, "H", obs.H, (m, s))
    if H_ok and obs.kind is ObservationKind.PRIVATE_IID and not np.array_equal(obs.H, np.eye(m, s)):
        report.add("PrivateIID requires H = identity")
    Sx, Sz = obs.state_law.covariance, obs.noise_law.covariance
    sx_ok = _check_matrix(report, "state covariance", Sx, (s, s))
    sz_ok = _check_matrix(report, "noise covariance", Sz, (m, m))
    if sx_ok:
        if not is_symmetric(Sx):
            report.add("state covariance not symmetric")
        elif min_eig(Sx) < -TOL_PD:
            report.add("state covariance not positive semi-definite")
    if sz_ok:
        if not is_symmetric(Sz):
            report.add("noise covariance not symmetric")
        elif min_eig(Sz) <= TOL_PD:
            report.add("noise covariance not positive definite")
    if H_ok and sx_ok and sz_ok and min_eig(obs.obs_covariance) <= TOL_PD:
        report.add("observation covariance H Sx H' + Sz not positive definite")
    if not obs.is_gaussian:
        if obs.kind is not ObservationKind.PRIVATE_IID:
            report.add("non-Gaussian laws are only supported with PrivateIID observations")
        for name, law in (("state", obs.state_law), ("noise", obs.noise_law)):
            cov = law.covariance
            if cov.ndim == 2 and not np.array_equal(cov, np.diag(np.diag(cov))):
                report.add(f"{name} covariance must be diagonal when a law is non-Gaussian")
    return report


def require_valid(spec):
    validate(spec).raise_if_invalid()


# --- conditional means -----------------------------------------------------


def _logistic(t):
    return special.expit(t)


class ConditionalMean:
    """The map ``v -> E[x | v]`` for one DM.

    For jointly Gaussian laws it is linear and ``matrix`` holds the gain; for
    two-point components it is evaluated pointwise coordinate by coordinate
    and ``matrix`` is ``None``.
    """

    def __init__(self, obs_model: ObservationModel):
        self.obs_model = obs_model
        self.matrix = None
        if obs_model.is_gaussian:
            Svv = obs_model.obs_covariance
            if min_eig(Svv) <= TOL_PD:
                raise IllPosedEstimatorError("H Sx H' + Sz is singular")
            Sxv = obs_model.state_law.covariance @ obs_model.H.T
            self.matrix = np.linalg.solve(Svv.T, Sxv.T).T
            self.matrix.setflags(write=False)
        else:
            self._sx = np.diag(obs_model.state_law.covariance).copy()
            self._sz = np.diag(obs_model.noise_law.covariance).copy()

    @property
    def is_linear(self):
        return self.matrix is not None

    def __call__(self, v):
        v = np.asarray(v, dtype=np.float64)
        if self.matrix is not None:
            return apply_matrix(self.matrix, v)
        out = np.empty_like(v)
        for j in range(v.shape[-1]):
            out[..., j] = self._coordinate_mean(j, v[..., j])
        return out

    def _families(self):
        return self.obs_model.state_law.is_gaussian, self.obs_model.noise_law.is_gaussian

    def _coordinate_mean(self, j, v):
        gx, gz = self._families()
        sx, sz = self._sx[j], self._sz[j]
        if gx and gz:
            return sx / (sx + sz) * v
        if not gx and gz:
            a = np.sqrt(sx)
            return a * np.tanh(a * v / sz)
        if gx and not gz:
            b = np.sqrt(sz)
            if sx == 0.0:
                return np.zeros_like(v)
            return v - b * np.tanh(b * v / sx)
        a, b = np.sqrt(sx), np.sqrt(sz)
        num = np.zeros_like(v)
        den = np.zeros_like(v)
        for xs in (-a, a):
            for zs in (-b, b):
                hit = np.abs(v - (xs + zs)) <= 1e-12 * (a + b + 1.0)
                num += hit * xs
                den += hit
        with np.errstate(invalid="ignore"):
            return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)

    def coordinate_second_moment(self, j):
        """``E[E[x_j | v_j]^2]`` by quadrature or enumeration."""
        gx, gz = self._families()
        sx, sz = self._sx[j], self._sz[j]
        if gx and gz:
            return sx * sx / (sx + sz)
        if not gx and gz:
            a = np.sqrt(sx)
            if a == 0.0:
                return 0.0
            sd = np.sqrt(sz)
            # v = a + z by symmetry of the two atoms
            f = lambda t: np.tanh(a * (a + sd * t) / sz) ** 2 * np.exp(-0.5 * t * t)
            val, _ = integrate.quad(f, -np.inf, np.inf, epsabs=1e-14, epsrel=1e-13)
            return a * a * val / np.sqrt(2.0 * np.pi)
        if gx and not gz:
            if sx == 0.0:
                return 0.0
            b, sd = np.sqrt(sz), np.sqrt(sx)

            def f(t):
                v = sd * t + b
                return (v - b * np.tanh(b * v / sx)) ** 2 * np.exp(-0.5 * t * t)

            val, _ = integrate.quad(f, -np.inf, np.inf, epsabs=1e-14, epsrel=1e-13)
            return val / np.sqrt(2.0 * np.pi)
        a, b = np.sqrt(sx), np.sqrt(sz)
        atoms = np.array([xs + zs for xs in (-a, a) for zs in (-b, b)])
        return float(np.mean(self._coordinate_mean(j, atoms) ** 2))

    @cached_property
    def second_moment(self):
        """``E[m m']`` with ``m = E[x | v]``."""
        if self.matrix is not None:
            K = self.matrix
            return K @ self.obs_model.obs_covariance @ K.T
        return np.diag([self.coordinate_second_moment(j) for j in range(self._sx.size)])

    def sample_state(self, v, uniforms):
        """Draw ``x`` from its conditional law given ``v``.

        ``uniforms`` has shape ``v.shape[:-1] + (k,)`` with ``k`` from
        ``uniforms_needed``.
        """
        from .rng import normals_from_uniforms

        v = np.asarray(v, dtype=np.float64)
        s = self.obs_model.state_law.dim
        if self.matrix is not None:
            cov = self.posterior_covariance
            z = normals_from_uniforms(uniforms)[..., :s]
            return apply_matrix(self.matrix, v) + apply_matrix(_sym_sqrt(cov), z)
        gx, gz = self._families()
        out = np.empty(v.shape)
        for j in range(v.shape[-1]):
            vj, uj = v[..., j], uniforms[..., j]
            sx, sz = self._sx[j], self._sz[j]
            if not gx and gz:
                a = np.sqrt(sx)
                p_plus = _logistic(2.0 * a * vj / sz)
                out[..., j] = np.where(uj < p_plus, a, -a)
            elif gx and not gz:
                b = np.sqrt(sz)
                if sx == 0.0:
                    out[..., j] = 0.0
                    continue
                p_plus = _logistic(2.0 * b * vj / sx)
                out[..., j] = vj - np.where(uj < p_plus, b, -b)
            else:
                a, b = np.sqrt(sx), np.sqrt(sz)
                cands = [(xs, xs + zs) for xs in (-a, a) for zs in (-b, b)]
                hits = np.stack([np.abs(vj - tot) <= 1e-12 * (a + b + 1.0) for _, tot in cands])
                cum = np.cumsum(hits, axis=0)
                pick = np.floor(uj * cum[-1]).astype(int)
                choice = np.argmax(cum > pick, axis=0)
                out[..., j] = np.array([xs for xs, _ in cands])[choice]
        return out

    def uniforms_needed(self):
        s = self.obs_model.state_law.dim
        if self.matrix is not None:
            return s + (s & 1)
        return s

    @cached_property
    def posterior_covariance(self):
        Sx = self.obs_model.state_law.covariance
        K, H = self.matrix, self.obs_model.H
        P = Sx - K @ H @ Sx
        return 0.5 * (P + P.T)


def conditional_mean_gain(obs_model: ObservationModel) -> ConditionalMean:
    """``E[x | v]`` for one DM's observation: ``Sxv Svv^{-1}`` in the Gaussian case."""
    return ConditionalMean(obs_model)


def feature_moments(spec: TeamSpec, basis: Basis):
    """Moments ``(E[f f'], E[f x'])`` of the policy feature ``f`` (v or E[x|v])."""
    obs = spec.obs_model
    Sx = obs.state_law.covariance
    if basis is Basis.OBSERVATION:
        return obs.obs_covariance, obs.H @ Sx
    cm = spec.conditional_mean
    if cm.matrix is not None:
        K = cm.matrix
        return K @ obs.obs_covariance @ K.T, K @ obs.H @ Sx
    F = cm.second_moment
    # E[m x'] = E[m m'] by the tower property
    return F, F.copy()


def policy_features(spec: TeamSpec, basis: Basis, v):
    if basis is Basis.OBSERVATION:
        return v
    return spec.conditional_mean(v)


def stack_policies(spec: TeamSpec, N, policies):
    """Gains as an ``(N, action_dim, feature_dim)`` array plus their common basis."""
    if isinstance(policies, LinearPolicy):
        policies = [policies] * N
    policies = list(policies)
    if len(policies) == 1 and N > 1:
        policies = policies * N
    if len(policies) != N:
        raise ValueError(f"expected 1 or {N} policies, got {len(policies)}")
    basis = policies[0].basis
    if any(p.basis is not basis for p in policies):
        raise ValueError("policies mix observation and estimate bases")
    f = spec.obs_dim if basis is Basis.OBSERVATION else spec.state_dim
    gains = np.stack([p.gain for p in policies])
    if gains.shape[1:] != (spec.action_dim, f):
        raise ValueError(f"gain shape {gains.shape[1:]} does not match ({spec.action_dim}, {f})")
    if not np.all(np.isfinite(gains)):
        raise ValueError("policy gains must be finite")
    return gains, basis


def observation_gain(spec: TeamSpec, policy: LinearPolicy):
    """Equivalent observation-basis gain; only exists when E[x|v] is linear."""
    if policy.basis is Basis.OBSERVATION:
        return policy.gain
    cm = spec.conditional_mean
    if cm.matrix is None:
        raise ValueError("estimate-basis policy has no linear observation form for non-Gaussian laws")
    return policy.gain @ cm.matrix


# --- convenient constructors ----------------------------------------------


def scalar_state_coupled(R=1.0, Q=1.0, var_x=1.0, var_z=1.0, state_law=None, noise_law=None):
    obs = ObservationModel(
        ObservationKind.PRIVATE_IID,
        np.eye(1),
        state_law or NoiseLaw.gaussian(var_x),
        noise_law or NoiseLaw.gaussian(var_z),
    )
    return TeamSpec(1, 1, 1, Coupling.STATE, QuadraticCost(R, Q), obs)


def scalar_control_coupled(R=3.0, D=1.0, Q=1.0, H=1.0, var_x=1.0, var_z=1.0, cross_weight=1.0):
    obs = ObservationModel(ObservationKind.SHARED_STATE, H, NoiseLaw.gaussian(var_x), NoiseLaw.gaussian(var_z))
    return TeamSpec(1, 1, 1, Coupling.CONTROL, QuadraticCost(R, Q, D, cross_weight), obs)

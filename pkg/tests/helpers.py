"""Random valid instances shared by the property tests."""

import numpy as np

from mfteams.model import (
    Coupling,
    NoiseLaw,
    ObservationKind,
    ObservationModel,
    QuadraticCost,
    TeamSpec,
)


def spd(rng, d, floor=0.2):
    A = rng.normal(size=(d, d))
    return A @ A.T / d + floor * np.eye(d)


def psd(rng, d, rank=None):
    A = rng.normal(size=(d, rank or d))
    return A @ A.T / d


def sqrtm_spd(M):
    w, V = np.linalg.eigh(M)
    return (V * np.sqrt(w)) @ V.T


def random_state_coupled(rng, d=None):
    d = d or int(rng.integers(1, 4))
    obs = ObservationModel(
        ObservationKind.PRIVATE_IID,
        np.eye(d),
        NoiseLaw.gaussian(psd(rng, d)),
        NoiseLaw.gaussian(spd(rng, d)),
    )
    return TeamSpec(d, d, d, Coupling.STATE, QuadraticCost(spd(rng, d), psd(rng, d)), obs)


def random_control_coupled(rng, d=None, m=None, cross_weight=1.0):
    d = d or int(rng.integers(1, 4))
    m = m or int(rng.integers(1, 4))
    R = spd(rng, d, floor=0.5)
    W = psd(rng, d)
    W = W / max(1.0, np.linalg.eigvalsh(W).max())
    Rh = sqrtm_spd(R)
    D = 0.45 * Rh @ W @ Rh
    D = 0.5 * (D + D.T)
    obs = ObservationModel(
        ObservationKind.SHARED_STATE,
        rng.normal(size=(m, d)),
        NoiseLaw.gaussian(psd(rng, d) + 0.1 * np.eye(d)),
        NoiseLaw.gaussian(spd(rng, m)),
    )
    return TeamSpec(d, m, d, Coupling.CONTROL, QuadraticCost(R, psd(rng, d), D, cross_weight), obs)


def ex1_closed_form_gain(N, R=1.0, Q=1.0, sx=1.0, sz=1.0):
    """Minimizer of J_N(g) = R g^2 (sx+sz) + Q[(g-1-1/N)^2 sx + g^2 sz + (N-1) sx / N^2]."""
    a = (R + Q) * (sx + sz)
    b = -2.0 * Q * (1.0 + 1.0 / N) * sx
    return -b / (2.0 * a)


def ex1_cost(g, N, R=1.0, Q=1.0, sx=1.0, sz=1.0):
    return R * g * g * (sx + sz) + Q * ((g - 1 - 1 / N) ** 2 * sx + g * g * sz + (N - 1) * sx / N**2)

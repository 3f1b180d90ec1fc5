import numpy as np
import pytest

from mfteams import _fallback, kernels, rng

# Random123 known-answer vectors for philox4x32-10
KAT = [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF,) * 4, (0xFFFFFFFF, 0xFFFFFFFF), (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    (
        (0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344),
        (0xA4093822, 0x299F31D0),
        (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1),
    ),
]


@pytest.mark.parametrize("ctr, key, expected", KAT)
def test_philox_known_answers(backend, ctr, key, expected):
    out = kernels.philox4x32(np.array([ctr], dtype=np.uint32), *key)
    assert tuple(int(v) for v in out[0]) == expected


def test_uniforms_open_interval_and_shape(backend):
    u = rng.uniforms(1, rng.SCENARIO, np.arange(10), 7)
    assert u.shape == (10, 7)
    assert np.all((u > 0) & (u < 1))


def test_backends_agree_bitwise_on_uniforms():
    if len(kernels.available_backends()) < 2:
        pytest.skip("compiled kernels not built")
    streams = rng.stream_ids(rng.RESAMPLE, np.arange(300))
    prev = kernels.use_backend("python")
    try:
        a = kernels.philox_uniforms(123456789, streams, 33)
        kernels.use_backend("compiled")
        b = kernels.philox_uniforms(123456789, streams, 33)
    finally:
        kernels.use_backend(prev)
    assert np.array_equal(a, b)


def test_streams_are_independent_of_batch():
    a = rng.uniforms(9, rng.SCENARIO, np.arange(100), 12)
    b = rng.uniforms(9, rng.SCENARIO, np.arange(40, 60), 12)
    assert np.array_equal(a[40:60], b)
    c = rng.uniforms(9, rng.SCENARIO, [5], 20)
    assert np.array_equal(a[5], c[0, :12])


def test_purpose_tags_separate_streams():
    a = rng.uniforms(3, rng.SCENARIO, [0], 8)
    b = rng.uniforms(3, rng.RESAMPLE, [0], 8)
    assert not np.array_equal(a, b)
    with pytest.raises(ValueError):
        rng.stream_ids(rng.SCENARIO, [1 << 48])


def test_uniform_and_normal_moments():
    u = rng.uniforms(11, rng.BANK, np.arange(1000), 200).ravel()
    assert abs(u.mean() - 0.5) < 5 * np.sqrt(1 / 12 / u.size)
    z = rng.standard_normals(11, rng.BANK, np.arange(1000), 201)
    assert z.shape == (1000, 201)
    assert abs(z.mean()) < 5 / np.sqrt(z.size)
    assert abs(z.var() - 1.0) < 5 * np.sqrt(2 / z.size)


def _cost_inputs(seed):
    g = np.random.default_rng(seed)
    u = g.normal(size=(50, 7, 2))
    x = g.normal(size=(50, 7, 2))
    xs = g.normal(size=(50, 2))
    R = np.array([[2.0, 0.3], [0.3, 1.0]])
    Q = np.array([[1.0, -0.2], [-0.2, 0.5]])
    D = np.array([[0.3, 0.1], [0.1, 0.2]])
    return u, x, xs, R, Q, D


def test_state_cost_kernel_against_direct_formula(backend):
    u, x, _, R, Q, _ = _cost_inputs(1)
    e = u - x - x.mean(axis=1, keepdims=True)
    direct = (np.einsum("sni,ij,snj->sn", u, R, u) + np.einsum("sni,ij,snj->sn", e, Q, e)).mean(axis=1)
    np.testing.assert_allclose(kernels.state_coupled_costs(u, x, R, Q), direct, rtol=1e-13)


@pytest.mark.parametrize("kappa", [0.0, 1.0, 2.0])
def test_control_cost_kernel_against_direct_formula(backend, kappa):
    u, _, x, R, Q, D = _cost_inputs(2)
    N = u.shape[1]
    ubar = u.mean(axis=1)
    y = x + ubar
    # per-scenario cost: (1/N)[sum_i u_i'Ru_i - 2 sum_i u_i'D y + y'Qy] with y = x + mean u
    printed = (
        np.einsum("sni,ij,snj->s", u, R, u)
        - 2 * np.einsum("sni,ij,sj->s", u, D, y)
        + np.einsum("si,ij,sj->s", y, Q, y)
    ) / N
    # cross_weight reweights the off-diagonal action-action D coupling; 2 leaves it untouched
    off = np.einsum("si,ij,sj->s", ubar, D, ubar) * N * N - np.einsum("sni,ij,snj->s", u, D, u)
    expected = printed + (2.0 - kappa) * off / N**2
    np.testing.assert_allclose(kernels.control_coupled_costs(u, x, R, D, Q, kappa), expected, rtol=1e-12, atol=1e-13)


def test_fallback_matches_compiled_costs():
    if len(kernels.available_backends()) < 2:
        pytest.skip("compiled kernels not built")
    u, x, xs, R, Q, D = _cost_inputs(3)
    from mfteams import _kernels

    np.testing.assert_allclose(_fallback.state_coupled_costs(u, x, R, Q), _kernels.state_coupled_costs(u, x, R, Q), rtol=1e-13)
    np.testing.assert_allclose(
        _fallback.control_coupled_costs(u, xs, R, D, Q, 1.0), _kernels.control_coupled_costs(u, xs, R, D, Q, 1.0), rtol=1e-13
    )


def test_use_backend_rejects_unknown():
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")

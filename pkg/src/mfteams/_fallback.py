"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_TWO_M53 = 1.0 / 9007199254740992.0


def _rounds(c0, c1, c2, c3, k0, k1):
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> _S32) ^ c1 ^ np.uint64(k0),
            p1 & _MASK,
            (p0 >> _S32) ^ c3 ^ np.uint64(k1),
            p0 & _MASK,
        )
        k0 = (k0 + _W0) & 0xFFFFFFFF
        k1 = (k1 + _W1) & 0xFFFFFFFF
    return c0, c1, c2, c3


def philox4x32(counters, k0, k1):
    counters = np.asarray(counters, dtype=np.uint32).astype(np.uint64)
    out = _rounds(counters[:, 0], counters[:, 1], counters[:, 2], counters[:, 3], int(k0), int(k1))
    return np.stack(out, axis=1).astype(np.uint32)


def philox_uniforms(seed, streams, n_draws):
    seed = int(seed)
    streams = np.asarray(streams, dtype=np.uint64)
    n_blocks = (n_draws + 1) // 2
    blocks = np.arange(n_blocks, dtype=np.uint64)
    c0 = np.broadcast_to(blocks & _MASK, (streams.size, n_blocks))
    c1 = np.broadcast_to(blocks >> _S32, (streams.size, n_blocks))
    c2 = np.broadcast_to((streams & _MASK)[:, None], (streams.size, n_blocks))
    c3 = np.broadcast_to((streams >> _S32)[:, None], (streams.size, n_blocks))
    r0, r1, r2, r3 = _rounds(c0, c1, c2, c3, seed & 0xFFFFFFFF, seed >> 32)
    w0 = (r1 << _S32) | r0
    w1 = (r3 << _S32) | r2
    out = np.empty((streams.size, 2 * n_blocks), dtype=np.float64)
    out[:, 0::2] = ((w0 >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53
    out[:, 1::2] = ((w1 >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53
    return np.ascontiguousarray(out[:, :n_draws])


def _quad(a, M, b):
    # sum_{p,q} a[..., p] M[p, q] b[..., q] with a fixed elementwise order
    n = M.shape[0]
    acc = np.zeros(a.shape[:-1])
    for p in range(n):
        for q in range(n):
            acc = acc + a[..., p] * M[p, q] * b[..., q]
    return acc


def state_coupled_costs(u, x, R, Q):
    mean = x.mean(axis=1, keepdims=True)
    e = u - x - mean
    return (_quad(u, R, u) + _quad(e, Q, e)).mean(axis=1)


def control_coupled_costs(u, x, R, D, Q, cross_weight):
    N = u.shape[1]
    ubar = u.mean(axis=1)
    y = x + ubar
    uru = _quad(u, R, u).sum(axis=1)
    udu = _quad(u, D, u).sum(axis=1)
    udy = _quad(ubar, D, y)
    yqy = _quad(y, Q, y)
    bdb = _quad(ubar, D, ubar)
    return (uru - 2.0 * N * udy + yqy) / N + (2.0 - cross_weight) * (N * N * bdb - udu) / (N * N)

# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: Philox4x32-10 uniforms and per-scenario team costs.

Every function here has a numpy twin in ``_fallback.py`` with the same
signature.  The Philox kernel is bit-identical to its twin; the cost kernels
agree to rounding.
"""
import numpy as np

from libc.stdint cimport uint32_t, uint64_t

cdef uint32_t PHILOX_M0 = 0xD2511F53u
cdef uint32_t PHILOX_M1 = 0xCD9E8D57u
cdef uint32_t PHILOX_W0 = 0x9E3779B9u
cdef uint32_t PHILOX_W1 = 0xBB67AE85u
cdef double TWO_M53 = 1.0 / 9007199254740992.0


cdef inline void _philox_block(uint32_t* c, uint32_t k0, uint32_t k1) noexcept nogil:
    cdef uint64_t p0, p1
    cdef uint32_t c0 = c[0], c1 = c[1], c2 = c[2], c3 = c[3]
    cdef uint32_t n0, n2
    cdef int r
    for r in range(10):
        p0 = <uint64_t>PHILOX_M0 * c0
        p1 = <uint64_t>PHILOX_M1 * c2
        n0 = <uint32_t>(p1 >> 32) ^ c1 ^ k0
        n2 = <uint32_t>(p0 >> 32) ^ c3 ^ k1
        c1 = <uint32_t>p1
        c3 = <uint32_t>p0
        c0 = n0
        c2 = n2
        k0 = k0 + PHILOX_W0
        k1 = k1 + PHILOX_W1
    c[0] = c0
    c[1] = c1
    c[2] = c2
    c[3] = c3


def philox4x32(const uint32_t[:, ::1] counters, uint32_t k0, uint32_t k1):
    """Raw Philox4x32-10 bijection applied row-wise to ``counters`` (n, 4)."""
    cdef Py_ssize_t n = counters.shape[0], i
    out = np.empty((n, 4), dtype=np.uint32)
    cdef uint32_t[:, ::1] o = out
    cdef uint32_t c[4]
    with nogil:
        for i in range(n):
            c[0] = counters[i, 0]
            c[1] = counters[i, 1]
            c[2] = counters[i, 2]
            c[3] = counters[i, 3]
            _philox_block(c, k0, k1)
            o[i, 0] = c[0]
            o[i, 1] = c[1]
            o[i, 2] = c[2]
            o[i, 3] = c[3]
    return out


def philox_uniforms(uint64_t seed, const uint64_t[::1] streams, Py_ssize_t n_draws):
    """Uniforms in (0, 1); row ``r`` is the stream ``(seed, streams[r])``."""
    cdef Py_ssize_t n_streams = streams.shape[0]
    out = np.empty((n_streams, n_draws), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef uint32_t k0 = <uint32_t>(seed & 0xFFFFFFFFu)
    cdef uint32_t k1 = <uint32_t>(seed >> 32)
    cdef uint32_t c[4]
    cdef Py_ssize_t s, b, j
    cdef Py_ssize_t n_blocks = (n_draws + 1) // 2
    cdef uint64_t sid, w0, w1
    with nogil:
        for s in range(n_streams):
            sid = streams[s]
            for b in range(n_blocks):
                c[0] = <uint32_t>(<uint64_t>b & 0xFFFFFFFFu)
                c[1] = <uint32_t>(<uint64_t>b >> 32)
                c[2] = <uint32_t>(sid & 0xFFFFFFFFu)
                c[3] = <uint32_t>(sid >> 32)
                _philox_block(c, k0, k1)
                w0 = ((<uint64_t>c[1]) << 32) | c[0]
                w1 = ((<uint64_t>c[3]) << 32) | c[2]
                j = 2 * b
                o[s, j] = (<double>(w0 >> 11) + 0.5) * TWO_M53
                if j + 1 < n_draws:
                    o[s, j + 1] = (<double>(w1 >> 11) + 0.5) * TWO_M53
    return out


def state_coupled_costs(const double[:, :, ::1] u, const double[:, :, ::1] x,
                        const double[:, ::1] R, const double[:, ::1] Q):
    """Per-scenario ``(1/N) sum_i u_i'R u_i + e_i'Q e_i`` with ``e_i = u_i - x_i - mean(x)``."""
    cdef Py_ssize_t S = u.shape[0], N = u.shape[1], n = u.shape[2]
    cdef Py_ssize_t s, i, a, b
    out = np.empty(S, dtype=np.float64)
    cdef double[::1] o = out
    cdef double[::1] mean = np.empty(n, dtype=np.float64)
    cdef double[::1] e = np.empty(n, dtype=np.float64)
    cdef double acc, quad
    with nogil:
        for s in range(S):
            for a in range(n):
                mean[a] = 0.0
            for i in range(N):
                for a in range(n):
                    mean[a] += x[s, i, a]
            for a in range(n):
                mean[a] /= N
            acc = 0.0
            for i in range(N):
                for a in range(n):
                    e[a] = u[s, i, a] - x[s, i, a] - mean[a]
                quad = 0.0
                for a in range(n):
                    for b in range(n):
                        quad += u[s, i, a] * R[a, b] * u[s, i, b] + e[a] * Q[a, b] * e[b]
                acc += quad
            o[s] = acc / N
    return out


def control_coupled_costs(const double[:, :, ::1] u, const double[:, ::1] x,
                          const double[:, ::1] R, const double[:, ::1] D, const double[:, ::1] Q,
                          double cross_weight):
    """Per-scenario control-coupled cost; see ``_fallback.control_coupled_costs``."""
    cdef Py_ssize_t S = u.shape[0], N = u.shape[1], n = u.shape[2]
    cdef Py_ssize_t s, i, a, b
    out = np.empty(S, dtype=np.float64)
    cdef double[::1] o = out
    cdef double[::1] ubar = np.empty(n, dtype=np.float64)
    cdef double[::1] y = np.empty(n, dtype=np.float64)
    cdef double uru, udu, udy, yqy, bdb
    with nogil:
        for s in range(S):
            for a in range(n):
                ubar[a] = 0.0
            uru = 0.0
            udu = 0.0
            for i in range(N):
                for a in range(n):
                    ubar[a] += u[s, i, a]
                    for b in range(n):
                        uru += u[s, i, a] * R[a, b] * u[s, i, b]
                        udu += u[s, i, a] * D[a, b] * u[s, i, b]
            for a in range(n):
                ubar[a] /= N
                y[a] = x[s, a] + ubar[a]
            udy = 0.0
            yqy = 0.0
            bdb = 0.0
            for a in range(n):
                for b in range(n):
                    udy += ubar[a] * D[a, b] * y[b]
                    yqy += y[a] * Q[a, b] * y[b]
                    bdb += ubar[a] * D[a, b] * ubar[b]
            o[s] = (uru - 2.0 * N * udy + yqy) / N + (2.0 - cross_weight) * (N * N * bdb - udu) / (<double>N * N)
    return out

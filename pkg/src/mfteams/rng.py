"""Counter-based random streams.

A stream is addressed by ``(seed, stream_id)``; the Philox counter carries the
stream id in its upper 64 bits and the block index in its lower 64 bits, so
any stream can be regenerated without touching the others.  Stream ids carry
a purpose tag in bits 48-63 to keep unrelated draws (scenarios, conditional
resampling, reference samples, ...) apart.
"""

import numpy as np

from . import kernels

SCENARIO = 0
RESAMPLE = 1
REFERENCE = 2
BANK = 3
CHAIN = 4

_TAG_SHIFT = 48


def stream_ids(purpose, indices):
    indices = np.asarray(indices, dtype=np.uint64)
    if indices.size and int(indices.max()) >= 1 << _TAG_SHIFT:
        raise ValueError("stream index exceeds 48 bits")
    return indices | np.uint64(purpose << _TAG_SHIFT)


def uniforms(seed, purpose, indices, n_draws):
    """(len(indices), n_draws) uniforms in the open interval (0, 1)."""
    return kernels.philox_uniforms(seed, stream_ids(purpose, indices), n_draws)


def normals_from_uniforms(u):
    """Box-Muller on consecutive uniform pairs; ``u.shape[-1]`` must be even."""
    u1 = u[..., 0::2]
    u2 = u[..., 1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    out = np.empty(u.shape)
    out[..., 0::2] = r * np.cos(theta)
    out[..., 1::2] = r * np.sin(theta)
    return out


def uniforms_needed(n_normals):
    return n_normals + (n_normals & 1)


def standard_normals(seed, purpose, indices, n):
    u = uniforms(seed, purpose, indices, uniforms_needed(n))
    return normals_from_uniforms(u)[:, :n]

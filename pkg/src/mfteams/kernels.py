"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy fallback.
``use_backend`` switches explicitly (benchmarks and cross-backend tests).
"""

from types import ModuleType

import numpy as np

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = ("compiled", "python")

_active: ModuleType = _compiled if _compiled is not None else _fallback


def available_backends():
    return tuple(b for b in BACKENDS if b == "python" or _compiled is not None)


def backend_name():
    return "compiled" if _active is _compiled else "python"


def use_backend(name):
    """Select ``"compiled"`` or ``"python"``; returns the previous name."""
    global _active
    previous = backend_name()
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        _active = _compiled
    elif name == "python":
        _active = _fallback
    else:
        raise ValueError(f"unknown backend {name!r}; expected one of {BACKENDS}")
    return previous


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def philox4x32(counters, k0, k1):
    return _active.philox4x32(np.ascontiguousarray(counters, dtype=np.uint32), int(k0), int(k1))


def philox_uniforms(seed, streams, n_draws):
    streams = np.ascontiguousarray(streams, dtype=np.uint64)
    return _active.philox_uniforms(int(seed), streams, int(n_draws))


def state_coupled_costs(u, x, R, Q):
    return _active.state_coupled_costs(_f64(u), _f64(x), _f64(R), _f64(Q))


def control_coupled_costs(u, x, R, D, Q, cross_weight):
    return _active.control_coupled_costs(_f64(u), _f64(x), _f64(R), _f64(D), _f64(Q), float(cross_weight))

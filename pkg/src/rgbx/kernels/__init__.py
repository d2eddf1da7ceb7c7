"""Hot numeric kernels with a numba lane and a pure-numpy fallback.

The backend is picked once at import time from the ``RGBX_KERNELS``
environment variable: ``numba`` forces the jitted lane (raises if numba is
missing), ``numpy`` forces the fallback, ``auto`` (default) uses numba when
importable. Both lanes produce bit-identical results: the numba kernels
perform the same arithmetic in the same order, and all contractions stay in
BLAS either way. ``set_backend`` exists for tests and the benchmark script.
"""

from __future__ import annotations

import os

from rgbx.errors import ConfigError
from rgbx.kernels import numpy_impl

_BACKENDS = ("auto", "numba", "numpy")

_impl = numpy_impl
_name = "numpy"


def _load_numba_impl():
    from rgbx.kernels import numba_impl  # deferred so a missing numba never breaks import

    return numba_impl


def set_backend(name: str) -> str:
    """Select the kernel backend; returns the resolved backend name."""
    global _impl, _name
    if name not in _BACKENDS:
        raise ConfigError(f"unknown kernel backend {name!r}; expected one of {_BACKENDS}")
    if name == "numpy":
        _impl, _name = numpy_impl, "numpy"
    elif name == "numba":
        _impl, _name = _load_numba_impl(), "numba"
    else:
        try:
            _impl, _name = _load_numba_impl(), "numba"
        except ImportError:
            _impl, _name = numpy_impl, "numpy"
    return _name


def active_backend() -> str:
    return _name


def im2col(x, k, stride, pad):
    return _impl.im2col(x, k, stride, pad)


def col2im(cols, x_shape, k, stride, pad):
    return _impl.col2im(cols, x_shape, k, stride, pad)


def blur5(x):
    return _impl.blur5(x)


def adam_update(p, g, m, v, lr, beta1, beta2, eps, step):
    """In-place Adam step on p with state (m, v); step counts from 1."""
    dt = p.dtype.type
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    return _impl.adam_update(
        p, g, m, v, dt(lr), dt(beta1), dt(beta2), dt(eps), dt(c1), dt(c2)
    )


set_backend(os.environ.get("RGBX_KERNELS", "auto"))

"""Backend selection for the hot kernels.

The compiled extension is used when it imports; set ``ERGOKIT_PURE=1`` to
force the numpy fallback. ``use_backend`` switches temporarily, which the
test-suite uses to check that both backends agree.
"""

from __future__ import annotations

import contextlib
import os

from . import _kernels_py

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _kernels_py}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels

BACKEND = "python" if os.environ.get("ERGOKIT_PURE") or _ckernels is None else "cython"
_impl = _BACKENDS[BACKEND]


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def set_backend(name: str) -> None:
    global BACKEND, _impl
    if name not in _BACKENDS:
        raise ValueError(f"unknown or unavailable backend {name!r}")
    BACKEND, _impl = name, _BACKENDS[name]


@contextlib.contextmanager
def use_backend(name: str):
    previous = BACKEND
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def window_sums(a, N):
    return _impl.window_sums(a, int(N))


def diag_project(fib, sig, N):
    return _impl.diag_project(fib, sig, int(N))


def multiple_average(stack, N):
    return _impl.multiple_average(stack, int(N))


def shift_correlations(g, h, shifts):
    return _impl.shift_correlations(g, h, shifts)

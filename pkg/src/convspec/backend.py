"""Selects the hot-kernel implementation.

The environment variable CONVSPEC_BACKEND controls the choice:

    auto   (default) use numba when importable, else pure numpy
    numba  require the @njit kernels, fail if numba is missing
    numpy  force the pure-numpy kernels

Everything outside this module imports the kernels from here, so a run is
pinned to a single backend for its whole lifetime.
"""

import os

_MODE = os.environ.get("CONVSPEC_BACKEND", "auto").strip().lower()
if _MODE not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"CONVSPEC_BACKEND must be 'auto', 'numba' or 'numpy', got {_MODE!r}"
    )

if _MODE == "numpy":
    from . import _kernels_numpy as _impl

    ACTIVE_BACKEND = "numpy"
else:
    try:
        from . import _kernels_numba as _impl

        ACTIVE_BACKEND = "numba"
    except ImportError:
        if _MODE == "numba":
            raise
        from . import _kernels_numpy as _impl

        ACTIVE_BACKEND = "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_input_grad = _impl.conv2d_input_grad
conv2d_weight_grad = _impl.conv2d_weight_grad
jacobi_sweeps = _impl.jacobi_sweeps


def active_backend():
    """Name of the kernel backend in use ('numba' or 'numpy')."""
    return ACTIVE_BACKEND

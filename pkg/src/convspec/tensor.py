"""Dense-array substrate: shape-checked products, 2-D DFT, norms, seeded RNG.

Real tensors are float64 ndarrays, complex matrices are complex128
ndarrays; everything downstream relies on 64-bit precision (the gradient
checks need 1e-4 relative error, out of reach in 32-bit).
"""

import numpy as np

from .errors import DimensionError

__all__ = [
    "as_real_tensor",
    "as_complex_matrix",
    "assert_finite",
    "matmul",
    "fft2",
    "ifft2",
    "l2_norm",
    "make_rng",
    "spawn_rngs",
]


def as_real_tensor(data):
    """float64 ndarray of the given data; rejects non-finite entries."""
    t = np.asarray(data, dtype=np.float64)
    assert_finite(t, "real tensor")
    return t


def as_complex_matrix(data):
    """complex128 2-D ndarray of the given data; rejects non-finite entries."""
    m = np.asarray(data, dtype=np.complex128)
    if m.ndim != 2:
        raise DimensionError(f"expected a matrix, got ndim={m.ndim}")
    assert_finite(m, "complex matrix")
    return m


def assert_finite(arr, what="array"):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{what} contains non-finite entries")
    return arr


def matmul(a, b):
    """Shape-checked matrix product with a finite-output guarantee."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("matmul operands must be matrices")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul shape mismatch: {a.shape} x {b.shape}"
        )
    out = a @ b
    assert_finite(out, "matmul result")
    return out


def fft2(plane):
    """2-D DFT of a square plane, (F)_{uv} = sum_{pq} x_{pq} e^{-2pi i(up+vq)/n}."""
    plane = np.asarray(plane)
    if plane.ndim != 2 or plane.shape[0] != plane.shape[1]:
        raise DimensionError(f"fft2 needs a square plane, got {plane.shape}")
    return np.fft.fft2(plane)


def ifft2(plane):
    """Inverse of fft2 (round-trips to the input within 1e-10)."""
    plane = np.asarray(plane)
    if plane.ndim != 2 or plane.shape[0] != plane.shape[1]:
        raise DimensionError(f"ifft2 needs a square plane, got {plane.shape}")
    return np.fft.ifft2(plane)


def l2_norm(t):
    """Euclidean norm over all entries; 0 only for the zero tensor."""
    return float(np.linalg.norm(np.asarray(t).ravel()))


def make_rng(seed):
    """Seeded generator; identical seed gives a bit-identical stream."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def spawn_rngs(seed, n):
    """n independent child generators derived deterministically from seed."""
    seqs = np.random.SeedSequence(int(seed)).spawn(n)
    return [np.random.Generator(np.random.PCG64(s)) for s in seqs]

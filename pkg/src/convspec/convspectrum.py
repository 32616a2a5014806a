"""Spectrum of a multi-channel 2-D convolution operator, without SVD of the
operator itself.

A kernel K (k,k,d,c) acting circularly on an n x n grid block-diagonalizes
in the 2-D Fourier basis into n^2 frequency slices P^(u,v) of shape (d,c),
P^(u,v)_{ij} = F_n(K[:,:,i,j])_{uv}. The operator's singular values are the
union of the slices' singular values, so both reading the spectrum and
pinning it to a target value reduce to per-slice work.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, InputError, SizeError
from .spectral import procrustes_project, procrustes_project_batch, singular_values
from .tensor import assert_finite

MAX_MATERIALIZED_DIM = 512
# relative threshold separating reported "nonzero" singular values
NONZERO_REL_TOL = 1e-9


@dataclass
class Kernel4:
    """Rank-4 convolution kernel: weights (k,k,d,c) =
    (spatial row, spatial col, out-channel, in-channel)."""

    k: int
    d: int
    c: int
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if min(self.k, self.d, self.c) < 1:
            raise SizeError("kernel dims must be >= 1")
        if self.weights.shape != (self.k, self.k, self.d, self.c):
            raise SizeError(
                f"weights shape {self.weights.shape} does not match "
                f"(k,k,d,c)=({self.k},{self.k},{self.d},{self.c})"
            )
        assert_finite(self.weights, "kernel weights")


@dataclass
class FreqSliceSet:
    """n x n grid of d x c complex slices, stored as one (n,n,d,c) array."""

    n: int
    d: int
    c: int
    slices: np.ndarray

    def slice_at(self, u, v):
        return self.slices[u, v]


@dataclass
class SpectrumReport:
    """Full singular-value multiset (n^2 * min(d,c) values, descending)."""

    singular_values: np.ndarray
    sigma_max: float
    sigma_min_nonzero: float
    condition_number: float
    n: int = 0
    d: int = 0
    c: int = 0

    def to_dict(self):
        return {
            "n": self.n,
            "d": self.d,
            "c": self.c,
            "sigma_max": self.sigma_max,
            "sigma_min_nonzero": self.sigma_min_nonzero,
            "condition_number": self.condition_number,
            "singular_values": [float(s) for s in self.singular_values],
        }


def kernel_fft_slices(kernel, n):
    """Zero-pad each channel pair's k x k plane to n x n and DFT it.

    Inverse of slices_to_kernel when the support fits in k x k.
    """
    if n < kernel.k:
        raise SizeError(f"transform size n={n} smaller than kernel k={kernel.k}")
    padded = np.zeros((n, n, kernel.d, kernel.c), dtype=np.float64)
    padded[: kernel.k, : kernel.k] = kernel.weights
    slices = np.fft.fft2(padded, axes=(0, 1))
    return FreqSliceSet(n=n, d=kernel.d, c=kernel.c, slices=slices)


def slices_to_kernel(slice_set, k=None, imag_tol=1e-8):
    """Inverse 2-D DFT of every channel pair, truncated to k x k support.

    For conjugate-symmetric slice sets (any set produced from a real
    kernel, before or after projection) the inverse transform is real up
    to rounding; the imaginary part is checked against imag_tol and
    dropped. k=None keeps the full n x n support.
    """
    n = slice_set.n
    if k is None:
        k = n
    if k > n:
        raise SizeError(f"truncation size k={k} exceeds transform size n={n}")
    planes = np.fft.ifft2(slice_set.slices, axes=(0, 1))
    scale = max(float(np.abs(planes).max()), 1.0)
    if float(np.abs(planes.imag).max()) > imag_tol * scale:
        raise FloatingPointError(
            "inverse transform is not real: slice set lost conjugate symmetry"
        )
    w = planes.real[:k, :k]
    return Kernel4(k=k, d=slice_set.d, c=slice_set.c, weights=np.ascontiguousarray(w))


def _report_from_values(values, n, d, c):
    values = np.sort(values, kind="stable")[::-1]
    sigma_max = float(values[0]) if values.size else 0.0
    nz = values[values > NONZERO_REL_TOL * max(sigma_max, 1e-300)]
    sigma_min_nz = float(nz[-1]) if nz.size else 0.0
    cond = sigma_max / sigma_min_nz if sigma_min_nz > 0 else float("inf")
    return SpectrumReport(
        singular_values=np.ascontiguousarray(values),
        sigma_max=sigma_max,
        sigma_min_nonzero=sigma_min_nz,
        condition_number=cond,
        n=n,
        d=d,
        c=c,
    )


def conv_singular_values(kernel, n):
    """Singular-value multiset of the circular conv operator at size n.

    Concatenates the per-slice SVDs in (u,v)-lexicographic order, then
    sorts, so the result is independent of any per-slice parallelism.
    """
    slice_set = kernel_fft_slices(kernel, n)
    per_slice = min(kernel.d, kernel.c)
    values = np.empty(n * n * per_slice, dtype=np.float64)
    pos = 0
    for u in range(n):
        for v in range(n):
            values[pos : pos + per_slice] = singular_values(slice_set.slices[u, v])
            pos += per_slice
    return _report_from_values(values, n, kernel.d, kernel.c)


def spectrum_of_slices(slice_set):
    """SpectrumReport computed directly from an existing slice set."""
    per_slice = min(slice_set.d, slice_set.c)
    n = slice_set.n
    values = np.empty(n * n * per_slice, dtype=np.float64)
    pos = 0
    for u in range(n):
        for v in range(n):
            values[pos : pos + per_slice] = singular_values(slice_set.slices[u, v])
            pos += per_slice
    return _report_from_values(values, n, slice_set.d, slice_set.c)


def target_sigma(d, c, relu_corrected=False):
    """Norm-preserving singular value sqrt(d/min(d,c)); with the ReLU
    correction the factor sqrt(2) compensates the half of the gradient
    energy an adjacent ReLU zeroes out on average."""
    if d < 1 or c < 1:
        raise SizeError("channel counts must be >= 1")
    base = d / min(d, c)
    if relu_corrected:
        base *= 2.0
    return float(np.sqrt(base))


def project_slices(slice_set, sigma_target, max_iters=30, tol=1e-7):
    """Procrustes-project every frequency slice to the target value.

    Returns (FreqSliceSet, iterations): the iteration count is what the
    slowest slice's Newton-Schulz needed.
    """
    n, d, c = slice_set.n, slice_set.d, slice_set.c
    flat = slice_set.slices.reshape(n * n, d, c)
    try:
        out, iters = procrustes_project_batch(
            flat, sigma_target, max_iters=max_iters, tol=tol
        )
    except ConvergenceError as exc:
        raise ConvergenceError(
            f"Newton-Schulz failed while projecting frequency slices: {exc}",
            residual=exc.residual,
            iterations=exc.iterations,
        ) from exc
    return (
        FreqSliceSet(n=n, d=d, c=c, slices=out.reshape(n, n, d, c)),
        iters,
    )


@dataclass
class ProjectionReport:
    """project_kernel diagnostics: the same-size truncated kernel plus the
    pre-truncation kernel (full n x n support) and spectrum deviations."""

    kernel: Kernel4
    pre_truncation: Kernel4
    sigma_target: float
    newton_schulz_iterations: int = 0
    pre_truncation_max_dev: float = 0.0
    post_truncation_max_dev: float = 0.0
    post_truncation_spectrum: SpectrumReport | None = field(default=None)


def project_kernel(kernel, n, sigma_target, max_iters=30, tol=1e-7):
    """Set all nonzero singular values of the conv operator to sigma_target.

    Transform to frequency slices, project each slice, inverse-transform,
    truncate back to the original k x k support so the layer shape is
    unchanged. The spectrum statement (all nonzero values within 1e-4 of
    sigma_target) holds for the pre-truncation kernel; use
    project_kernel_detailed to read the post-truncation deviation.
    """
    return project_kernel_detailed(kernel, n, sigma_target, max_iters, tol).kernel


def project_kernel_detailed(kernel, n, sigma_target, max_iters=30, tol=1e-7,
                            with_spectra=False):
    if n < kernel.k:
        raise SizeError(f"transform size n={n} smaller than kernel k={kernel.k}")
    if kernel.k == 1:
        # every frequency slice equals K[0,0], so one projection serves all
        # of them and the inverse transform has exact 1x1 support
        flat = kernel.weights[0, 0].astype(np.complex128)[None]
        out, iters = procrustes_project_batch(
            flat, sigma_target, max_iters=max_iters, tol=tol
        )
        w = np.ascontiguousarray(out[0].real[None, None])
        truncated = Kernel4(k=1, d=kernel.d, c=kernel.c, weights=w)
        report = ProjectionReport(
            kernel=truncated, pre_truncation=truncated,
            sigma_target=sigma_target, newton_schulz_iterations=iters,
        )
        if with_spectra:
            post = conv_singular_values(truncated, n)
            nz = post.singular_values[
                post.singular_values > NONZERO_REL_TOL * max(post.sigma_max, 1e-300)
            ]
            dev = float(np.abs(nz - sigma_target).max()) if nz.size else 0.0
            report.pre_truncation_max_dev = dev
            report.post_truncation_max_dev = dev
            report.post_truncation_spectrum = post
        return report
    slice_set = kernel_fft_slices(kernel, n)
    projected, iters = project_slices(slice_set, sigma_target, max_iters, tol)
    full = slices_to_kernel(projected, k=None)
    truncated = Kernel4(
        k=kernel.k, d=kernel.d, c=kernel.c,
        weights=np.ascontiguousarray(full.weights[: kernel.k, : kernel.k]),
    )
    report = ProjectionReport(
        kernel=truncated, pre_truncation=full, sigma_target=sigma_target,
        newton_schulz_iterations=iters,
    )
    if with_spectra:
        pre = spectrum_of_slices(projected)
        nz = pre.singular_values[
            pre.singular_values > NONZERO_REL_TOL * max(pre.sigma_max, 1e-300)
        ]
        report.pre_truncation_max_dev = (
            float(np.abs(nz - sigma_target).max()) if nz.size else 0.0
        )
        post = conv_singular_values(truncated, n)
        nz_post = post.singular_values[
            post.singular_values > NONZERO_REL_TOL * max(post.sigma_max, 1e-300)
        ]
        report.post_truncation_max_dev = (
            float(np.abs(nz_post - sigma_target).max()) if nz_post.size else 0.0
        )
        report.post_truncation_spectrum = post
    return report


def materialize_conv_operator(kernel, n):
    """Explicit doubly-block-circulant matrix of circular convolution.

    Output index (i*n*n + p*n + q), input index (j*n*n + pp*n + qq):
    y_i[p,q] = sum_{j,a,b} K[a,b,i,j] x_j[(p-a) mod n, (q-b) mod n].
    Test-scale oracle only (n^2 * max(d,c) <= 512).
    """
    if n < kernel.k:
        raise SizeError(f"n={n} smaller than kernel k={kernel.k}")
    if n * n * max(kernel.d, kernel.c) > MAX_MATERIALIZED_DIM:
        raise SizeError(
            f"materialized operator would exceed {MAX_MATERIALIZED_DIM} rows/cols"
        )
    d, c, k = kernel.d, kernel.c, kernel.k
    op = np.zeros((n * n * d, n * n * c), dtype=np.float64)
    for i in range(d):
        for j in range(c):
            for p in range(n):
                for q in range(n):
                    row = i * n * n + p * n + q
                    for a in range(k):
                        pp = (p - a) % n
                        for b in range(k):
                            qq = (q - b) % n
                            op[row, j * n * n + pp * n + qq] += kernel.weights[a, b, i, j]
    return op


def save_kernel(kernel, path):
    """Write the JSON kernel document {k, d, c, weights row-major (k,k,d,c)}."""
    doc = {
        "k": kernel.k,
        "d": kernel.d,
        "c": kernel.c,
        "weights": [float(w) for w in kernel.weights.ravel()],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_kernel(path):
    """Read a kernel document; parse failures carry the byte offset."""
    with open(path, "r") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(
            f"{path}: invalid kernel file at byte offset {exc.pos}: {exc.msg}",
            offset=exc.pos,
        ) from exc
    try:
        k, d, c = int(doc["k"]), int(doc["d"]), int(doc["c"])
        weights = np.asarray(doc["weights"], dtype=np.float64).reshape(k, k, d, c)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: malformed kernel document: {exc}") from exc
    return Kernel4(k=k, d=d, c=c, weights=weights)

"""convspec: SVD-free spectra of convolution operators, Procrustes spectrum
projection via Newton-Schulz, and an instrumented residual-network trainer
that records per-block gradient-norm ratios."""

from .backend import active_backend
from .convspectrum import (
    FreqSliceSet,
    Kernel4,
    ProjectionReport,
    SpectrumReport,
    conv_singular_values,
    kernel_fft_slices,
    load_kernel,
    materialize_conv_operator,
    project_kernel,
    project_kernel_detailed,
    save_kernel,
    slices_to_kernel,
    target_sigma,
)
from .probe import (
    BoundParams,
    RatioRecord,
    corollary1_delta,
    linear_residual_experiment,
    record_ratios,
    theorem2_delta,
    write_ratio_csv,
)
from .spectral import (
    NewtonSchulzState,
    SvdResult,
    lemma1_bounds,
    newton_schulz_inv_sqrt,
    procrustes_project,
    procrustes_project_batch,
    singular_values,
    svd_small,
)
from .tensor import fft2, ifft2, l2_norm, make_rng, matmul, spawn_rngs

__version__ = "0.1.0"

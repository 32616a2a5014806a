"""Small-matrix spectral primitives.

svd_small is the hand-rolled one-sided Jacobi oracle used to verify the
SVD-free paths; newton_schulz_inv_sqrt and procrustes_project are the
multiplication-only projection machinery; lemma1_bounds gives the
singular-value sandwich of I + M.
"""

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import ConvergenceError, DimensionError, SizeError

MAX_SVD_DIM = 256
_JACOBI_EPS = 1e-13
_JACOBI_MAX_SWEEPS = 64
# relative regularization of P^H P before inversion; singular values below
# about sqrt(eps)*sigma_target get pushed toward zero instead of sigma_target
PROCRUSTES_EPS = 1e-7


@dataclass
class SvdResult:
    """Compact SVD: u (m,r), descending singular_values (r,), v (n,r)."""

    u: np.ndarray
    singular_values: np.ndarray
    v: np.ndarray

    def reconstruct(self):
        return (self.u * self.singular_values) @ self.v.conj().T


@dataclass
class NewtonSchulzState:
    """Snapshot of one coupled iteration (residual is ||Z A Z - I||_F)."""

    iteration: int
    residual: float


def _jacobi(m, want_vectors):
    rows, cols = m.shape
    at = np.ascontiguousarray(m.T.astype(np.complex128, copy=True))
    vt = np.eye(cols, dtype=np.complex128)
    sweeps = backend.jacobi_sweeps(
        at, vt, want_vectors, _JACOBI_EPS, _JACOBI_MAX_SWEEPS
    )
    if sweeps < 0:
        raise ConvergenceError(
            f"Jacobi SVD did not converge within {_JACOBI_MAX_SWEEPS} sweeps "
            f"for a {rows}x{cols} matrix"
        )
    sigma = np.sqrt(np.einsum("ij,ij->i", at.real, at.real)
                    + np.einsum("ij,ij->i", at.imag, at.imag))
    order = np.argsort(-sigma, kind="stable")
    return at[order], vt[order], sigma[order]


def _complete_columns(u, sigma):
    """Replace columns belonging to ~zero singular values with an orthonormal
    completion built from canonical basis vectors (deterministic)."""
    m, r = u.shape
    smax = sigma[0] if r else 0.0
    cutoff = max(m, r) * np.finfo(np.float64).eps * smax
    basis = []
    for j in range(r):
        if sigma[j] > cutoff:
            basis.append(u[:, j] / sigma[j])
        else:
            basis.append(None)
    next_canonical = 0
    for j in range(r):
        if basis[j] is not None:
            continue
        while True:
            cand = np.zeros(m, dtype=np.complex128)
            cand[next_canonical % m] = 1.0
            next_canonical += 1
            for vec in basis:
                if vec is not None:
                    cand = cand - vec * np.vdot(vec, cand)
            norm = np.linalg.norm(cand)
            if norm > 0.5:
                basis[j] = cand / norm
                break
    return np.column_stack(basis)


def svd_small(m):
    """Compact SVD of a small dense matrix via one-sided Jacobi rotations.

    Columns of m are orthogonalized with a fixed cyclic pair ordering;
    orthonormality of u/v and reconstruction hold to 1e-8.
    """
    m = np.asarray(m, dtype=np.complex128)
    if m.ndim != 2:
        raise DimensionError("svd_small expects a matrix")
    if max(m.shape) > MAX_SVD_DIM:
        raise SizeError(
            f"svd_small supports dims up to {MAX_SVD_DIM}, got {m.shape}"
        )
    if m.shape[0] < m.shape[1]:
        r = svd_small(m.conj().T)
        return SvdResult(u=r.v, singular_values=r.singular_values, v=r.u)
    at, vt, sigma = _jacobi(m, want_vectors=True)
    u = _complete_columns(np.ascontiguousarray(at.T), sigma)
    return SvdResult(u=u, singular_values=sigma, v=np.ascontiguousarray(vt.T))


def singular_values(m):
    """Descending singular values only (skips the U/V accumulation)."""
    m = np.asarray(m, dtype=np.complex128)
    if m.ndim != 2:
        raise DimensionError("singular_values expects a matrix")
    if max(m.shape) > MAX_SVD_DIM:
        raise SizeError(
            f"singular_values supports dims up to {MAX_SVD_DIM}, got {m.shape}"
        )
    if m.shape[0] < m.shape[1]:
        m = m.conj().T
    _, _, sigma = _jacobi(m, want_vectors=False)
    return sigma


def newton_schulz_inv_sqrt(a, max_iters=30, tol=1e-7):
    """Inverse square root of a Hermitian positive definite matrix.

    Coupled iteration T_k = 3I - Z_k Y_k, Y_{k+1} = Y_k T_k / 2,
    Z_{k+1} = T_k Z_k / 2 from Y_0 = A', Z_0 = I, run on the pre-scaled
    A' = A / trace(A) (eigenvalues in (0,1], the standard sufficient
    condition); the exact identity (A/s)^{-1/2} = sqrt(s) A^{-1/2}
    undoes the scaling. Returns Z with ||Z A Z - I||_F <= tol.
    """
    z, _ = newton_schulz_inv_sqrt_detailed(a, max_iters, tol)
    return z


def newton_schulz_inv_sqrt_detailed(a, max_iters=30, tol=1e-7):
    """Like newton_schulz_inv_sqrt but also returns per-iteration states."""
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError("newton_schulz_inv_sqrt expects a square matrix")
    n = a.shape[0]
    s = float(np.trace(a).real)
    if not np.isfinite(s) or s <= 0.0:
        raise ConvergenceError(
            f"trace {s} is not positive; input is not positive definite"
        )
    eye = np.eye(n, dtype=np.complex128)
    an = a / s
    y = an.copy()
    z = eye.copy()
    states = []
    for it in range(max_iters + 1):
        w = z @ y  # equals Z_k A' Z_k (both are polynomials in A')
        residual = float(np.linalg.norm(w - eye))
        states.append(NewtonSchulzState(iteration=it, residual=residual))
        if residual <= tol:
            zs = z / np.sqrt(s)
            final = float(np.linalg.norm(zs @ a @ zs - eye))
            if final > 10.0 * tol:
                raise ConvergenceError(
                    f"Newton-Schulz residual check failed: {final:.3e}",
                    residual=final,
                    iterations=it,
                )
            return zs, states
        if it == max_iters:
            break
        t = 3.0 * eye - w
        y = 0.5 * (y @ t)
        z = 0.5 * (t @ z)
    raise ConvergenceError(
        f"Newton-Schulz did not reach tol={tol:g} in {max_iters} iterations "
        f"(last residual {states[-1].residual:.3e})",
        residual=states[-1].residual,
        iterations=max_iters,
    )


def procrustes_project(p, sigma_target, max_iters=30, tol=1e-7):
    """Nearest matrix to p with all nonzero singular values == sigma_target.

    Computes sigma_target * p (p^H p)^{-1/2}; the Gram matrix is
    regularized as G + eps*(trace(G)/cols)*I so rank-deficient inputs stay
    well posed (their null directions project toward zero). Column space
    is preserved.
    """
    p = np.asarray(p, dtype=np.complex128)
    if p.ndim != 2:
        raise DimensionError("procrustes_project expects a matrix")
    if sigma_target <= 0.0:
        raise ValueError(f"sigma_target must be positive, got {sigma_target}")
    cols = p.shape[1]
    g = p.conj().T @ p
    tr = float(np.trace(g).real)
    if tr <= 0.0:
        return np.zeros_like(p)
    g_reg = g + (PROCRUSTES_EPS * tr / cols) * np.eye(cols, dtype=np.complex128)
    z = newton_schulz_inv_sqrt(g_reg, max_iters=max_iters, tol=tol)
    return sigma_target * (p @ z)


def procrustes_project_batch(mats, sigma_target, max_iters=30, tol=1e-7):
    """procrustes_project applied to a stack of matrices (m, d, c) at once.

    Same math as the scalar path, with the coupled iteration carried on
    all slices simultaneously (converged slices are stationary under
    further iterations). Returns (projected, iterations), iterations being
    the count needed by the slowest slice. Exact-zero slices map to zero.
    """
    mats = np.asarray(mats, dtype=np.complex128)
    if mats.ndim != 3:
        raise DimensionError("expected a stack of matrices (m, d, c)")
    if sigma_target <= 0.0:
        raise ValueError(f"sigma_target must be positive, got {sigma_target}")
    m, d, c = mats.shape
    g = np.einsum("sij,sik->sjk", mats.conj(), mats)
    tr = np.einsum("sii->s", g).real
    active = tr > 0.0
    if not np.any(active):
        return np.zeros_like(mats), 0
    eye = np.eye(c, dtype=np.complex128)
    g_reg = g + (PROCRUSTES_EPS * tr / c)[:, None, None] * eye
    s = np.where(active, tr * (1.0 + PROCRUSTES_EPS), 1.0)
    an = g_reg / s[:, None, None]
    y = an.copy()
    z = np.broadcast_to(eye, (m, c, c)).copy()
    iterations = None
    for it in range(max_iters + 1):
        w = z @ y
        diff = w - eye
        res = np.sqrt(np.einsum("sij,sij->s", diff, diff.conj()).real)
        worst = float(res[active].max())
        if worst <= tol:
            iterations = it
            break
        if it == max_iters:
            worst_idx = int(np.argmax(np.where(active, res, -1.0)))
            raise ConvergenceError(
                f"batched Newton-Schulz did not reach tol={tol:g} within "
                f"{max_iters} iterations (worst slice {worst_idx}, "
                f"residual {worst:.3e})",
                residual=worst,
                iterations=max_iters,
            )
        t = 3.0 * eye - w
        y = 0.5 * (y @ t)
        z = 0.5 * (t @ z)
    zs = z / np.sqrt(s)[:, None, None]
    out = sigma_target * (mats @ zs)
    out[~active] = 0.0
    return out, iterations


def lemma1_bounds(m):
    """(1 - sigma_max(m), 1 + sigma_max(m)): the singular-value sandwich
    for I + m, valid whenever I + m is nonsingular."""
    smax = float(singular_values(m)[0])
    return 1.0 - smax, 1.0 + smax

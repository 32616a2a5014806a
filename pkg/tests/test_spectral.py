"""Spectral primitives against independent oracles: power iteration for
sigma_max, the Jacobi SVD itself as eigen-oracle for Newton-Schulz, and
the appendix sandwich on seeded random matrices."""

import numpy as np
import pytest

from convspec.errors import ConvergenceError, SizeError
from convspec.spectral import (
    lemma1_bounds,
    newton_schulz_inv_sqrt,
    newton_schulz_inv_sqrt_detailed,
    procrustes_project,
    procrustes_project_batch,
    singular_values,
    svd_small,
)
from convspec.tensor import make_rng


def power_iteration_sigma_max(m, iters=500, seed=0):
    """sigma_max estimate by power iteration on M^H M."""
    rng = make_rng(seed)
    v = rng.normal(size=m.shape[1]) + 1j * rng.normal(size=m.shape[1])
    v /= np.linalg.norm(v)
    for _ in range(iters):
        w = m.conj().T @ (m @ v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
    return float(np.sqrt(np.linalg.norm(m.conj().T @ (m @ v))))


class TestSvdSmall:
    def test_diag(self):
        r = svd_small(np.diag([3.0, 1.0]))
        assert np.allclose(r.singular_values, [3.0, 1.0])

    def test_zero_matrix(self):
        r = svd_small(np.zeros((4, 3)))
        assert np.allclose(r.singular_values, 0.0)
        assert np.allclose(r.u.conj().T @ r.u, np.eye(3), atol=1e-12)

    def test_sigma_max_matches_power_iteration(self):
        m = make_rng(3).normal(size=(5, 3))
        r = svd_small(m)
        assert abs(r.singular_values[0] - power_iteration_sigma_max(m)) < 1e-6

    @pytest.mark.parametrize("shape", [(1, 1), (4, 4), (5, 3), (3, 5), (8, 2)])
    def test_invariants(self, shape):
        rng = make_rng(shape[0] * 10 + shape[1])
        m = rng.normal(size=shape) + 1j * rng.normal(size=shape)
        r = svd_small(m)
        k = min(shape)
        assert np.all(np.diff(r.singular_values) <= 1e-15)
        assert np.all(r.singular_values >= 0)
        assert np.abs(r.u.conj().T @ r.u - np.eye(k)).max() < 1e-8
        assert np.abs(r.v.conj().T @ r.v - np.eye(k)).max() < 1e-8
        scale = max(np.abs(m).max(), 1e-12)
        assert np.abs(r.reconstruct() - m).max() / scale < 1e-8

    def test_oversize_rejected(self):
        with pytest.raises(SizeError):
            svd_small(np.zeros((257, 4)))


class TestNewtonSchulz:
    def test_identity(self):
        z = newton_schulz_inv_sqrt(np.eye(5))
        assert np.abs(z - np.eye(5)).max() < 1e-8

    def test_diagonal(self):
        z = newton_schulz_inv_sqrt(np.diag([4.0, 9.0]))
        assert np.abs(z - np.diag([0.5, 1.0 / 3.0])).max() < 1e-8

    def test_matches_eigendecomposition_oracle(self):
        rng = make_rng(5)
        b = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        a = b.conj().T @ b + 0.1 * np.eye(8)
        z = newton_schulz_inv_sqrt(a)
        # eigen-oracle via the Jacobi SVD of the Hermitian PD input
        r = svd_small(a)
        oracle = (r.u * r.singular_values**-0.5) @ r.u.conj().T
        assert np.abs(z - oracle).max() < 1e-6

    def test_residual_contract_and_hermitian(self):
        rng = make_rng(6)
        b = rng.normal(size=(6, 6))
        a = b.T @ b + 0.05 * np.eye(6)
        z, states = newton_schulz_inv_sqrt_detailed(a, tol=1e-9)
        assert np.linalg.norm(z @ a @ z - np.eye(6)) <= 1e-9 * 10
        assert np.abs(z - z.conj().T).max() < 1e-8
        residuals = [s.residual for s in states]
        # quadratic tail: monitored nonincreasing after the first couple
        assert all(b_ <= a_ + 1e-12 for a_, b_ in zip(residuals[2:], residuals[3:]))

    def test_nonconvergence_raises(self):
        a = np.diag([1.0, 1e-13])  # too ill-conditioned for 5 iterations
        with pytest.raises(ConvergenceError) as err:
            newton_schulz_inv_sqrt(a, max_iters=5)
        assert err.value.residual is not None


class TestProcrustes:
    def test_orthonormal_columns_scale(self):
        q, _ = np.linalg.qr(make_rng(1).normal(size=(6, 3)))
        out = procrustes_project(q, 2.0)
        assert np.abs(out - 2.0 * q).max() < 1e-6

    def test_diagonal_polar_factor(self):
        # the Gram regularization floors the small direction at
        # ~eps*(trace/c)/(2*sigma_min^2) relative error, 6.3e-5 here
        out = procrustes_project(np.diag([5.0, 0.1]), 1.0)
        assert np.abs(out - np.eye(2)).max() < 1e-4

    def test_random_full_rank_rectangular(self):
        p = make_rng(2).normal(size=(6, 4))
        target = np.sqrt(6.0 / 4.0)
        out = procrustes_project(p, target)
        sv = svd_small(out).singular_values
        assert sv.shape == (4,)
        assert np.abs(sv - target).max() < 1e-5

    def test_idempotent(self):
        # an already-flat input (all singular values at the target) moves
        # only by the regularization floor
        rng = make_rng(3)
        p = rng.normal(size=(5, 5))
        flat = procrustes_project(procrustes_project(p, 1.5), 1.5)
        again = procrustes_project(flat, 1.5)
        assert np.linalg.norm(again - flat) < 1e-5

    def test_column_space_preserved(self):
        rng = make_rng(4)
        p = rng.normal(size=(6, 2)) @ rng.normal(size=(2, 4))  # rank 2
        out = procrustes_project(p, 1.0)
        # every output column stays inside the column space of p
        q, _ = np.linalg.qr(p[:, :])
        basis = q[:, :2]
        resid = out - basis @ (basis.conj().T @ out)
        assert np.abs(resid).max() < 1e-6

    def test_zero_matrix_maps_to_zero(self):
        assert np.all(procrustes_project(np.zeros((3, 4)), 1.0) == 0)

    def test_rank_deficient_null_values_stay_small(self):
        p = make_rng(5).normal(size=(3, 6))  # rank 3, 6 columns
        out = procrustes_project(p, 2.0)
        sv = svd_small(out).singular_values  # compact: 3 values
        assert sv.shape == (3,)
        assert np.abs(sv - 2.0).max() < 1e-5
        # the 6x6 Gram shows the three null directions stayed ~zero
        gram_sv = svd_small(out.conj().T @ out).singular_values
        assert gram_sv[3:].max() < (1e-3 * 2.0) ** 2

    def test_batch_matches_scalar(self):
        rng = make_rng(6)
        mats = rng.normal(size=(5, 4, 3)) + 1j * rng.normal(size=(5, 4, 3))
        batch, iters = procrustes_project_batch(mats, 1.3)
        assert iters <= 30
        # the batch path iterates every slice until the slowest converges,
        # so both answers sit within the shared Newton-Schulz tolerance
        for i in range(5):
            single = procrustes_project(mats[i], 1.3)
            assert np.abs(batch[i] - single).max() < 1e-6


class TestLemma1Bounds:
    def test_zero(self):
        assert lemma1_bounds(np.zeros((3, 3))) == (1.0, 1.0)

    def test_scaled_identity(self):
        lo, hi = lemma1_bounds(0.3 * np.eye(3))
        assert abs(lo - 0.7) < 1e-12 and abs(hi - 1.3) < 1e-12
        sv = singular_values(1.3 * np.eye(3))
        assert abs(sv[0] - hi) < 1e-12

    def test_sandwich_on_random_contractions(self):
        rng = make_rng(7)
        checked = 0
        while checked < 200:
            m = rng.normal(size=(6, 6)) * 0.2
            smax = singular_values(m)[0]
            if smax >= 0.9:
                continue
            checked += 1
            lo, hi = lemma1_bounds(m)
            sv = svd_small(np.eye(6) + m).singular_values
            assert sv[-1] >= lo - 1e-10
            assert sv[0] <= hi + 1e-10

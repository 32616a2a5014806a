"""Substrate tests: shape-checked products, DFT against the direct
double-sum, norms, and RNG reproducibility."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convspec.errors import DimensionError
from convspec.tensor import fft2, ifft2, l2_norm, make_rng, matmul, spawn_rngs


def direct_dft2(plane):
    """O(n^4) double-sum oracle for the 2-D DFT."""
    n = plane.shape[0]
    out = np.zeros((n, n), dtype=np.complex128)
    for u in range(n):
        for v in range(n):
            acc = 0.0 + 0.0j
            for p in range(n):
                for q in range(n):
                    acc += plane[p, q] * np.exp(-2j * np.pi * (u * p + v * q) / n)
            out[u, v] = acc
    return out


def triple_loop_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.result_type(a, b))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


class TestMatmul:
    def test_identity(self):
        m = np.arange(9.0).reshape(3, 3)
        assert np.array_equal(matmul(np.eye(3), m), m)

    def test_diagonal_product(self):
        out = matmul(np.diag([2.0, 3.0]), np.diag([5.0, 7.0]))
        assert np.array_equal(out, np.diag([10.0, 21.0]))

    def test_matches_triple_loop(self):
        rng = make_rng(11)
        a = rng.normal(size=(4, 5))
        b = rng.normal(size=(5, 3))
        assert np.abs(matmul(a, b) - triple_loop_matmul(a, b)).max() < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            matmul(np.eye(3), np.eye(4))

    @given(st.integers(0, 1000))
    @settings(max_examples=30, deadline=None)
    def test_associativity(self, seed):
        rng = make_rng(seed)
        a = rng.uniform(-1, 1, size=(4, 6))
        b = rng.uniform(-1, 1, size=(6, 3))
        c = rng.uniform(-1, 1, size=(3, 5))
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        scale = max(np.abs(left).max(), 1e-12)
        assert np.abs(left - right).max() / scale < 1e-9


class TestFft2:
    def test_zeros(self):
        assert np.abs(fft2(np.zeros((5, 5)))).max() == 0.0

    def test_delta_is_all_ones(self):
        plane = np.zeros((4, 4))
        plane[0, 0] = 1.0
        assert np.abs(fft2(plane) - np.ones((4, 4))).max() < 1e-12

    def test_matches_direct_sum(self):
        rng = make_rng(7)
        plane = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
        assert np.abs(fft2(plane) - direct_dft2(plane)).max() < 1e-10

    def test_non_square_rejected(self):
        with pytest.raises(DimensionError):
            fft2(np.zeros((3, 4)))

    @given(st.integers(1, 64), st.integers(0, 10**6))
    @settings(max_examples=40, deadline=None)
    def test_roundtrip(self, n, seed):
        plane = make_rng(seed).normal(size=(n, n))
        back = ifft2(fft2(plane)).real
        scale = max(np.abs(plane).max(), 1.0)
        assert np.abs(back - plane).max() / scale < 1e-10


class TestL2Norm:
    def test_zeros(self):
        assert l2_norm(np.zeros((3, 3, 3))) == 0.0

    def test_one_hot(self):
        v = np.zeros(10)
        v[4] = 1.0
        assert l2_norm(v) == 1.0

    def test_pythagorean(self):
        assert abs(l2_norm(np.array([3.0, 4.0])) - 5.0) < 1e-15


class TestRng:
    def test_equal_seeds_equal_streams(self):
        a = make_rng(123).normal(size=10**4)
        b = make_rng(123).normal(size=10**4)
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        assert not np.array_equal(
            make_rng(1).normal(size=100), make_rng(2).normal(size=100)
        )

    def test_spawn_deterministic_and_independent(self):
        a1, a2 = spawn_rngs(9, 2)
        b1, b2 = spawn_rngs(9, 2)
        # same parent seed reproduces the same children...
        assert np.array_equal(a1.normal(size=50), b1.normal(size=50))
        assert np.array_equal(a2.normal(size=50), b2.normal(size=50))
        # ...and sibling children produce distinct streams
        c1, c2 = spawn_rngs(9, 2)
        assert not np.array_equal(c1.normal(size=50), c2.normal(size=50))

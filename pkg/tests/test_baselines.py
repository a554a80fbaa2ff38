"""Tests for MMSE/ZF, slicing, brute-force ML and the box-LS oracle."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from altmin_mimo.baselines import (
    ML_MAX_CANDIDATES,
    LinearDetectorKind,
    ProblemTooLargeError,
    SingularSystemError,
    box_lsq_projected_gradient,
    cholesky_counted,
    cholesky_solve_counted,
    gram_lower,
    linear_detect,
    ml_bruteforce,
)
from altmin_mimo.metrics import OpCounter
from altmin_mimo.model import (
    build_constellation,
    complex_to_real_vector,
    slice_symbols,
    system_from_arrays,
)

from conftest import make_system

INV_SQRT2 = 1 / math.sqrt(2)


def _lstsq_mmse(sys):
    """Regularized LS via an augmented least-squares solve (no normal equations)."""
    h = sys.h_complex
    a = np.vstack([h, math.sqrt(sys.noise_var_complex) * np.eye(sys.n_t)])
    b = np.concatenate([sys.y_complex, np.zeros(sys.n_t)])
    return np.linalg.lstsq(a, b, rcond=None)[0]


class TestCholesky:
    def test_factor_matches_numpy(self, rng):
        a = rng.standard_normal((6, 4)) + 1j * rng.standard_normal((6, 4))
        g = a.conj().T @ a + np.eye(4)
        L, inv_d = cholesky_counted(np.tril(g), OpCounter())
        np.testing.assert_allclose(L, np.linalg.cholesky(g), atol=1e-12)
        np.testing.assert_allclose(inv_d, 1 / np.diag(L).real)

    def test_solve(self, rng):
        a = rng.standard_normal((6, 4)) + 1j * rng.standard_normal((6, 4))
        g = a.conj().T @ a
        b = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        L, inv_d = cholesky_counted(g, OpCounter())
        np.testing.assert_allclose(cholesky_solve_counted(L, inv_d, b, OpCounter()),
                                   np.linalg.solve(g, b), atol=1e-10)

    def test_gram_lower(self, rng):
        h = rng.standard_normal((5, 3)) + 1j * rng.standard_normal((5, 3))
        g = gram_lower(h, OpCounter())
        np.testing.assert_allclose(g, np.tril(h.conj().T @ h), atol=1e-12)

    def test_singular(self):
        with pytest.raises(SingularSystemError):
            cholesky_counted(np.zeros((2, 2), complex), OpCounter())


class TestLinearDetect:
    def test_identity_shrinkage(self, qpsk):
        sys = system_from_arrays(np.eye(2), np.zeros(4), noise_real=[2.0, 0, 0, 0],
                                 noise_var_complex=1.0)
        res = linear_detect(sys, LinearDetectorKind.MMSE, qpsk)
        np.testing.assert_allclose(res.x_hat_real, [1.0, 0.0, 0.0, 0.0], atol=1e-15)

    def test_matches_lstsq_oracle(self, qpsk):
        for seed in range(10):
            sys = make_system(4, 16, qpsk, snr_db=8.0, seed=seed)
            res = linear_detect(sys, "mmse", qpsk)
            x_ref = complex_to_real_vector(_lstsq_mmse(sys))
            np.testing.assert_allclose(res.x_hat_real, x_ref, atol=1e-9)
            np.testing.assert_array_equal(res.x_hat_sliced, slice_symbols(x_ref, qpsk))

    def test_mmse_tends_to_zf(self, qpsk, rng):
        h = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        x = slice_symbols(rng.standard_normal(8), qpsk)
        sys = system_from_arrays(h, x, noise_real=0.1 * rng.standard_normal(8),
                                 noise_var_complex=1e-9)
        mm = linear_detect(sys, "mmse", qpsk).x_hat_real
        zf = linear_detect(sys, "zf", qpsk).x_hat_real
        assert np.max(np.abs(mm - zf)) <= 1e-6

    def test_zf_noiseless_square_inverse(self, qpsk, rng):
        h = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        x = slice_symbols(rng.standard_normal(6), qpsk)
        res = linear_detect(system_from_arrays(h, x), "zf", qpsk)
        np.testing.assert_allclose(res.x_hat_real, x, atol=1e-10)
        np.testing.assert_array_equal(res.x_hat_sliced, x)

    def test_zf_needs_tall_channel(self, qpsk, rng):
        h = rng.standard_normal((2, 3)) + 0j
        with pytest.raises(SingularSystemError):
            linear_detect(system_from_arrays(h, np.zeros(6)), "zf", qpsk)

    def test_zf_rank_deficient(self, qpsk):
        h = np.array([[1.0, 1.0], [1.0, 1.0], [2.0, 2.0]])
        with pytest.raises(SingularSystemError):
            linear_detect(system_from_arrays(h, np.zeros(4)), "zf", qpsk)

    def test_mmse_rank_deficient_ok(self, qpsk):
        h = np.array([[1.0, 1.0], [1.0, 1.0]])
        sys = system_from_arrays(h, np.zeros(4), noise_var_complex=0.5)
        assert np.all(np.isfinite(linear_detect(sys, "mmse", qpsk).x_hat_real))

    def test_counts_reported(self, qpsk):
        res = linear_detect(make_system(4, 16, qpsk), "mmse", qpsk)
        assert res.multiply_count > 0 and res.sqrt_count == 4


class TestSlice:
    def test_qpsk_examples(self, qpsk):
        np.testing.assert_allclose(slice_symbols([0.9, 0.0, -0.2], qpsk),
                                   [INV_SQRT2, -INV_SQRT2, -INV_SQRT2])

    def test_qam16_nearest(self, qam16):
        assert slice_symbols([0.55], qam16)[0] == pytest.approx(1 / math.sqrt(10))

    def test_qam16_ties_go_negative(self, qam16):
        mids = np.array([-2, 0, 2]) / math.sqrt(10)
        np.testing.assert_allclose(slice_symbols(mids, qam16), np.array([-3, -1, 1]) / math.sqrt(10))

    @given(M=st.sampled_from([4, 16]),
           x=st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=20))
    @settings(max_examples=80, deadline=None)
    def test_nearest_and_idempotent(self, M, x):
        c = build_constellation(M)
        s = slice_symbols(x, c)
        np.testing.assert_array_equal(slice_symbols(s, c), s)
        d = np.abs(np.asarray(x)[:, None] - c.alphabet[None, :])
        np.testing.assert_allclose(np.abs(np.asarray(x) - s), d.min(axis=1), atol=1e-15)


class TestMl:
    def test_noiseless_recovery(self, qpsk):
        for seed in range(5):
            sys = make_system(2, 4, qpsk, noiseless=True, seed=seed)
            np.testing.assert_array_equal(ml_bruteforce(sys, qpsk).x_hat_sliced, sys.x_true_real)

    def test_candidate_count(self, qpsk):
        sys = make_system(2, 4, qpsk)
        res = ml_bruteforce(sys, qpsk)
        import itertools
        n_cand = sum(1 for _ in itertools.product(qpsk.alphabet, repeat=2 * sys.n_t))
        assert res.iterations == n_cand == 4**2
        assert res.multiply_count == n_cand * (sys.h_real.size + 2 * sys.n_r)

    def test_residual_optimality_vs_exhaustive_and_others(self, qpsk):
        import itertools
        for seed in range(10):
            sys = make_system(2, 4, qpsk, snr_db=6.0, seed=seed)
            ml = ml_bruteforce(sys, qpsk)
            best = min(sys.residual_sq(np.array(v)) for v in itertools.product(qpsk.alphabet, repeat=4))
            assert sys.residual_sq(ml.x_hat_sliced) == pytest.approx(best, rel=1e-12)
            for kind in ("mmse", "zf"):
                other = linear_detect(sys, kind, qpsk).x_hat_sliced
                assert sys.residual_sq(ml.x_hat_sliced) <= sys.residual_sq(other) + 1e-12

    def test_tie_goes_to_first(self, qpsk):
        # zero channel: every candidate has the same residual
        sys = system_from_arrays(np.zeros((2, 1)) + 1e-300j * 0, np.zeros(2))
        res = ml_bruteforce(sys, qpsk)
        np.testing.assert_allclose(res.x_hat_sliced, [-INV_SQRT2, -INV_SQRT2])

    def test_too_large(self, qpsk, qam16):
        with pytest.raises(ProblemTooLargeError, match=str(ML_MAX_CANDIDATES)):
            ml_bruteforce(make_system(11, 16, qpsk), qpsk)
        with pytest.raises(ProblemTooLargeError):
            ml_bruteforce(make_system(6, 16, qam16), qam16)

    def test_qam16_small(self, qam16):
        sys = make_system(1, 4, qam16, noiseless=True)
        np.testing.assert_array_equal(ml_bruteforce(sys, qam16).x_hat_sliced, sys.x_true_real)


class TestBoxOracle:
    def test_interior_equals_lstsq(self, rng):
        H = rng.standard_normal((10, 3))
        x0 = np.array([0.1, -0.2, 0.05])
        y = H @ x0
        x, f = box_lsq_projected_gradient(H, y, 1.0)
        np.testing.assert_allclose(x, x0, atol=1e-8)
        assert f < 1e-14

    def test_matches_scipy_bvls(self, rng):
        lsq_linear = pytest.importorskip("scipy.optimize").lsq_linear
        for _ in range(20):
            H = rng.standard_normal((8, 8))
            y = 2 * rng.standard_normal(8)
            x, f = box_lsq_projected_gradient(H, y, INV_SQRT2)
            ref = lsq_linear(H, y, bounds=(-INV_SQRT2, INV_SQRT2), method="bvls", tol=1e-14)
            f_ref = float(np.sum((y - H @ ref.x) ** 2))
            assert f == pytest.approx(f_ref, rel=1e-9, abs=1e-12)
            assert np.all(np.abs(x) <= INV_SQRT2)

    def test_zero_matrix(self):
        x, f = box_lsq_projected_gradient(np.zeros((3, 2)), np.ones(3), 1.0)
        assert f == 3.0 and not x.any()

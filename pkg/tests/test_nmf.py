import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nmfattack.matrixcore import frobenius_norm, make_rng
from nmfattack.nmf import (
    NmfConfig,
    NmfModel,
    kl_divergence,
    mu_step,
    reconstruction_error,
    run_nmf,
    seed_factors,
)

from conftest import random_positive


def kl_reference(x, w, h, guard=1e-12):
    """Direct double-loop oracle for the generalized KL divergence."""
    wh = w @ h
    total = 0.0
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            if x[i, j] > 0:
                total += x[i, j] * math.log(x[i, j] / max(wh[i, j], guard))
            total += wh[i, j] - x[i, j]
    return total


class TestKlDivergence:
    def test_exact_reconstruction_is_zero(self, rng):
        w = random_positive(rng, 5, 2)
        h = random_positive(rng, 2, 6)
        assert kl_divergence(w @ h, w, h) == pytest.approx(0.0, abs=1e-12)

    def test_closed_form_scalar(self):
        val = kl_divergence(np.array([[2.0]]), np.array([[1.0]]),
                            np.array([[1.0]]))
        assert val == pytest.approx(2.0 * math.log(2.0) - 1.0, abs=1e-12)

    def test_against_direct_summation(self, rng):
        x = random_positive(rng, 5, 6)
        w = random_positive(rng, 5, 3)
        h = random_positive(rng, 3, 6)
        assert kl_divergence(x, w, h) == pytest.approx(
            kl_reference(x, w, h), abs=1e-12)

    def test_zero_entries_use_xlogy_convention(self):
        x = np.array([[0.0, 1.0]])
        w = np.array([[1.0]])
        h = np.array([[0.5, 0.5]])
        # 0*log(0/q) = 0 for the first entry
        expected = 1.0 * math.log(1.0 / 0.5) - 1.0 + 1.0
        assert kl_divergence(x, w, h) == pytest.approx(expected, abs=1e-12)

    def test_nonnegative_up_to_eps(self, rng):
        for _ in range(20):
            x = random_positive(rng, 4, 5)
            w = random_positive(rng, 4, 2)
            h = random_positive(rng, 2, 5)
            assert kl_divergence(x, w, h) >= -1e-12


class TestMuStep:
    def test_fixed_point_at_exact_fit(self, rng):
        w = random_positive(rng, 6, 2)
        h = random_positive(rng, 2, 7)
        w2, h2 = mu_step(w @ h, w, h)
        assert np.abs(w2 - w).max() < 1e-12
        assert np.abs(h2 - h).max() < 1e-12

    def test_scalar_hand_evaluation(self):
        w2, h2 = mu_step(np.array([[4.0]]), np.array([[1.0]]),
                         np.array([[2.0]]))
        assert w2 == pytest.approx(np.array([[2.0]]))
        assert h2 == pytest.approx(np.array([[2.0]]))

    def test_divergence_monotone(self, rng):
        x = random_positive(rng, 8, 10)
        w = random_positive(rng, 8, 3)
        h = random_positive(rng, 3, 10)
        before = kl_divergence(x, w, h)
        w2, h2 = mu_step(x, w, h)
        assert kl_divergence(x, w2, h2) <= before + 1e-10 * abs(before)

    def test_outputs_nonnegative(self, rng):
        x = random_positive(rng, 6, 6, lo=0.0)
        w = random_positive(rng, 6, 2)
        h = random_positive(rng, 2, 6)
        w2, h2 = mu_step(x, w, h)
        assert w2.min() >= 0.0 and h2.min() >= 0.0

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_monotone_over_random_instances(self, seed):
        r = make_rng(seed)
        m, n, k = int(r.integers(2, 12)), int(r.integers(2, 12)), int(r.integers(1, 4))
        x = r.random((m, n))
        w = 0.1 + r.random((m, k))
        h = 0.1 + r.random((k, n))
        prev = kl_divergence(x, w, h)
        for _ in range(50):
            w, h = mu_step(x, w, h)
            cur = kl_divergence(x, w, h)
            assert cur <= prev + 1e-10 * max(1.0, abs(prev))
            prev = cur


class TestRunNmf:
    def test_t1_equals_single_step(self, rng):
        x = random_positive(rng, 6, 8)
        w0 = random_positive(rng, 6, 2)
        h0 = random_positive(rng, 2, 8)
        model = run_nmf(x, w0, h0, NmfConfig(max_iterations=1))
        w1, h1 = mu_step(x, w0, h0)
        assert np.array_equal(model.w, w1)
        assert np.array_equal(model.h, h1)

    def test_t0_forbidden(self):
        with pytest.raises(ValueError, match="max_iterations"):
            NmfConfig(max_iterations=0)

    def test_rank1_recovery(self, rng):
        u = random_positive(rng, 12, 1)
        v = random_positive(rng, 1, 9)
        x = u @ v
        w0, h0 = seed_factors(make_rng(3), 12, 9, 1)
        model = run_nmf(x, w0, h0, NmfConfig(max_iterations=2000))
        err = reconstruction_error(x, model)
        assert err.relative < 1e-6

    def test_rejects_zero_init(self, rng):
        x = random_positive(rng, 4, 4)
        w0 = random_positive(rng, 4, 2)
        w0[0, 0] = 0.0
        h0 = random_positive(rng, 2, 4)
        with pytest.raises(ValueError, match="strictly positive"):
            run_nmf(x, w0, h0, NmfConfig(max_iterations=10))

    def test_divergence_history_non_increasing(self, rng):
        x = random_positive(rng, 10, 12)
        w0, h0 = seed_factors(make_rng(5), 10, 12, 3)
        model = run_nmf(x, w0, h0, NmfConfig(max_iterations=500, record_every=10))
        hist = model.divergence_history
        assert len(hist) == 50
        for a, b in zip(hist, hist[1:]):
            assert b <= a + 1e-10 * max(1.0, abs(a))

    def test_early_stop_reports_iterations(self, rng):
        u = random_positive(rng, 6, 1)
        v = random_positive(rng, 1, 5)
        x = u @ v
        w0, h0 = seed_factors(make_rng(11), 6, 5, 1)
        cfg = NmfConfig(max_iterations=50000, rel_change_tol=1e-10)
        model = run_nmf(x, w0, h0, cfg)
        assert model.iterations_run < 50000

    def test_extra_step_after_tol_stop_is_tiny(self, rng):
        u = random_positive(rng, 6, 1)
        v = random_positive(rng, 1, 5)
        x = u @ v
        w0, h0 = seed_factors(make_rng(11), 6, 5, 1)
        model = run_nmf(x, w0, h0,
                        NmfConfig(max_iterations=50000, rel_change_tol=1e-10))
        w2, h2 = mu_step(x, model.w, model.h)
        assert max(np.abs(w2 - model.w).max(), np.abs(h2 - model.h).max()) < 1e-8


class TestSeedFactors:
    def test_same_seed_identical(self):
        a = seed_factors(make_rng(4), 6, 7, 3)
        b = seed_factors(make_rng(4), 6, 7, 3)
        assert a[0].tobytes() == b[0].tobytes()
        assert a[1].tobytes() == b[1].tobytes()

    def test_strict_positivity_over_100_seeds(self):
        for seed in range(100):
            w0, h0 = seed_factors(make_rng(seed), 5, 6, 2)
            assert w0.min() > 0.0 and h0.min() > 0.0

    def test_different_seeds_differ(self):
        w_a, h_a = seed_factors(make_rng(1), 20, 20, 4)
        w_b, h_b = seed_factors(make_rng(2), 20, 20, 4)
        frac = np.mean(np.concatenate([(w_a != w_b).ravel(),
                                       (h_a != h_b).ravel()]))
        assert frac >= 0.99

    def test_rank_validation(self):
        with pytest.raises(ValueError, match="rank"):
            seed_factors(make_rng(0), 3, 3, 0)


class TestReconstructionError:
    def test_exact_is_zero(self, rng):
        w = random_positive(rng, 5, 2)
        h = random_positive(rng, 2, 6)
        model = NmfModel(w, h, 2, 0)
        err = reconstruction_error(w @ h, model)
        assert err.absolute == pytest.approx(0.0, abs=1e-12)

    def test_additive_residual(self, rng):
        w = random_positive(rng, 5, 2)
        h = random_positive(rng, 2, 6)
        e = 0.01 * rng.standard_normal((5, 6))
        model = NmfModel(w, h, 2, 0)
        err = reconstruction_error(w @ h + e, model)
        assert err.absolute == pytest.approx(frobenius_norm(e), rel=1e-12)

    def test_relative_uses_input_norm(self, rng):
        x = random_positive(rng, 4, 4)
        w = random_positive(rng, 4, 2)
        h = random_positive(rng, 2, 4)
        model = NmfModel(w, h, 2, 0)
        err = reconstruction_error(x, model)
        assert err.relative == pytest.approx(err.absolute / frobenius_norm(x))


class TestInvariants:
    def test_scale_ambiguity(self, rng):
        w = random_positive(rng, 6, 3)
        h = random_positive(rng, 3, 7)
        d = np.diag(0.5 + rng.random(3))
        lhs = w @ h
        rhs = (w @ d) @ (np.linalg.inv(d) @ h)
        assert frobenius_norm(lhs - rhs) < 1e-10

    def test_triangle_inequality_under_perturbation(self):
        # recon error of the perturbed solve stays within the clean error
        # plus the perturbation norm (same init both sides)
        for seed in range(10):
            r = make_rng(seed)
            x = r.random((8, 10))
            delta = 0.05 * r.random((8, 10))
            w0, h0 = seed_factors(make_rng(seed + 100), 8, 10, 3)
            cfg = NmfConfig(max_iterations=800, record_every=800)
            clean = reconstruction_error(x, run_nmf(x, w0, h0, cfg)).absolute
            attacked = reconstruction_error(
                x + delta, run_nmf(x + delta, w0, h0, cfg)).absolute
            assert attacked <= clean + frobenius_norm(delta) + 1e-8

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nmfattack.feature_error import (
    Assignment,
    DegenerateComponentError,
    apply_assignment,
    balance,
    fe_loss,
    fem,
    hungarian,
    w_only_error,
)
from nmfattack.matrixcore import frobenius_norm, make_rng

from conftest import random_positive


def permute_components(w, h, perm):
    """Reindex latent components: columns of W, rows of H."""
    return w[:, list(perm)], h[list(perm), :]


def rescale_components(w, h, d):
    return w * d, h / d[:, None]


class TestBalance:
    def test_geometric_mean_symmetry(self):
        w = np.zeros((4, 1))
        w[0, 0] = 4.0                      # |W_0| = 4
        h = np.array([[1.0, 0.0, 0.0]])    # |H_0| = 1
        feats = balance(w, h)
        assert np.linalg.norm(feats.w_block[:, 0]) == pytest.approx(2.0)
        assert np.linalg.norm(feats.h_block[:, 0]) == pytest.approx(2.0)

    def test_idempotent_on_balanced_input(self, rng):
        w = random_positive(rng, 5, 3)
        h = random_positive(rng, 3, 6)
        wn = np.linalg.norm(w, axis=0)
        hn = np.linalg.norm(h, axis=1)
        w_b = w / wn * np.sqrt(wn * hn)
        h_b = h / hn[:, None] * np.sqrt(wn * hn)[:, None]
        feats = balance(w_b, h_b)
        assert np.allclose(feats.w_block, w_b, atol=1e-12)
        assert np.allclose(feats.h_block, h_b.T, atol=1e-12)

    def test_scaling_invariance(self, rng):
        w = random_positive(rng, 6, 3)
        h = random_positive(rng, 3, 8)
        d = 0.2 + 2.0 * rng.random(3)
        a = balance(w, h)
        b = balance(*rescale_components(w, h, d))
        assert frobenius_norm(a.wh - b.wh) < 1e-10 * frobenius_norm(a.wh)

    def test_balanced_column_norms(self, rng):
        w = random_positive(rng, 7, 4)
        h = random_positive(rng, 4, 5)
        feats = balance(w, h)
        for i in range(4):
            target = np.sqrt(np.linalg.norm(w[:, i]) * np.linalg.norm(h[i]))
            assert np.linalg.norm(feats.w_block[:, i]) == pytest.approx(target, rel=1e-10)
            assert np.linalg.norm(feats.h_block[:, i]) == pytest.approx(target, rel=1e-10)

    def test_reconstruction_preserved(self, rng):
        w = random_positive(rng, 6, 3)
        h = random_positive(rng, 3, 8)
        feats = balance(w, h)
        rebuilt = feats.w_block @ feats.h_block.T
        assert frobenius_norm(rebuilt - w @ h) < 1e-10 * frobenius_norm(w @ h)

    def test_zero_component_names_index(self, rng):
        w = random_positive(rng, 5, 3)
        w[:, 1] = 0.0
        h = random_positive(rng, 3, 5)
        with pytest.raises(DegenerateComponentError) as exc:
            balance(w, h)
        assert exc.value.index == 1

    def test_norm_floor_avoids_error(self, rng):
        w = random_positive(rng, 5, 3)
        w[:, 1] = 0.0
        h = random_positive(rng, 3, 5)
        feats = balance(w, h, norm_floor=1e-12)
        assert np.all(np.isfinite(feats.wh))


class TestFem:
    def test_self_distance_zero_diagonal(self, rng):
        feats = balance(random_positive(rng, 5, 3), random_positive(rng, 3, 6))
        d = fem(feats, feats)
        assert np.allclose(np.diag(d), 0.0, atol=1e-12)

    def test_orthonormal_columns(self):
        from nmfattack.feature_error import BalancedFeatures
        eye = np.eye(4)[:, :3]
        a = BalancedFeatures(eye, 2)
        d = fem(a, a)
        off = d[~np.eye(3, dtype=bool)]
        assert np.allclose(off, np.sqrt(2.0), atol=1e-12)
        assert np.allclose(np.diag(d), 0.0, atol=1e-12)

    def test_against_column_loop(self, rng):
        a = balance(random_positive(rng, 5, 4), random_positive(rng, 4, 6))
        b = balance(random_positive(rng, 5, 4), random_positive(rng, 4, 6))
        d = fem(a, b)
        for i in range(4):
            for j in range(4):
                expected = np.linalg.norm(a.wh[:, i] - b.wh[:, j])
                assert d[i, j] == pytest.approx(expected, rel=1e-12)

    def test_dimension_mismatch(self, rng):
        a = balance(random_positive(rng, 5, 3), random_positive(rng, 3, 6))
        b = balance(random_positive(rng, 6, 3), random_positive(rng, 3, 5))
        with pytest.raises(ValueError, match="dimensions"):
            fem(a, b)


def brute_force_assignment(cost):
    best, best_perm = np.inf, None
    k = cost.shape[0]
    for perm in itertools.permutations(range(k)):
        total = sum(cost[i, perm[i]] for i in range(k))
        if total < best:
            best, best_perm = total, perm
    return best, best_perm


class TestHungarian:
    def test_dominant_zero_diagonal(self, rng):
        cost = 1.0 + rng.random((4, 4))
        np.fill_diagonal(cost, 0.0)
        assignment = hungarian(cost)
        assert assignment.perm == (0, 1, 2, 3)
        assert assignment.total_cost == 0.0

    def test_symmetric_2x2(self):
        assignment = hungarian(np.array([[1.0, 2.0], [2.0, 1.0]]))
        assert assignment.perm == (0, 1)
        assert assignment.total_cost == pytest.approx(2.0)

    def test_100_random_6x6_vs_brute_force(self):
        r = make_rng(42)
        for _ in range(100):
            cost = r.random((6, 6))
            assignment = hungarian(cost)
            best, _ = brute_force_assignment(cost)
            assert assignment.total_cost == pytest.approx(best, abs=1e-12)

    def test_non_square_rejected(self, rng):
        with pytest.raises(ValueError, match="square"):
            hungarian(rng.random((3, 4)))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            hungarian(np.array([[1.0, np.inf], [1.0, 1.0]]))


class TestFeLoss:
    def test_identical_is_zero(self, rng):
        feats = balance(random_positive(rng, 6, 3), random_positive(rng, 3, 7))
        loss, assignment = fe_loss(feats, feats)
        assert loss == pytest.approx(0.0, abs=1e-13)
        assert assignment.perm == (0, 1, 2)

    def test_permuted_copy_is_zero(self, rng):
        w = random_positive(rng, 6, 4)
        h = random_positive(rng, 4, 7)
        perm = (2, 0, 3, 1)
        loss, assignment = fe_loss(balance(*permute_components(w, h, perm)),
                                   balance(w, h))
        assert loss < 1e-12
        # column i of the permuted copy is component perm[i] of the original
        assert assignment.perm == perm

    def test_against_brute_force_over_permutations(self, rng):
        a = balance(random_positive(rng, 5, 4), random_positive(rng, 4, 6))
        b = balance(random_positive(rng, 5, 4), random_positive(rng, 4, 6))
        loss, _ = fe_loss(a, b)
        # oracle: enumerate all aligned placements and take the best
        best = np.inf
        for p in itertools.permutations(range(4)):
            aligned = np.empty_like(a.wh)
            aligned[:, list(p)] = a.wh
            best = min(best, frobenius_norm(aligned - b.wh))
        assert loss == pytest.approx(best / frobenius_norm(b.wh), abs=1e-12)

    @given(st.integers(0, 10**6))
    @settings(max_examples=30, deadline=None)
    def test_permutation_and_rescale_invariance(self, seed):
        r = make_rng(seed)
        k = int(r.integers(2, 6))
        w = 0.1 + r.random((7, k))
        h = 0.1 + r.random((k, 8))
        perm = tuple(r.permutation(k).tolist())
        d = 0.2 + 2.0 * r.random(k)
        w2, h2 = permute_components(*rescale_components(w, h, d), perm)
        loss, _ = fe_loss(balance(w2, h2), balance(w, h))
        assert loss < 1e-10

    def test_numerator_symmetry(self, rng):
        a = balance(random_positive(rng, 5, 3), random_positive(rng, 3, 6))
        b = balance(random_positive(rng, 5, 3), random_positive(rng, 3, 6))
        _, assignment = fe_loss(a, b)
        aligned_a = apply_assignment(a.wh, assignment)
        inverse = tuple(int(np.argsort(assignment.perm)[i]) for i in range(3))
        aligned_b = apply_assignment(b.wh, Assignment(inverse, 0.0))
        assert frobenius_norm(aligned_a - b.wh) == pytest.approx(
            frobenius_norm(a.wh - aligned_b), rel=1e-12)


def _inverse(perm):
    return list(np.argsort(perm))


class TestWOnlyError:
    def test_identical_zero(self, rng):
        w = random_positive(rng, 6, 3)
        assignment = Assignment((0, 1, 2), 0.0)
        assert w_only_error(w, w, assignment) == 0.0

    def test_permuted_zero(self, rng):
        w = random_positive(rng, 6, 3)
        perm = (1, 2, 0)
        # column i of the input is component perm[i] of the reference
        assert w_only_error(w[:, list(perm)], w,
                            Assignment(perm, 0.0)) < 1e-14

    def test_against_direct_norm(self, rng):
        w_a = random_positive(rng, 6, 3)
        w_b = random_positive(rng, 6, 3)
        perm = (2, 0, 1)
        aligned = np.empty_like(w_a)
        aligned[:, list(perm)] = w_a
        expected = frobenius_norm(aligned - w_b) / frobenius_norm(w_b)
        assert w_only_error(w_a, w_b, Assignment(perm, 0.0)) == pytest.approx(
            expected, rel=1e-12)

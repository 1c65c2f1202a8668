"""Eigen-state kernel: rank-one update, dense eigensolver, reconstruction."""

import math

import numpy as np
import pytest

from streampca.eigenstate import (
    EigenConvergenceError,
    EigenState,
    dense_eigensymm,
    orthonormal_completion,
    rank1_update,
    reconstruct,
)
from streampca.selftest import _random_state

E1 = np.array([1.0, 0.0])
E2 = np.array([0.0, 1.0])


class TestDenseEigensymm:
    def test_already_diagonal(self):
        lam, vecs = dense_eigensymm(np.diag([3.0, 2.0]))
        np.testing.assert_allclose(lam, [3.0, 2.0])
        np.testing.assert_allclose(vecs, np.eye(2))

    def test_swap_matrix(self):
        lam, vecs = dense_eigensymm(np.array([[0.0, 1.0], [1.0, 0.0]]))
        np.testing.assert_allclose(lam, [1.0, -1.0], atol=1e-12)
        root = 1.0 / math.sqrt(2.0)
        np.testing.assert_allclose(np.abs(vecs), [[root, root], [root, root]], atol=1e-12)

    def test_two_by_two_derived(self):
        # characteristic polynomial of [[1.5, 0.5], [0.5, 0.5]]: roots 1 +- sqrt(0.5)
        lam, vecs = dense_eigensymm(np.array([[1.5, 0.5], [0.5, 0.5]]))
        np.testing.assert_allclose(lam, [1.0 + math.sqrt(0.5), 1.0 - math.sqrt(0.5)], atol=1e-12)
        A = vecs @ np.diag(lam) @ vecs.T
        np.testing.assert_allclose(A, [[1.5, 0.5], [0.5, 0.5]], atol=1e-12)

    def test_matches_characteristic_polynomial_on_random_2x2(self):
        rng = np.random.default_rng(7)
        for _ in range(500):
            a, b, c = rng.uniform(-5, 5, size=3)
            lam, vecs = dense_eigensymm(np.array([[a, b], [b, c]]))
            half = 0.5 * (a + c)
            s = math.hypot(0.5 * (a - c), b)
            np.testing.assert_allclose(lam, [half + s, half - s], atol=1e-10)
            gram = vecs.T @ vecs
            np.testing.assert_allclose(gram, np.eye(2), atol=1e-12)

    def test_reconstruction_contract_random(self):
        rng = np.random.default_rng(3)
        for n in (1, 3, 5, 9, 17):
            A = rng.standard_normal((n, n))
            A = A + A.T
            lam, vecs = dense_eigensymm(A)
            assert np.all(np.diff(lam) <= 1e-12)
            scale = max(1.0, np.max(np.abs(A)))
            err = np.max(np.abs(A - vecs @ np.diag(lam) @ vecs.T))
            assert err <= 1e-8 * scale

    def test_rejects_nonsymmetric(self):
        with pytest.raises(ValueError, match="symmetric"):
            dense_eigensymm(np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_rejects_nonsquare_and_nonfinite(self):
        with pytest.raises(ValueError):
            dense_eigensymm(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            dense_eigensymm(np.array([[np.nan, 0.0], [0.0, 1.0]]))

    def test_convergence_error_type_exists(self):
        assert issubclass(EigenConvergenceError, RuntimeError)


class TestRank1Update:
    def test_zero_state_update(self):
        state = EigenState.zero(2)
        out = rank1_update(state, E1, 0.5)
        np.testing.assert_allclose(out.eigvals, [0.5])
        np.testing.assert_allclose(np.abs(out.basis[:, 0]), E1)
        assert out.rank == 1

    def test_orthogonal_sample_makes_tie(self):
        state = EigenState.from_eigenpairs([1.0], E1[:, None], dim=2)
        out = rank1_update(state, E2, 1.0)
        # both eigenvalues equal one; ties merge into a single multiplicity-2 value
        np.testing.assert_allclose(out.expanded_eigvals(), [1.0, 1.0])
        np.testing.assert_allclose(np.abs(out.basis), np.eye(2), atol=1e-12)

    def test_in_span_mixture_derived(self):
        # dense eigensolve of [[1.5, 0.5], [0.5, 0.5]] gives 1 +- sqrt(0.5)
        state = EigenState.from_eigenpairs([1.0], E1[:, None], dim=2)
        x = (E1 + E2) / math.sqrt(2.0)
        out = rank1_update(state, x, 1.0)
        np.testing.assert_allclose(
            out.expanded_eigvals(),
            [1.0 + math.sqrt(0.5), 1.0 - math.sqrt(0.5)],
            atol=1e-12,
        )

    def test_exactness_against_dense_arithmetic(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            d = int(rng.integers(1, 17))
            state = _random_state(rng, d)
            x = rng.standard_normal(d)
            eta = float(rng.uniform(0, 2))
            out = rank1_update(state, x, eta)
            np.testing.assert_allclose(
                reconstruct(out),
                reconstruct(state) + eta * np.outer(x, x),
                atol=1e-8,
            )
            assert out.rank <= state.rank + 1

    def test_orthonormality_preserved(self):
        rng = np.random.default_rng(5)
        state = EigenState.zero(6)
        for _ in range(40):
            state = rank1_update(state, rng.standard_normal(6), 0.3)
            state.validate()

    def test_eta_zero_is_identity(self):
        rng = np.random.default_rng(2)
        state = _random_state(rng, 5)
        out = rank1_update(state, rng.standard_normal(5), 0.0)
        np.testing.assert_allclose(reconstruct(out), reconstruct(state), atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            rank1_update(EigenState.zero(3), np.ones(2), 1.0)

    def test_nonfinite_sample(self):
        with pytest.raises(ValueError, match="finite"):
            rank1_update(EigenState.zero(2), np.array([np.inf, 0.0]), 1.0)

    def test_negative_eta(self):
        with pytest.raises(ValueError, match="eta"):
            rank1_update(EigenState.zero(2), E1, -0.1)

    def test_complement_enters_bordered_matrix(self):
        # M = 0.5 I updated along e1: eigenvalues (0.5 + eta, 0.5)
        state = EigenState.isotropic(3, 0.5)
        out = rank1_update(state, np.array([1.0, 0.0, 0.0]), 0.25)
        np.testing.assert_allclose(out.eigvals, [0.75])
        assert out.comp == 0.5
        np.testing.assert_allclose(
            reconstruct(out), np.diag([0.75, 0.5, 0.5]), atol=1e-12
        )

    def test_reorthonormalization_counter(self):
        state = EigenState.zero(3)
        rng = np.random.default_rng(0)
        for _ in range(600):
            state = rank1_update(state, rng.standard_normal(3), 0.1)
        assert state.orth_age < 600
        state.validate()


class TestReconstruct:
    def test_empty_state(self):
        np.testing.assert_allclose(reconstruct(EigenState.zero(2)), np.zeros((2, 2)))

    def test_single_direction(self):
        state = EigenState.from_eigenpairs([1.0], E1[:, None], dim=2)
        np.testing.assert_allclose(reconstruct(state), np.diag([1.0, 0.0]))

    def test_diagonal(self):
        state = EigenState.from_eigenpairs([0.7, 0.3], np.eye(2), dim=2)
        np.testing.assert_allclose(reconstruct(state), np.diag([0.7, 0.3]))


class TestStateHelpers:
    def test_merge_close_eigenvalues(self):
        state = EigenState.from_eigenpairs([0.5, 0.5 + 2e-10], np.eye(2), dim=2)
        assert state.eigvals.shape == (1,)
        assert state.mults[0] == 2

    def test_trace_includes_complement(self):
        state = EigenState.isotropic(4, 0.25)
        assert state.trace() == pytest.approx(1.0)

    def test_leading_subspace_prefers_larger_values(self):
        state = EigenState.from_eigenpairs([0.9, 0.4], np.eye(3)[:, :2], dim=3)
        lead = state.leading_subspace(1)
        np.testing.assert_allclose(np.abs(lead[:, 0]), [1.0, 0.0, 0.0])

    def test_leading_subspace_uses_complement_when_larger(self):
        from dataclasses import replace

        base = EigenState.from_eigenpairs([0.2], np.eye(3)[:, :1], dim=3)
        state = replace(base, comp=0.5)
        lead = state.leading_subspace(2)
        # both leading directions live in the complement of e1
        np.testing.assert_allclose(lead[0, :], [0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(lead.T @ lead, np.eye(2), atol=1e-12)

    def test_leading_subspace_pads_when_rank_short(self):
        state = EigenState.from_eigenpairs([0.8], np.eye(3)[:, :1], dim=3)
        lead = state.leading_subspace(3)
        np.testing.assert_allclose(lead.T @ lead, np.eye(3), atol=1e-12)

    def test_orthonormal_completion(self):
        rng = np.random.default_rng(1)
        q, _ = np.linalg.qr(rng.standard_normal((6, 2)))
        comp = orthonormal_completion(q, 3)
        np.testing.assert_allclose(comp.T @ comp, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(q.T @ comp, np.zeros((2, 3)), atol=1e-12)
        with pytest.raises(ValueError):
            orthonormal_completion(q, 5)

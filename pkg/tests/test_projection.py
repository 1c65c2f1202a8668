"""Spectral projections: shift scan, rank-capped sweep, KL projection."""

import itertools
import math
from dataclasses import replace

import numpy as np
import pytest

from streampca.eigenstate import EigenState, reconstruct
from streampca.projection import (
    SpectrumInfeasibleError,
    SpectrumView,
    find_shift,
    project_capped_rank,
    project_capped_simplex,
    project_entropic,
)
from streampca.selftest import capped_simplex_oracle, _random_state


def diag_state(values, dim=None):
    values = np.asarray(values, dtype=np.float64)
    d = values.shape[0] if dim is None else dim
    return EigenState.from_eigenpairs(values, np.eye(d)[:, : values.shape[0]], dim=d)


def full_spectrum(state):
    """Expanded length-d spectrum including the complement value."""
    out = np.concatenate(
        [state.expanded_eigvals(), np.full(state.dim - state.rank, state.comp)]
    )
    return np.sort(out)[::-1]


def capped_rank_oracle(values, k, K):
    """Brute force over every support of size <= K of the expanded spectrum."""
    v = np.asarray(values, dtype=np.float64)
    d = v.shape[0]
    best = None
    for size in range(1, K + 1):
        for support in itertools.combinations(range(d), size):
            idx = list(support)
            try:
                proj = capped_simplex_oracle(v[idx], k)
            except (AssertionError, ValueError):
                continue
            y = np.zeros(d)
            y[idx] = proj
            dist = float(np.sum((y - v) ** 2))
            if best is None or dist < best[0] - 1e-12:
                best = (dist, y)
    assert best is not None
    return best[1]


class TestFindShift:
    def test_identity_case(self):
        view = SpectrumView([0.5, 0.3, 0.2], [1, 1, 1], dim=3, target_trace=1)
        assert find_shift(view) == pytest.approx(0.0, abs=1e-12)

    def test_negative_shift(self):
        view = SpectrumView([0.9, 0.5, 0.2], [1, 1, 1], dim=3, target_trace=1)
        s = find_shift(view)
        assert s == pytest.approx(-0.2, abs=1e-12)
        np.testing.assert_allclose(
            np.clip(np.array([0.9, 0.5, 0.2]) + s, 0, 1), [0.7, 0.3, 0.0], atol=1e-12
        )

    def test_interior_case_with_multiplicities(self):
        # 2*(0.8+S) + (0.3+S) + 2*(0.0+S) = 2  =>  1.9 + 5 S = 2
        view = SpectrumView([0.8, 0.3, 0.0], [2, 1, 2], dim=5, target_trace=2)
        s = find_shift(view)
        assert s == pytest.approx(0.02, abs=1e-12)

    def test_clipped_top(self):
        view = SpectrumView([1.5, 0.4], [1, 1], dim=2, target_trace=1)
        s = find_shift(view)
        spectrum = np.clip(np.array([1.5, 0.4]) + s, 0, 1)
        np.testing.assert_allclose(spectrum, [1.0, 0.0], atol=1e-12)

    def test_trace_contract_random(self):
        rng = np.random.default_rng(17)
        for _ in range(500):
            d = int(rng.integers(1, 12))
            k = int(rng.integers(1, d + 1))
            vals = rng.uniform(-1, 3, size=d)
            s = find_shift(SpectrumView(vals, np.ones(d, dtype=int), d, k))
            total = float(np.clip(vals + s, 0, 1).sum())
            assert abs(total - k) <= 1e-10

    def test_oracle_equivalence(self):
        rng = np.random.default_rng(23)
        for _ in range(1000):
            d = int(rng.integers(1, 11))
            k = int(rng.integers(1, d + 1))
            vals = rng.uniform(-1, 3, size=d)
            s = find_shift(SpectrumView(vals, np.ones(d, dtype=int), d, k))
            np.testing.assert_allclose(
                np.clip(vals + s, 0, 1), capped_simplex_oracle(vals, k), atol=1e-8
            )

    def test_multiplicity_compression_matches_expanded(self):
        rng = np.random.default_rng(29)
        for _ in range(200):
            n = int(rng.integers(1, 6))
            vals = rng.uniform(-1, 2, size=n)
            mults = rng.integers(1, 4, size=n)
            d = int(mults.sum())
            k = int(rng.integers(1, d + 1))
            s_compressed = find_shift(SpectrumView(vals, mults, d, k))
            expanded = np.repeat(vals, mults)
            s_expanded = find_shift(
                SpectrumView(expanded, np.ones(d, dtype=int), d, k)
            )
            got = np.clip(np.repeat(vals, mults) + s_compressed, 0, 1)
            want = np.clip(expanded + s_expanded, 0, 1)
            np.testing.assert_allclose(np.sort(got), np.sort(want), atol=1e-10)

    def test_infeasible_target(self):
        view = SpectrumView([0.5], [2], dim=2, target_trace=2)
        find_shift(view)  # k = d is feasible (everything clips to one)
        with pytest.raises(SpectrumInfeasibleError):
            find_shift(SpectrumView([0.5], [2], dim=2, target_trace=3))

    def test_view_validation(self):
        with pytest.raises(ValueError, match="multiplicities sum"):
            SpectrumView([0.5], [1], dim=2, target_trace=1)
        with pytest.raises(ValueError, match="positive"):
            SpectrumView([0.5, 0.1], [1, 0], dim=1, target_trace=1)


class TestProjectCappedSimplex:
    def test_spec_spectrum_example(self):
        state = diag_state([0.9, 0.5, 0.2])
        out = project_capped_simplex(state, 1)
        np.testing.assert_allclose(out.expanded_eigvals(), [0.7, 0.3], atol=1e-12)
        assert out.rank == 2
        assert out.comp == 0.0

    def test_idempotent_on_feasible(self):
        state = diag_state([0.6, 0.4])
        out = project_capped_simplex(state, 1)
        np.testing.assert_allclose(reconstruct(out), reconstruct(state), atol=1e-12)

    def test_first_iterate_clips_to_projector(self):
        # eta * x x^T with eta * |x|^2 >= 1 projects to the rank-one projector
        x = np.array([0.6, 0.8])
        state = EigenState.from_eigenpairs([1.5], (x / np.linalg.norm(x))[:, None], dim=2)
        out = project_capped_simplex(state, 1)
        np.testing.assert_allclose(out.expanded_eigvals(), [1.0], atol=1e-12)
        np.testing.assert_allclose(
            reconstruct(out), np.outer(x, x) / np.dot(x, x), atol=1e-12
        )

    def test_positive_shift_lifts_complement(self):
        # trace 0.5 < k = 1 in d = 2: the implicit zero takes the shift
        state = diag_state([0.5], dim=2)
        out = project_capped_simplex(state, 1)
        np.testing.assert_allclose(out.expanded_eigvals(), [0.75], atol=1e-12)
        assert out.comp == pytest.approx(0.25, abs=1e-12)
        assert out.trace() == pytest.approx(1.0, abs=1e-12)

    def test_drop_and_lift_materializes(self):
        # adversarial: negative stored value dropped while the complement lifts
        base = diag_state([1.2, -0.6], dim=4)
        state = replace(base, comp=0.3)
        out = project_capped_simplex(state, 2)
        dense = reconstruct(state)
        expected_spec = capped_simplex_oracle(np.diag(dense), 2)
        np.testing.assert_allclose(
            np.sort(np.linalg.eigvalsh(reconstruct(out))),
            np.sort(expected_spec),
            atol=1e-10,
        )
        out.validate()

    def test_matches_oracle_on_random_states(self):
        rng = np.random.default_rng(31)
        for _ in range(300):
            d = int(rng.integers(1, 9))
            state = _random_state(rng, d)
            k = int(rng.integers(1, d + 1))
            out = project_capped_simplex(state, k)
            want = capped_simplex_oracle(full_spectrum(state), k)
            np.testing.assert_allclose(full_spectrum(out), want, atol=1e-8)
            assert out.trace() == pytest.approx(k, abs=1e-8)
            out.validate()

    def test_basis_subset_of_input(self):
        state = diag_state([0.9, 0.5, 0.2])
        out = project_capped_simplex(state, 1)
        # output columns are (up to sign) a subset of the input columns
        overlap = np.abs(state.basis.T @ out.basis)
        assert np.allclose(np.sort(overlap.max(axis=0)), [1.0, 1.0], atol=1e-12)


class TestProjectCappedRank:
    def test_sweep_example(self):
        state = diag_state([0.9, 0.8, 0.5])
        out = project_capped_rank(state, 1, 2)
        np.testing.assert_allclose(out.expanded_eigvals(), [0.55, 0.45], atol=1e-12)
        assert out.rank == 2

    def test_inactive_constraint_is_identity(self):
        state = diag_state([0.6, 0.4], dim=3)
        out = project_capped_rank(state, 1, 2)
        np.testing.assert_allclose(reconstruct(out), reconstruct(state), atol=1e-12)

    def test_equal_cap_forces_projector(self):
        state = diag_state([3.0, 2.0])
        out = project_capped_rank(state, 1, 1)
        np.testing.assert_allclose(out.expanded_eigvals(), [1.0], atol=1e-12)
        np.testing.assert_allclose(reconstruct(out), np.diag([1.0, 0.0]), atol=1e-12)

    def test_matches_simplex_when_cap_at_dimension(self):
        rng = np.random.default_rng(37)
        for _ in range(300):
            d = int(rng.integers(1, 9))
            state = _random_state(rng, d)
            k = int(rng.integers(1, d + 1))
            a = project_capped_rank(state, k, d)
            b = project_capped_simplex(state, k)
            np.testing.assert_array_equal(a.eigvals, b.eigvals)
            np.testing.assert_array_equal(a.mults, b.mults)
            assert a.comp == b.comp

    def test_matches_support_bruteforce(self):
        rng = np.random.default_rng(41)
        for _ in range(200):
            d = int(rng.integers(2, 7))
            state = _random_state(rng, d)
            K = int(rng.integers(1, d))  # strictly below d: sweep path
            k = int(rng.integers(1, K + 1))
            out = project_capped_rank(state, k, K)
            want = capped_rank_oracle(full_spectrum(state), k, K)
            np.testing.assert_allclose(
                full_spectrum(out), np.sort(want)[::-1], atol=1e-8
            )
            assert out.rank <= K
            assert out.trace() == pytest.approx(k, abs=1e-8)
            out.validate()

    def test_idempotent(self):
        rng = np.random.default_rng(43)
        for _ in range(100):
            d = int(rng.integers(2, 8))
            state = _random_state(rng, d)
            K = int(rng.integers(1, d + 1))
            k = int(rng.integers(1, K + 1))
            once = project_capped_rank(state, k, K)
            twice = project_capped_rank(once, k, K)
            np.testing.assert_allclose(
                reconstruct(twice), reconstruct(once), atol=1e-10
            )

    def test_lift_with_rank_budget(self):
        # trace below target with spare rank budget: zeros are lifted into
        # materialized directions, up to exactly K of them
        state = diag_state([0.01], dim=8)
        out = project_capped_rank(state, 2, 3)
        assert out.rank == 3
        assert out.comp == 0.0
        assert out.trace() == pytest.approx(2.0, abs=1e-10)
        want = capped_rank_oracle(full_spectrum(state), 2, 3)
        np.testing.assert_allclose(full_spectrum(out), np.sort(want)[::-1], atol=1e-10)

    def test_infeasible_parameters(self):
        state = diag_state([0.5, 0.5])
        with pytest.raises(SpectrumInfeasibleError):
            project_capped_rank(state, 2, 1)


class TestProjectEntropic:
    def test_already_feasible(self):
        state = diag_state([0.5, 0.5])
        out = project_entropic(state, 1)
        np.testing.assert_allclose(out.expanded_eigvals(), [0.5, 0.5], atol=1e-12)

    def test_one_capping_round(self):
        state = diag_state([4.0, 1.0, 1.0])
        out = project_entropic(state, 2)
        np.testing.assert_allclose(out.expanded_eigvals(), [1.0, 0.5, 0.5], atol=1e-12)

    def test_both_cap(self):
        state = diag_state([2.0, 2.0])
        out = project_entropic(state, 2)
        np.testing.assert_allclose(out.expanded_eigvals(), [1.0, 1.0], atol=1e-12)

    def test_kl_optimality_conditions(self):
        # optimum has the form y_i = min(1, theta * v_i) with sum = k
        rng = np.random.default_rng(47)
        for _ in range(300):
            d = int(rng.integers(1, 9))
            k = int(rng.integers(1, d + 1))
            vals = rng.uniform(0.05, 3.0, size=d)
            out = project_entropic(diag_state(vals), k)
            y = np.sort(full_spectrum(out))[::-1]
            v = np.sort(vals)[::-1]
            assert y.sum() == pytest.approx(k, abs=1e-8)
            assert np.all(y > 0) and np.all(y <= 1 + 1e-12)
            free = y < 1.0 - 1e-12
            if free.any():
                ratios = y[free] / v[free]
                theta = ratios[0]
                np.testing.assert_allclose(ratios, theta, rtol=1e-8)
                # capped entries would overflow the cap at this ratio
                assert np.all(v[~free] * theta >= 1.0 - 1e-8)

    def test_complement_scaled_as_group(self):
        state = EigenState.isotropic(4, 0.5)
        out = project_entropic(state, 1)
        assert out.comp == pytest.approx(0.25, abs=1e-12)
        assert out.trace() == pytest.approx(1.0, abs=1e-12)

    def test_requires_positive_spectrum(self):
        with pytest.raises(ValueError, match="positive"):
            project_entropic(diag_state([0.5], dim=2), 1)

    def test_rejects_bad_target(self):
        with pytest.raises(SpectrumInfeasibleError):
            project_entropic(diag_state([0.5, 0.5]), 3)


class TestSelftestSuites:
    def test_suites_pass(self):
        from streampca.selftest import run_selftest

        results = run_selftest()
        assert all(r.passed for r in results)
        assert all(r.instances >= 1000 for r in results)

    def test_fault_injection_detected(self):
        from streampca.selftest import run_selftest

        results = run_selftest(inject_fault=True)
        assert all(not r.passed for r in results)

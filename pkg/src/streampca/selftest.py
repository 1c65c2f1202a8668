"""Embedded oracle-equivalence suites, runnable from the CLI.

Numerical kernels deserve field verifiability: these suites re-derive the
core results by independent brute-force routes and compare.

* projection suite: the shift-scan projection against a brute-force scan of
  every clip-threshold pair of the KKT characterization.
* rank-one suite: the factored eigen-update against dense matrix arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eigenstate import EigenState, rank1_update, reconstruct
from .projection import SpectrumView, find_shift


def capped_simplex_oracle(values: np.ndarray, k: int, tol: float = 1e-9) -> np.ndarray:
    """Brute-force Frobenius projection of a vector onto {0 <= y <= 1, sum y = k}.

    In the descending sort, the optimum clips some top block to one and some
    bottom block to zero, shifting the middle by a constant.  Every such
    clip-threshold pair is scanned, candidates are validated by their total,
    and all valid candidates are checked to agree before one is returned.
    This is the KKT characterization (shift = minus the trace multiplier)
    made executable; O(d^2) pairs, O(d) work each.
    """
    v = np.asarray(values, dtype=np.float64)
    d = v.shape[0]
    if not 0 <= k <= d:
        raise ValueError(f"infeasible target {k} for {d} values")
    sv = np.sort(v)[::-1]
    prefix = np.concatenate([[0.0], np.cumsum(sv)])
    shifts = []
    for a in range(d + 1):
        for b in range(a + 1, d + 1):
            shifts.append((k - a - (prefix[b] - prefix[a])) / (b - a))
        # Empty interior between blocks: any shift in the separating interval.
        lo = 1.0 - sv[a - 1] if a > 0 else None
        hi = -sv[a] if a < d else None
        if lo is not None and hi is not None:
            if lo <= hi:
                shifts.append(0.5 * (lo + hi))
        elif lo is not None:
            shifts.append(lo)
        elif hi is not None:
            shifts.append(hi)
    result = None
    for s in shifts:
        y = np.clip(v + s, 0.0, 1.0)
        if abs(float(y.sum()) - k) <= tol:
            if result is None:
                result = y
            elif np.max(np.abs(y - result)) > tol:
                raise AssertionError("oracle found inconsistent optima")
    if result is None:
        raise AssertionError("oracle found no feasible clip-threshold pair")
    return result


@dataclass
class SuiteResult:
    name: str
    instances: int
    failures: int

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def line(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (
            f"[{status}] {self.name}: {self.instances - self.failures}"
            f"/{self.instances} instances"
        )


def projection_suite(
    instances: int = 1000, seed: int = 0, inject_fault: bool = False
) -> SuiteResult:
    """Shift-scan projection vs. the brute-force clip-threshold oracle."""
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(instances):
        d = int(rng.integers(1, 11))
        k = int(rng.integers(1, d + 1))
        values = rng.uniform(-1.0, 3.0, size=d)
        shift = find_shift(SpectrumView(values, np.ones(d, dtype=np.int64), d, k))
        got = np.clip(values + shift, 0.0, 1.0)
        if inject_fault:
            got = got + 1e-3
        expected = capped_simplex_oracle(values, k)
        if np.max(np.abs(got - expected)) > 1e-8:
            failures += 1
    return SuiteResult("projection-vs-clip-threshold-oracle", instances, failures)


def _random_state(rng: np.random.Generator, d: int) -> EigenState:
    m = int(rng.integers(0, d + 1))
    mat = rng.standard_normal((d, max(m, 1)))
    q, _ = np.linalg.qr(mat)
    basis = q[:, :m]
    values = np.sort(rng.uniform(0.0, 2.0, size=m))[::-1]
    comp = float(rng.uniform(0.0, 1.0)) if (m < d and rng.random() < 0.3) else 0.0
    state = EigenState.from_eigenpairs(values, basis, dim=d)
    if comp:
        from dataclasses import replace

        state = replace(state, comp=comp)
    return state


def rank1_suite(
    instances: int = 1000, seed: int = 1, inject_fault: bool = False
) -> SuiteResult:
    """Factored rank-one update vs. dense matrix arithmetic."""
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(instances):
        d = int(rng.integers(1, 17))
        state = _random_state(rng, d)
        x = rng.standard_normal(d)
        eta = float(rng.uniform(0.0, 2.0))
        updated = rank1_update(state, x, eta)
        expected = reconstruct(state) + eta * np.outer(x, x)
        got = reconstruct(updated)
        if inject_fault:
            got = got + 1e-3
        if np.max(np.abs(got - expected)) > 1e-8:
            failures += 1
        if updated.rank > state.rank + 1:
            failures += 1
    return SuiteResult("rank1-update-vs-dense-arithmetic", instances, failures)


def run_selftest(inject_fault: bool = False) -> list[SuiteResult]:
    return [
        projection_suite(inject_fault=inject_fault),
        rank1_suite(inject_fault=inject_fault),
    ]

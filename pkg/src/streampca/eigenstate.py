"""Compact eigen-state representation and the rank-one eigen-update.

The iterate of every solver in this package is a symmetric PSD matrix kept in
factored form,

    M = U diag(lam) U^T + comp * (I - U U^T),

where ``U`` is a d x m matrix with orthonormal columns, ``lam`` the per-column
eigenvalues (stored compressed as distinct values with multiplicities), and
``comp`` a single shared eigenvalue for the untouched (d - m)-dimensional
complement.  ``comp = 0`` is the ordinary low-rank case; a nonzero ``comp``
arises when a trace-equality projection lifts the complement uniformly (early
iterations, when the iterate's trace is still below the target), or as the
isotropic starting point of multiplicative updates.  Keeping the complement as
a scalar is what keeps every update O(m^2 d) instead of O(d^3).

Updating M to M + eta * x x^T costs one (m+1) x (m+1) dense symmetric
eigendecomposition plus one basis rotation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

#: A sample is a plain length-d float vector.
Sample = np.ndarray

# Distinct eigenvalues closer than this are merged into one value with summed
# multiplicity (exact ties never occur in floating point).
MERGE_TOL = 1e-9

# Residual components below this relative size are treated as in-span.
RESIDUAL_RTOL = 1e-10

# Basis columns are re-orthonormalized after this many rank-one rotations.
REORTH_PERIOD = 512


class EigenConvergenceError(RuntimeError):
    """The dense symmetric eigensolver failed to converge."""


def _compress_descending(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Group a descending eigenvalue list into (distinct values, multiplicities).

    Values within MERGE_TOL of the first member of their group are merged; the
    merged value is the multiplicity-weighted mean, so no expanded eigenvalue
    moves by more than MERGE_TOL.
    """
    n = values.shape[0]
    if n == 0:
        return values.copy(), np.zeros(0, dtype=np.int64)
    distinct = []
    mults = []
    anchor = values[0]
    start = 0
    for i in range(1, n):
        if anchor - values[i] > MERGE_TOL:
            group = values[start:i]
            distinct.append(group.mean() if i - start > 1 else group[0])
            mults.append(i - start)
            anchor = values[i]
            start = i
    group = values[start:]
    distinct.append(group.mean() if n - start > 1 else group[0])
    mults.append(n - start)
    return np.asarray(distinct, dtype=np.float64), np.asarray(mults, dtype=np.int64)


@dataclass(frozen=True)
class EigenState:
    """Immutable snapshot of the factored iterate.

    Attributes:
        dim: ambient dimension d.
        basis: d x m matrix with orthonormal columns (m = stored rank).
        eigvals: length-n distinct stored eigenvalues, descending.
        mults: length-n positive multiplicities; sum(mults) == m.
        comp: shared eigenvalue of the complement of span(basis), with
            implicit multiplicity d - m.  Zero for ordinary low-rank states.
        orth_age: rank-one rotations applied since the basis was last
            re-orthonormalized.
    """

    dim: int
    basis: np.ndarray
    eigvals: np.ndarray
    mults: np.ndarray
    comp: float = 0.0
    orth_age: int = 0

    @classmethod
    def zero(cls, dim: int) -> "EigenState":
        """The all-zero matrix (no stored columns, zero complement)."""
        if dim < 1:
            raise ValueError(f"dimension must be positive, got {dim}")
        return cls(
            dim=dim,
            basis=np.zeros((dim, 0)),
            eigvals=np.zeros(0),
            mults=np.zeros(0, dtype=np.int64),
        )

    @classmethod
    def isotropic(cls, dim: int, value: float) -> "EigenState":
        """value * I, kept entirely in the complement scalar."""
        if dim < 1:
            raise ValueError(f"dimension must be positive, got {dim}")
        state = cls.zero(dim)
        return replace(state, comp=float(value))

    @classmethod
    def from_eigenpairs(
        cls, values: np.ndarray, vectors: np.ndarray, dim: int | None = None
    ) -> "EigenState":
        """Build a state from explicit (eigenvalue, column) pairs.

        Pairs are sorted descending and compressed; zero values are kept, so
        drop them beforehand if a minimal representation is wanted.
        """
        values = np.asarray(values, dtype=np.float64)
        vectors = np.asarray(vectors, dtype=np.float64)
        d = vectors.shape[0] if dim is None else dim
        order = np.argsort(values)[::-1]
        values = values[order]
        vectors = vectors[:, order]
        eigvals, mults = _compress_descending(values)
        return cls(dim=d, basis=vectors, eigvals=eigvals, mults=mults)

    @property
    def rank(self) -> int:
        """Number of stored basis columns."""
        return self.basis.shape[1]

    def expanded_eigvals(self) -> np.ndarray:
        """Per-column eigenvalues (length m, descending)."""
        return np.repeat(self.eigvals, self.mults)

    def trace(self) -> float:
        return float(self.eigvals @ self.mults) + self.comp * (self.dim - self.rank)

    def leading_subspace(self, k: int) -> np.ndarray:
        """Orthonormal basis (d x k) of the top-k eigen-directions.

        When fewer than k directions carry eigenvalues above the complement
        value (or exist at all), the basis is padded with a deterministic
        orthonormal completion; ties between stored and complement values are
        broken toward stored columns.
        """
        if not 1 <= k <= self.dim:
            raise ValueError(f"k={k} out of range for dim={self.dim}")
        m = self.rank
        vals = self.expanded_eigvals()
        above = int(np.sum(vals >= self.comp))  # stored values beating the complement
        take_stored = min(m, max(min(k, above), k - (self.dim - m)))
        short = k - take_stored
        if short == 0:
            return self.basis[:, :take_stored].copy()
        completion = orthonormal_completion(self.basis, short)
        return np.hstack([self.basis[:, :take_stored], completion])

    def validate(self, tol: float = 1e-8) -> None:
        """Check the representation invariants (raises AssertionError)."""
        d, m = self.basis.shape
        assert d == self.dim
        assert int(self.mults.sum()) == m
        assert np.all(self.mults > 0)
        assert np.all(np.isfinite(self.eigvals)) and math.isfinite(self.comp)
        assert np.all(np.diff(self.eigvals) <= MERGE_TOL)
        if m:
            gram = self.basis.T @ self.basis
            assert np.max(np.abs(gram - np.eye(m))) <= tol
        if m == d:
            assert self.comp == 0.0


def orthonormal_completion(basis: np.ndarray, count: int) -> np.ndarray:
    """Deterministic orthonormal columns spanning part of the complement.

    Canonical basis vectors are projected out of ``basis`` (and out of the
    already accepted columns) and kept when a significant residual remains.
    """
    d, m = basis.shape
    if count < 0 or count > d - m:
        raise ValueError(f"cannot complete {m}-column basis in R^{d} by {count}")
    out = np.zeros((d, count))
    got = 0
    for i in range(d):
        if got == count:
            break
        v = np.zeros(d)
        v[i] = 1.0
        for _ in range(2):  # twice for numerical orthogonality
            if m:
                v -= basis @ (basis.T @ v)
            if got:
                v -= out[:, :got] @ (out[:, :got].T @ v)
        norm = np.linalg.norm(v)
        if norm > 0.5 / math.sqrt(d):
            out[:, got] = v / norm
            got += 1
    if got < count:
        raise RuntimeError("orthonormal completion failed")  # pragma: no cover
    return out


def _eigh_2x2(a: float, b: float, c: float) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form eigendecomposition of [[a, b], [b, c]], descending."""
    if b == 0.0:
        if a >= c:
            return np.array([a, c]), np.eye(2)
        return np.array([c, a]), np.array([[0.0, 1.0], [1.0, 0.0]])
    half_tr = 0.5 * (a + c)
    s = math.hypot(0.5 * (a - c), b)
    lam1 = half_tr + s
    lam2 = half_tr - s
    v1 = np.array([b, lam1 - a])
    norm = math.hypot(v1[0], v1[1])
    if norm < 1e-300:  # pragma: no cover - b != 0 keeps this unreachable
        v1 = np.array([lam1 - c, b])
        norm = math.hypot(v1[0], v1[1])
    v1 /= norm
    vecs = np.array([[v1[0], -v1[1]], [v1[1], v1[0]]])
    return np.array([lam1, lam2]), vecs


def dense_eigensymm(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a small dense symmetric matrix.

    Returns (eigenvalues descending, orthonormal eigenvectors as columns)
    with A = V diag(lam) V^T to within 1e-8 * max(1, |A|_max).

    Raises:
        ValueError: non-square, non-finite, or non-symmetric (beyond
            1e-10 * max(1, |A|_max)) input.
        EigenConvergenceError: the iterative solver did not converge.
    """
    A = np.asarray(matrix, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    n = A.shape[0]
    if n == 0:
        return np.zeros(0), np.zeros((0, 0))
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(A))))
    if float(np.max(np.abs(A - A.T))) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric to 1e-10")
    if n == 1:
        return A[0].copy(), np.ones((1, 1))
    if n == 2:
        return _eigh_2x2(A[0, 0], 0.5 * (A[0, 1] + A[1, 0]), A[1, 1])
    try:
        lam, vecs = np.linalg.eigh(0.5 * (A + A.T))
    except np.linalg.LinAlgError as exc:
        raise EigenConvergenceError(f"eigendecomposition failed: {exc}") from exc
    return lam[::-1].copy(), vecs[:, ::-1].copy()


def _check_sample(state: EigenState, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (state.dim,):
        raise ValueError(f"sample shape {x.shape} does not match dim {state.dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("sample has non-finite entries")
    return x


def _maybe_reorthonormalize(basis: np.ndarray, age: int) -> tuple[np.ndarray, int]:
    if age < REORTH_PERIOD or basis.shape[1] == 0:
        return basis, age
    q, r = np.linalg.qr(basis)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs, 0


def rank1_update(state: EigenState, x: Sample, eta: float) -> EigenState:
    """Eigendecomposition of M + eta * x x^T, unprojected.

    The sample is split into its in-span component and the residual; if the
    residual is significant the basis is extended by one column and an
    (m+1) x (m+1) bordered matrix is eigendecomposed, otherwise an m x m one.
    Eigenvalues of the result may lie outside [0, 1].  Cost O(m^2 d).
    """
    x = _check_sample(state, x)
    if eta < 0 or not math.isfinite(eta):
        raise ValueError(f"eta must be finite and >= 0, got {eta}")
    z = math.sqrt(eta) * x
    m = state.rank
    U = state.basis
    if m:
        zh = U.T @ z
        zperp = z - U @ zh
    else:
        zh = np.zeros(0)
        zperp = z
    r = float(np.linalg.norm(zperp))
    # r is exactly zero only on a measure-zero set; absorb cancellation noise.
    threshold = RESIDUAL_RTOL * math.sqrt(eta) * float(np.linalg.norm(x))
    expanded = state.expanded_eigvals()
    if r > threshold:
        b = np.append(zh, r)
        B = np.outer(b, b)
        B[np.arange(m), np.arange(m)] += expanded
        B[m, m] += state.comp
        lam, V = dense_eigensymm(B)
        new_basis = np.hstack([U, zperp[:, None] / r]) @ V
    else:
        if m == 0:
            return state
        B = np.outer(zh, zh)
        B[np.arange(m), np.arange(m)] += expanded
        lam, V = dense_eigensymm(B)
        new_basis = U @ V
    new_basis, age = _maybe_reorthonormalize(new_basis, state.orth_age + 1)
    eigvals, mults = _compress_descending(lam)
    comp = state.comp if new_basis.shape[1] < state.dim else 0.0
    return EigenState(
        dim=state.dim,
        basis=new_basis,
        eigvals=eigvals,
        mults=mults,
        comp=comp,
        orth_age=age,
    )


def reconstruct(state: EigenState) -> np.ndarray:
    """Materialize the d x d matrix (testing and terminal use only)."""
    U = state.basis
    M = (U * state.expanded_eigvals()) @ U.T
    if state.comp != 0.0:
        M += state.comp * (np.eye(state.dim) - U @ U.T)
    return M

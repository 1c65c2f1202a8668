"""The five stochastic PCA solvers driven by a common step loop.

* ``msg_step``: rank-one eigen-update followed by the Frobenius projection
  onto {0 <= M <= I, tr M = k}.
* ``capped_msg_step``: the same with the additional hard rank cap K.
* ``incremental_step``: step-size-free rank-one update truncated to the k
  largest eigenvalues (no shift, no capping).
* ``meg_step``: multiplicative spectral update exp(log M + eta x x^T),
  computed in the (rank+1)-dimensional invariant subspace, followed by the
  entropic projection.
* ``power_step``: projected gradient step on the orthonormal basis itself.

``run`` executes a configured solver against a sample stream, records the
per-iteration trace (rank, spectrum, runtime proxy), optionally maintains the
running iterate average, and optionally rounds the result to a mixture of
rank-k projectors (``round_to_rank_k``).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .eigenstate import (
    EigenState,
    _compress_descending,
    _maybe_reorthonormalize,
    dense_eigensymm,
    orthonormal_completion,
    rank1_update,
    reconstruct,
)
from .projection import (
    project_capped_rank,
    project_capped_simplex,
    project_entropic,
)

ALGORITHMS = ("msg", "capped_msg", "incremental", "meg", "power")
SCHEDULES = ("fixed", "decay")

_TIE_RTOL = 1e-12


class RankCollapseError(RuntimeError):
    """The power-method basis lost a dimension (dependent columns)."""


@dataclass
class SolverConfig:
    """Everything needed to reproduce a run, including the seed.

    ``schedule="fixed"`` uses the horizon-aware constant eta = sqrt(k/T);
    ``schedule="decay"`` uses eta_t = c / sqrt(t) with t starting at 1.
    ``K`` applies to capped MSG only and defaults to k + 1; values of K at or
    above d make the rank cap vacuous (and the trajectory identical to MSG).
    """

    algorithm: str
    d: int
    k: int
    T: int
    K: int | None = None
    schedule: str = "decay"
    c: float = 1.0
    seed: int = 0
    averaging: bool = False
    rounding: bool = False
    dense_threshold: int = 4096
    record_eigvals: bool = True
    record_checksum: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}; choose from {SCHEDULES}")
        if not 1 <= self.k <= self.d:
            raise ValueError(f"need 1 <= k <= d, got k={self.k}, d={self.d}")
        if self.K is None:
            self.K = self.k + 1
        if self.K < self.k:
            raise ValueError(f"need K >= k, got K={self.K}, k={self.k}")
        if self.T < 0:
            raise ValueError(f"iteration count must be >= 0, got T={self.T}")
        if self.c <= 0:
            raise ValueError(f"step constant must be positive, got c={self.c}")
        if self.schedule == "fixed" and self.T == 0:
            raise ValueError("fixed schedule needs a positive horizon T")
        if self.rounding and self.algorithm == "incremental":
            raise ValueError(
                "rounding needs trace-k feasible iterates; incremental iterates are not"
            )

    def eta(self, t: int) -> float:
        if self.schedule == "fixed":
            return math.sqrt(self.k / self.T)
        return self.c / math.sqrt(t)


def msg_step(state: EigenState, x: np.ndarray, eta: float, k: int) -> EigenState:
    """One matrix-stochastic-gradient step: update then project."""
    return project_capped_simplex(rank1_update(state, x, eta), k)


def capped_msg_step(
    state: EigenState, x: np.ndarray, eta: float, k: int, K: int
) -> EigenState:
    """One rank-capped step: update then project with rank(M) <= K."""
    return project_capped_rank(rank1_update(state, x, eta), k, K)


def _truncate_to_rank(state: EigenState, k: int, prev_basis: np.ndarray) -> EigenState:
    """Best rank-k approximation; boundary ties keep the direction with the
    larger overlap with the previous basis (determinism for traces)."""
    m = state.rank
    if m <= k:
        return state
    vals = state.expanded_eigvals()
    tol = _TIE_RTOL * max(1.0, abs(float(vals[0])))
    keep = np.arange(k)
    if vals[k - 1] - vals[k] <= tol:
        tied = np.flatnonzero(np.abs(vals - vals[k - 1]) <= tol)
        lo = int(tied[0])
        group = tied.tolist()
        if prev_basis.shape[1]:
            overlaps = np.linalg.norm(prev_basis.T @ state.basis[:, group], axis=0)
        else:
            overlaps = np.zeros(len(group))
        order = sorted(range(len(group)), key=lambda i: (-overlaps[i], i))
        chosen = sorted(group[i] for i in order[: k - lo])
        keep = np.concatenate([np.arange(lo), np.asarray(chosen, dtype=np.int64)])
    eigvals, mults = _compress_descending(vals[keep])
    return EigenState(
        dim=state.dim,
        basis=state.basis[:, keep],
        eigvals=eigvals,
        mults=mults,
        comp=0.0,
        orth_age=state.orth_age,
    )


def incremental_step(state: EigenState, x: np.ndarray, k: int) -> EigenState:
    """Step-size-free update: M <- best rank-k approximation of M + x x^T."""
    if state.comp != 0.0:
        raise ValueError("incremental updates expect a plain low-rank state")
    return _truncate_to_rank(rank1_update(state, x, 1.0), k, state.basis)


def meg_step(state: EigenState, x: np.ndarray, eta: float, k: int) -> EigenState:
    """Multiplicative update M <- exp(log M + eta x x^T), then KL projection.

    The matrix logarithm and exponential are taken on the invariant subspace
    spanned by the stored basis and the new sample, so the cost stays
    O(m^2 d); the complement keeps its shared log-eigenvalue.  The state must
    be strictly positive definite (on a degenerate state the log diverges).
    """
    if eta < 0 or not math.isfinite(eta):
        raise ValueError(f"eta must be finite and >= 0, got {eta}")
    d = state.dim
    m = state.rank
    expanded = state.expanded_eigvals()
    if np.any(expanded <= 0.0) or (m < d and state.comp <= 0.0):
        raise ValueError("multiplicative update on a degenerate (zero) state")
    if eta == 0.0:
        return project_entropic(state, k)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (d,):
        raise ValueError(f"sample shape {x.shape} does not match dim {d}")
    if not np.all(np.isfinite(x)):
        raise ValueError("sample has non-finite entries")

    z = math.sqrt(eta) * x
    U = state.basis
    zh = U.T @ z if m else np.zeros(0)
    zperp = z - U @ zh if m else z
    r = float(np.linalg.norm(zperp))
    log_vals = np.log(expanded)
    if r > 1e-10 * float(np.linalg.norm(z)) and m < d:
        b = np.append(zh, r)
        B = np.outer(b, b)
        B[np.arange(m), np.arange(m)] += log_vals
        B[m, m] += math.log(state.comp)
        lam, V = dense_eigensymm(B)
        basis = np.hstack([U, zperp[:, None] / r]) @ V
    else:
        if m == 0:  # z vanished; nothing moved
            return project_entropic(state, k)
        B = np.outer(zh, zh)
        B[np.arange(m), np.arange(m)] += log_vals
        lam, V = dense_eigensymm(B)
        basis = U @ V
    basis, age = _maybe_reorthonormalize(basis, state.orth_age + 1)
    eigvals, mults = _compress_descending(np.exp(lam))
    comp = state.comp if basis.shape[1] < d else 0.0
    updated = EigenState(
        dim=d, basis=basis, eigvals=eigvals, mults=mults, comp=comp, orth_age=age
    )
    return project_entropic(updated, k)


def power_step(basis: np.ndarray, x: np.ndarray, eta: float) -> np.ndarray:
    """Gradient step U + eta x (x^T U), re-orthonormalized.

    Raises RankCollapseError when the updated columns become dependent.
    """
    basis = np.asarray(basis, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (basis.shape[0],):
        raise ValueError(f"sample shape {x.shape} does not match basis {basis.shape}")
    overlap = x @ basis
    q, rmat = np.linalg.qr(basis + eta * np.outer(x, overlap))
    diag = np.diag(rmat)
    if np.any(np.abs(diag) < 1e-12):
        raise RankCollapseError("power-method basis columns became dependent")
    signs = np.sign(diag)
    return q * signs


@dataclass(frozen=True)
class SubspaceMixture:
    """Convex combination of rank-k projectors: sum_i weights_i B_i B_i^T."""

    weights: np.ndarray
    bases: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.bases)

    def reconstruct(self) -> np.ndarray:
        d = self.bases[0].shape[0]
        out = np.zeros((d, d))
        for w, b in zip(self.weights, self.bases):
            out += w * (b @ b.T)
        return out

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        idx = int(rng.choice(len(self.bases), p=self.weights))
        return self.bases[idx]


def round_to_rank_k(
    target: EigenState | np.ndarray, k: int, rng: np.random.Generator | None = None
) -> tuple[SubspaceMixture, np.ndarray | None]:
    """Decompose a feasible M into <= d weighted rank-k projectors.

    Greedy peeling: repeatedly extract the projector on the top-k available
    eigen-directions with the largest coefficient that keeps the remainder
    feasible (scaled trace k, eigenvalues within the remaining weight).  The
    weighted projector sum reconstructs M; sampling one component by weight
    preserves any linear objective in expectation.

    Returns the mixture and, when ``rng`` is given, one sampled basis.
    """
    if isinstance(target, EigenState):
        pad = target.dim - target.rank
        vals = target.expanded_eigvals()
        vecs = target.basis
        if pad and target.comp > 1e-12:
            vals = np.concatenate([vals, np.full(pad, target.comp)])
            vecs = np.hstack([vecs, orthonormal_completion(vecs, pad)])
            order = np.argsort(-vals, kind="stable")
            vals = vals[order]
            vecs = vecs[:, order]
        d = target.dim
    else:
        dense = np.asarray(target, dtype=np.float64)
        vals, vecs = dense_eigensymm(dense)
        d = dense.shape[0]
    if not 1 <= k <= d:
        raise ValueError(f"k={k} out of range for dim={d}")
    if abs(float(vals.sum()) - k) > 1e-6 * max(1.0, k):
        raise ValueError(f"infeasible input: trace {float(vals.sum()):.6g} != {k}")
    if vals.size and (vals.min() < -1e-8 or vals.max() > 1 + 1e-8):
        raise ValueError("infeasible input: eigenvalues outside [0, 1]")
    if vals.shape[0] < k:
        vecs = np.hstack([vecs, orthonormal_completion(vecs, k - vals.shape[0])])
        vals = np.concatenate([vals, np.zeros(k - vals.shape[0])])
    sigma = np.clip(vals, 0.0, 1.0)

    weights: list[float] = []
    supports: list[np.ndarray] = []
    rho = 1.0
    for _ in range(d):
        if rho <= 1e-12:
            break
        order = np.argsort(-sigma, kind="stable")
        top = order[:k]
        kth = float(sigma[order[k - 1]])
        next_val = float(sigma[order[k]]) if k < sigma.shape[0] else 0.0
        w = min(kth, rho - next_val, rho)
        if w <= 1e-15:
            break
        weights.append(w)
        supports.append(top)
        sigma[top] -= w
        np.clip(sigma, 0.0, None, out=sigma)
        rho -= w
    total = float(sum(weights))
    if total <= 0:
        raise ValueError("rounding produced no components")
    mixture = SubspaceMixture(
        weights=np.asarray(weights) / total,
        bases=[vecs[:, idx] for idx in supports],
    )
    sampled = mixture.sample(rng) if rng is not None else None
    return mixture, sampled


@dataclass
class RunTrace:
    """Per-iteration record of one solver run.

    ``runtime_proxy`` is the cumulative sum of squared iterate ranks, the
    dominant per-iteration cost term.  ``suboptimality`` holds values at the
    evaluation checkpoints only.  ``averaged`` is the dense running mean of
    the iterates when averaging was on and the dimension allowed it.
    """

    config: SolverConfig
    iterations: np.ndarray
    ranks: np.ndarray
    runtime_proxy: np.ndarray
    eig_snapshots: list[np.ndarray] | None
    comps: np.ndarray | None
    suboptimality: dict[int, float]
    final_state: EigenState
    averaged: np.ndarray | None = None
    averaging_supported: bool = True
    mixture: SubspaceMixture | None = None
    sampled_basis: np.ndarray | None = None
    checksum: str | None = None


def evaluation_checkpoints(T: int) -> list[int]:
    """Powers of two up to T, plus T itself."""
    points = []
    p = 1
    while p <= T:
        points.append(p)
        p *= 2
    if T >= 1 and (not points or points[-1] != T):
        points.append(T)
    return points


def _power_state(basis: np.ndarray, d: int) -> EigenState:
    k = basis.shape[1]
    eigvals, mults = _compress_descending(np.ones(k))
    return EigenState(dim=d, basis=basis, eigvals=eigvals, mults=mults)


def _initial_state(config: SolverConfig):
    if config.algorithm == "meg":
        return EigenState.isotropic(config.d, config.k / config.d)
    if config.algorithm == "power":
        rng = np.random.default_rng([config.seed, 0x504F])
        q, rmat = np.linalg.qr(rng.standard_normal((config.d, config.k)))
        signs = np.sign(np.diag(rmat))
        signs[signs == 0] = 1.0
        return q * signs
    return EigenState.zero(config.d)


def run(config: SolverConfig, stream, evaluate=None) -> RunTrace:
    """Execute T steps of the configured algorithm against a sample stream.

    ``evaluate``, when given, is called with the current EigenState at
    power-of-two iterations (and at T) and its value recorded as the
    suboptimality for that checkpoint.  With ``averaging`` on, the running
    mean of the iterates is maintained densely for d up to
    ``dense_threshold`` (above that the final iterate is returned and the
    trace is flagged); with ``rounding`` on, the averaged matrix (or final
    iterate) is decomposed by ``round_to_rank_k`` and one component sampled.
    """
    if stream.dim != config.d:
        raise ValueError(f"stream dim {stream.dim} != config dim {config.d}")
    checkpoints = set(evaluation_checkpoints(config.T))
    state = _initial_state(config)
    is_power = config.algorithm == "power"

    ranks = np.zeros(config.T, dtype=np.int64)
    proxy = np.zeros(config.T, dtype=np.int64)
    snapshots: list[np.ndarray] | None = [] if config.record_eigvals else None
    comps = np.zeros(config.T) if config.record_eigvals else None
    subopt: dict[int, float] = {}
    hasher = hashlib.blake2b(digest_size=16) if config.record_checksum else None

    can_average = config.d <= config.dense_threshold
    mean = np.zeros((config.d, config.d)) if (config.averaging and can_average) else None

    acc = 0
    for t in range(1, config.T + 1):
        x = stream.next()
        if hasher is not None:
            hasher.update(x.tobytes())
        if config.algorithm == "msg":
            state = msg_step(state, x, config.eta(t), config.k)
        elif config.algorithm == "capped_msg":
            state = capped_msg_step(state, x, config.eta(t), config.k, config.K)
        elif config.algorithm == "incremental":
            state = incremental_step(state, x, config.k)
        elif config.algorithm == "meg":
            state = meg_step(state, x, config.eta(t), config.k)
        else:
            state = power_step(state, x, config.eta(t))
        rank = config.k if is_power else state.rank
        acc += rank * rank
        ranks[t - 1] = rank
        proxy[t - 1] = acc
        eigen_view = _power_state(state, config.d) if is_power else state
        if snapshots is not None:
            snapshots.append(eigen_view.expanded_eigvals())
            comps[t - 1] = eigen_view.comp
        if mean is not None:
            mean += (reconstruct(eigen_view) - mean) / t
        if evaluate is not None and t in checkpoints:
            subopt[t] = float(evaluate(eigen_view))

    final_state = _power_state(state, config.d) if is_power else state
    trace = RunTrace(
        config=config,
        iterations=np.arange(1, config.T + 1),
        ranks=ranks,
        runtime_proxy=proxy,
        eig_snapshots=snapshots,
        comps=comps,
        suboptimality=subopt,
        final_state=final_state,
        averaged=mean,
        averaging_supported=(not config.averaging) or can_average,
        checksum=hasher.hexdigest() if hasher is not None else None,
    )
    if config.rounding:
        rng = np.random.default_rng([config.seed, 0x524E44])
        target = mean if mean is not None else final_state
        trace.mixture, trace.sampled_basis = round_to_rank_k(target, config.k, rng)
    return trace

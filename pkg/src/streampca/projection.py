"""Spectral projections onto the trace-k feasible sets.

All three projections act only on eigenvalues; the eigenbasis passes through
untouched (columns are dropped when their eigenvalue is clipped to zero).

* ``project_capped_simplex``: Frobenius projection onto
  {0 <= M <= I, tr M = k}.  The projected spectrum is
  max(0, min(1, sigma + S)) with a single scalar shift S found by a
  two-pointer scan over the sorted distinct eigenvalues.
* ``project_capped_rank``: the same set intersected with rank(M) <= K.
  Because iterates change rank by at most one per step, a sweep over
  largest-value supports of size 1..K suffices.
* ``project_entropic``: the KL (von Neumann entropy) projection used by
  multiplicative updates; iterative cap-at-one and rescale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eigenstate import EigenState, _compress_descending, orthonormal_completion

# Slack for the scan's window-validity checks; absorbs roundoff in S without
# admitting windows that change the projected spectrum beyond ~1e-12.
_SCAN_TOL = 1e-12


class SpectrumInfeasibleError(ValueError):
    """The projection target is unreachable (e.g. k > d)."""


@dataclass(frozen=True)
class SpectrumView:
    """Inputs of the shift search: distinct eigenvalues with multiplicities.

    Multiplicities must sum to ``dim`` (append an explicit zero entry for any
    implicit zero padding before constructing the view, or use
    ``SpectrumView.from_state``).
    """

    eigvals: np.ndarray
    mults: np.ndarray
    dim: int
    target_trace: int

    def __post_init__(self):
        ev = np.asarray(self.eigvals, dtype=np.float64)
        mu = np.asarray(self.mults, dtype=np.int64)
        object.__setattr__(self, "eigvals", ev)
        object.__setattr__(self, "mults", mu)
        if ev.shape != mu.shape or ev.ndim != 1:
            raise ValueError("eigvals and mults must be matching 1-D arrays")
        if np.any(mu <= 0):
            raise ValueError("multiplicities must be positive")
        if int(mu.sum()) != self.dim:
            raise ValueError(
                f"multiplicities sum to {int(mu.sum())}, expected dim={self.dim}"
            )

    @classmethod
    def from_state(cls, state: EigenState, k: int) -> "SpectrumView":
        """View of a state's full spectrum, complement included."""
        pad = state.dim - state.rank
        if pad:
            ev = np.append(state.eigvals, state.comp)
            mu = np.append(state.mults, pad)
        else:
            ev = state.eigvals
            mu = state.mults
        return cls(eigvals=ev, mults=mu, dim=state.dim, target_trace=k)


def find_shift(view: SpectrumView) -> float:
    """Scalar S with sum_i mults_i * max(0, min(1, eigvals_i + S)) = target.

    Two-pointer scan over the ascending distinct eigenvalues: candidate
    solutions keep a window [i, j) of interior values (shifted but not
    clipped), everything below clipped to 0 and everything above to 1.  The
    loop runs at most 2n times; total cost is dominated by the O(n log n)
    sort.

    Raises:
        SpectrumInfeasibleError: no shift reaches the target trace
            (only possible for inconsistent inputs, e.g. k > d or k < 0).
    """
    k = view.target_trace
    d = view.dim
    if not 0 <= k <= d:
        raise SpectrumInfeasibleError(f"target trace {k} not in [0, {d}]")
    order = np.argsort(view.eigvals, kind="stable")
    vals = view.eigvals[order]
    mults = view.mults[order]
    n = vals.shape[0]
    v = vals.tolist()
    mu = mults.tolist()
    i = j = 0
    si = sj = 0.0
    ci = cj = 0
    while i < n:
        if i < j:
            shift = (k - (sj - si) - (d - cj)) / (cj - ci)
            if (
                v[i] + shift >= -_SCAN_TOL
                and v[j - 1] + shift <= 1.0 + _SCAN_TOL
                and (i == 0 or v[i - 1] + shift <= _SCAN_TOL)
                and (j == n or v[j] + shift >= 1.0 - _SCAN_TOL)
            ):
                return shift
        if j < n and (i == j or v[j] - v[i] <= 1.0):
            sj += mu[j] * v[j]
            cj += mu[j]
            j += 1
        else:
            si += mu[i] * v[i]
            ci += mu[i]
            i += 1
    raise SpectrumInfeasibleError(
        f"no feasible shift for target trace {k} in dimension {d}"
    )


def _clip01(values: np.ndarray) -> np.ndarray:
    return np.minimum(1.0, np.maximum(0.0, values))


def project_capped_simplex(state: EigenState, k: int) -> EigenState:
    """Frobenius projection onto {0 <= M <= I, tr M = k}.

    Eigenvectors are unchanged; stored eigenvalues clipped to zero lose their
    basis columns.  A positive shift lifts the complement eigenvalue, which
    stays a scalar.
    """
    shift = find_shift(SpectrumView.from_state(state, k))
    shifted = _clip01(state.eigvals + shift)
    pad = state.dim - state.rank
    comp = float(_clip01(np.asarray(state.comp + shift))) if pad else 0.0

    keep = shifted > 0.0
    col_keep = np.repeat(keep, state.mults)
    basis = state.basis[:, col_keep]
    expanded = np.repeat(shifted, state.mults)[col_keep]
    if comp > 0.0 and basis.shape[1] < state.rank:
        # Some stored directions were clipped to zero while the old complement
        # was lifted: a single scalar cannot carry both, so materialize the
        # old complement.  Solver-generated states never hit this branch
        # (their stored eigenvalues always dominate the complement value).
        lifted = orthonormal_completion(state.basis, pad)
        basis = np.hstack([basis, lifted])
        expanded = np.append(expanded, np.full(pad, comp))
        order = np.argsort(expanded, kind="stable")[::-1]
        basis = basis[:, order]
        expanded = expanded[order]
        comp = 0.0
    eigvals, mults = _compress_descending(expanded)
    return EigenState(
        dim=state.dim,
        basis=basis,
        eigvals=eigvals,
        mults=mults,
        comp=comp,
        orth_age=state.orth_age,
    )


def _support_projection(values: np.ndarray, k: int) -> tuple[np.ndarray, float] | None:
    """Capped-simplex projection of a small expanded value list, or None."""
    j = values.shape[0]
    if k > j:
        return None
    eigvals, mults = _compress_descending(values)
    shift = find_shift(SpectrumView(eigvals, mults, dim=j, target_trace=k))
    projected = np.repeat(_clip01(eigvals + shift), mults)
    return projected, shift


def project_capped_rank(state: EigenState, k: int, K: int) -> EigenState:
    """Frobenius projection onto {0 <= M <= I, tr M = k, rank M <= K}.

    Candidate supports are the largest-value prefixes of the input spectrum
    of size 1..K (dropping a larger eigenvalue while keeping a smaller one
    never helps); each candidate is projected by the shift search and the
    Frobenius-closest result wins, ties broken toward the smaller (larger
    eigenvalue) support.  With at most K+1 input eigenvalues the sweep costs
    O(K^2 log K).
    """
    if k > K:
        raise SpectrumInfeasibleError(f"need k <= K, got k={k}, K={K}")
    if K < 1:
        raise SpectrumInfeasibleError(f"rank cap must be positive, got K={K}")
    if K >= state.dim:
        return project_capped_simplex(state, k)  # rank constraint vacuous

    m = state.rank
    d = state.dim
    stored = state.expanded_eigvals()
    # Expanded spectrum, largest first: stored values with the complement
    # value (multiplicity d - m) merged in.  Only the top K entries can ever
    # be kept; the rest contribute to the dropped mass.
    comp_count = d - m
    top: list[tuple[float, int]] = []  # (value, stored column index or -1)
    si = 0
    ci = 0
    while len(top) < min(K, d):
        take_stored = si < m and (ci >= comp_count or stored[si] >= state.comp)
        if take_stored:
            top.append((stored[si], si))
            si += 1
        else:
            top.append((state.comp, -1))
            ci += 1
    top_vals = np.array([t[0] for t in top])
    total_sq = float(stored @ stored) + state.comp * state.comp * comp_count
    cum_sq = np.cumsum(top_vals * top_vals)

    best = None  # (distance^2, j, projected values)
    for j in range(1, len(top) + 1):
        res = _support_projection(top_vals[:j], k)
        if res is None:
            continue
        projected, _ = res
        dist = float(np.sum((projected - top_vals[:j]) ** 2)) + (
            total_sq - float(cum_sq[j - 1])
        )
        if best is None or dist < best[0]:
            best = (dist, j, projected)
    if best is None:
        raise SpectrumInfeasibleError(
            f"no feasible support of size <= {K} for target trace {k}"
        )
    _, j, projected = best

    # Columns for the winning support: stored columns by value, plus
    # materialized completion columns for any complement entries kept.
    stored_idx = [idx for _, idx in top[:j] if idx >= 0]
    comp_kept = j - len(stored_idx)
    cols = state.basis[:, stored_idx]
    if comp_kept:
        cols = np.hstack([cols, orthonormal_completion(state.basis, comp_kept)])
    keep = projected > 0.0
    eigvals, mults = _compress_descending(projected[keep])
    return EigenState(
        dim=d,
        basis=cols[:, keep],
        eigvals=eigvals,
        mults=mults,
        comp=0.0,
        orth_age=state.orth_age,
    )


def project_entropic(state: EigenState, k: int) -> EigenState:
    """KL projection onto the capped simplex: cap at one, rescale the rest.

    The uncapped eigenvalues are scaled by a common factor so the total trace
    is k; any value pushed past one is capped there and the remainder is
    rescaled.  The cap set grows monotonically, so this terminates within
    n + 1 rounds.  Requires a strictly positive input spectrum.
    """
    if not 1 <= k <= state.dim:
        raise SpectrumInfeasibleError(f"target trace {k} not in [1, {state.dim}]")
    pad = state.dim - state.rank
    vals = np.append(state.eigvals, state.comp) if pad else state.eigvals.astype(float)
    mults = np.append(state.mults, pad) if pad else state.mults
    if vals.size == 0 or np.any(vals <= 0.0):
        raise ValueError("entropic projection requires strictly positive eigenvalues")

    capped = np.zeros(vals.shape[0], dtype=bool)
    factor = 1.0
    for _ in range(vals.shape[0] + 1):
        remaining = k - int(mults[capped].sum())
        mass = float(vals[~capped] @ mults[~capped])
        if mass <= 0.0:
            raise ValueError("zero uncapped mass in entropic projection")
        factor = remaining / mass
        overflow = (~capped) & (vals * factor > 1.0)
        if not overflow.any():
            break
        capped |= overflow
    out = np.where(capped, 1.0, vals * factor)

    if pad:
        comp = float(out[-1])
        stored = out[:-1]
    else:
        comp = 0.0
        stored = out
    expanded = np.repeat(stored, state.mults)
    eigvals, new_mults = _compress_descending(expanded)
    return EigenState(
        dim=state.dim,
        basis=state.basis,
        eigvals=eigvals,
        mults=new_mults,
        comp=comp,
        orth_age=state.orth_age,
    )

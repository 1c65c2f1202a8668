"""Stochastic-approximation PCA on a shared compact eigen-state.

Solvers: matrix stochastic gradient (MSG), rank-capped MSG, incremental PCA,
matrix exponentiated gradient (MEG), and the stochastic power method, plus
the sample sources, objective oracles, and experiment harness used to
benchmark them.
"""

from .eigenstate import (
    EigenConvergenceError,
    EigenState,
    Sample,
    dense_eigensymm,
    rank1_update,
    reconstruct,
)
from .projection import (
    SpectrumInfeasibleError,
    SpectrumView,
    find_shift,
    project_capped_rank,
    project_capped_simplex,
    project_entropic,
)

__all__ = [
    "EigenConvergenceError",
    "EigenState",
    "Sample",
    "SpectrumInfeasibleError",
    "SpectrumView",
    "dense_eigensymm",
    "find_shift",
    "project_capped_rank",
    "project_capped_simplex",
    "project_entropic",
    "rank1_update",
    "reconstruct",
]

__version__ = "0.1.0"

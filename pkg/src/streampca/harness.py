"""Objective evaluation, step-size selection, and experiment orchestration.

Experiments are described by a small TOML spec (see ``load_spec``) naming a
sample source, one or more solver configurations, the seeds, and an optional
step-size grid.  ``run_experiment`` tunes step sizes where asked, runs every
(solver, seed) cell on a worker pool, and writes per-cell trace CSVs, an
aggregate CSV with mean and standard error across seeds, a summary CSV, and
a gnuplot script rendering the standard panels.  Results are merged by cell
index, so output files are identical regardless of worker scheduling.
"""

from __future__ import annotations

import csv
import io
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - version-dependent import
    import tomli as tomllib

from .data import (
    DatasetSource,
    IdxFormatError,
    OrthogonalDistribution,
    PointMass,
    TrapDistribution,
    load_idx,
    normalize,
    split,
)
from .eigenstate import EigenState
from .solvers import (
    ALGORITHMS,
    RunTrace,
    SolverConfig,
    evaluation_checkpoints,
    run,
)

TRACE_SCHEMA = "streampca trace v1"
AGGREGATE_SCHEMA = "streampca aggregate v1"
SUMMARY_SCHEMA = "streampca summary v1"

#: Default step-size grid: powers of two from 2^-12 through 2^5.
DEFAULT_GRID = [2.0**e for e in range(-12, 6)]


class SpecError(ValueError):
    """Invalid experiment spec (CLI exit code 2)."""


class DataError(RuntimeError):
    """Unreadable or malformed data (CLI exit code 3)."""


# ---------------------------------------------------------------------------
# Objective oracles
# ---------------------------------------------------------------------------


class ClosedFormOracle:
    """Exact population objective for a known second-moment matrix."""

    def __init__(self, second_moment: np.ndarray):
        sigma = np.asarray(second_moment, dtype=np.float64)
        if sigma.ndim == 1:
            self.diag = sigma
            self.matrix = None
        else:
            self.diag = None
            self.matrix = 0.5 * (sigma + sigma.T)

    def optimum(self, k: int) -> float:
        if self.diag is not None:
            return float(np.sort(self.diag)[::-1][:k].sum())
        return float(np.sort(np.linalg.eigvalsh(self.matrix))[::-1][:k].sum())

    def objective_basis(self, basis: np.ndarray) -> float:
        if self.diag is not None:
            return float(self.diag @ (basis * basis).sum(axis=1))
        return float(np.einsum("ij,ik,kj->", basis, self.matrix, basis))


class EmpiricalOracle:
    """Held-out estimate of the population objective."""

    def __init__(self, samples: np.ndarray):
        if samples.shape[0] == 0:
            raise ValueError("empty held-out sample set")
        self.samples = np.asarray(samples, dtype=np.float64)
        self._optimum_cache: dict[int, float] = {}

    def optimum(self, k: int) -> float:
        # ERM estimate: top-k eigenvalue mass of the held-out second moment.
        if k not in self._optimum_cache:
            n = self.samples.shape[0]
            cov = (self.samples.T @ self.samples) / n
            vals = np.sort(np.linalg.eigvalsh(cov))[::-1]
            self._optimum_cache[k] = float(vals[:k].sum())
        return self._optimum_cache[k]

    def objective_basis(self, basis: np.ndarray) -> float:
        proj = self.samples @ basis
        return float(np.mean(np.sum(proj * proj, axis=1)))


def population_suboptimality(state: EigenState, oracle, k: int) -> float:
    """Gap between the oracle optimum and the iterate's top-k subspace value."""
    basis = state.leading_subspace(k)
    return oracle.optimum(k) - oracle.objective_basis(basis)


def empirical_objective(target, samples: np.ndarray) -> float:
    """Mean of x^T M x over the rows of ``samples``.

    ``target`` is an EigenState or a plain orthonormal basis (treated as its
    projector).  Computed in O(n d m) without materializing M.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[0] == 0:
        raise ValueError("empty sample set")
    if isinstance(target, EigenState):
        proj = samples @ target.basis
        vals = target.expanded_eigvals()
        total = np.sum(proj * proj * vals, axis=1)
        if target.comp != 0.0:
            norms = np.sum(samples * samples, axis=1)
            total = total + target.comp * (norms - np.sum(proj * proj, axis=1))
        return float(np.mean(total))
    proj = samples @ np.asarray(target, dtype=np.float64)
    return float(np.mean(np.sum(proj * proj, axis=1)))


def runtime_proxy(trace: RunTrace) -> np.ndarray:
    """Cumulative sum of squared iterate ranks."""
    if trace.ranks.shape[0] == 0:
        raise ValueError("empty trace")
    return np.cumsum(trace.ranks.astype(np.int64) ** 2)


# ---------------------------------------------------------------------------
# Step-size selection
# ---------------------------------------------------------------------------


def grid_search(
    base_config: SolverConfig, grid, stream_factory, evaluate
) -> tuple[float, dict[float, float]]:
    """Pick the decay constant minimizing average checkpoint suboptimality.

    Every candidate sees the same sample sequence (``stream_factory`` is
    called once per candidate and must return identically seeded streams).
    Ties break toward the smaller constant.
    """
    candidates = sorted(float(c) for c in grid)
    if not candidates:
        raise SpecError("empty step-size grid")
    scores: dict[float, float] = {}
    best_c = None
    best_score = math.inf
    for c in candidates:
        cfg = replace(base_config, c=c, averaging=False, rounding=False)
        trace = run(cfg, stream_factory(), evaluate=evaluate)
        values = [trace.suboptimality[t] for t in sorted(trace.suboptimality)]
        score = float(np.mean(values)) if values else math.inf
        if math.isnan(score):
            score = math.inf
        scores[c] = score
        if score < best_score:
            best_score = score
            best_c = c
    return best_c, scores


# ---------------------------------------------------------------------------
# Experiment specs
# ---------------------------------------------------------------------------


@dataclass
class SamplerSpec:
    kind: str
    d: int = 32
    tau: float = 1.1
    path: str | None = None
    normalize: bool = True
    split_seed: int = 0
    point: list | None = None


@dataclass
class SolverSpec:
    algorithm: str
    k: int
    T: int
    K: int | None = None
    schedule: str = "decay"
    c: float | None = None
    averaging: bool = False
    rounding: bool = False


@dataclass
class ExperimentSpec:
    name: str
    seeds: list[int]
    sampler: SamplerSpec
    solvers: list[SolverSpec]
    grid: list[float]
    output_dir: str
    workers: int = 1
    tuning_seed: int = 10_000

    def label(self, solver: SolverSpec) -> str:
        return solver.algorithm


def load_spec(path) -> ExperimentSpec:
    """Parse and validate a TOML experiment spec."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except OSError as exc:
        raise SpecError(f"cannot read spec {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise SpecError(f"malformed spec {path}: {exc}") from exc
    try:
        exp = raw.get("experiment", {})
        sampler_raw = dict(raw["sampler"])
        kind = sampler_raw.pop("kind")
        if kind not in ("orthogonal", "trap", "pointmass", "idx"):
            raise SpecError(f"unknown sampler kind {kind!r}")
        sampler = SamplerSpec(kind=kind, **sampler_raw)
        if kind == "idx":
            if not sampler.path:
                raise SpecError("idx sampler needs a path")
            p = Path(sampler.path)
            if not p.is_absolute():
                sampler.path = str((path.parent / p).resolve())
        solvers = []
        for block in raw.get("solver", []):
            solver = SolverSpec(**block)
            if solver.algorithm not in ALGORITHMS:
                raise SpecError(f"unknown algorithm {solver.algorithm!r}")
            if solver.T < 1:
                raise SpecError("experiment solvers need T >= 1")
            solvers.append(solver)
        if not solvers:
            raise SpecError("spec declares no solvers")
        seeds = [int(s) for s in exp.get("seeds", [0])]
        if "seed_count" in exp:
            base = int(exp.get("seed_base", 0))
            seeds = list(range(base, base + int(exp["seed_count"])))
        spec = ExperimentSpec(
            name=str(exp.get("name", path.stem)),
            seeds=seeds,
            sampler=sampler,
            solvers=solvers,
            grid=[float(c) for c in raw.get("tuning", {}).get("grid", DEFAULT_GRID)],
            output_dir=str(exp.get("output_dir", f"out/{path.stem}")),
            workers=int(exp.get("workers", 1)),
            tuning_seed=int(raw.get("tuning", {}).get("seed", 10_000)),
        )
    except (KeyError, TypeError) as exc:
        raise SpecError(f"invalid spec {path}: {exc}") from exc
    if not spec.seeds:
        raise SpecError("spec declares no seeds")
    return spec


class _Environment:
    """Sampler, oracles, and stream factories rebuilt inside each worker."""

    def __init__(self, spec: ExperimentSpec):
        self.spec = spec
        s = spec.sampler
        self.dataset: DatasetSource | None = None
        if s.kind == "orthogonal":
            dist = OrthogonalDistribution(d=s.d, tau=s.tau)
            self.dim = dist.dim
            oracle = ClosedFormOracle(dist.second_moments())
            self._dist = dist
            self.tuning_oracle = self.final_oracle = oracle
        elif s.kind == "trap":
            dist = TrapDistribution()
            self.dim = 2
            oracle = ClosedFormOracle(dist.second_moments())
            self._dist = dist
            self.tuning_oracle = self.final_oracle = oracle
        elif s.kind == "pointmass":
            x = np.asarray(s.point, dtype=np.float64)
            dist = PointMass(x)
            self.dim = dist.dim
            oracle = ClosedFormOracle(np.outer(x, x))
            self._dist = dist
            self.tuning_oracle = self.final_oracle = oracle
        else:  # idx
            try:
                table = load_idx(s.path)
            except (OSError, IdxFormatError) as exc:
                raise DataError(f"cannot ingest {s.path}: {exc}") from exc
            if table.ndim != 2:
                raise DataError(f"{s.path} holds labels, not samples")
            dataset = split(DatasetSource(table.astype(np.float64)), s.split_seed)
            if s.normalize:
                dataset = normalize(dataset)
            self.dataset = dataset
            self.dim = dataset.dim
            self._dist = None
            self.tuning_oracle = EmpiricalOracle(dataset.validation)
            self.final_oracle = EmpiricalOracle(dataset.test)

    def stream(self, seed):
        if self.dataset is not None:
            return self.dataset.train_stream(seed)
        return self._dist.stream(seed)

    def evaluator(self, oracle, k: int):
        return lambda state: population_suboptimality(state, oracle, k)


def _solver_config(solver: SolverSpec, dim: int, seed: int, c: float):
    return SolverConfig(
        algorithm=solver.algorithm,
        d=dim,
        k=solver.k,
        T=solver.T,
        K=solver.K,
        schedule=solver.schedule,
        c=c,
        seed=seed,
        averaging=solver.averaging,
        rounding=solver.rounding,
        record_checksum=True,
    )


_ENV: _Environment | None = None


def _worker_init(spec: ExperimentSpec) -> None:
    global _ENV
    _ENV = _Environment(spec)


def _tune_cell(args) -> tuple[int, float, float]:
    solver_idx, c = args
    spec = _ENV.spec
    solver = spec.solvers[solver_idx]
    cfg = _solver_config(solver, _ENV.dim, spec.tuning_seed, c)
    cfg = replace(cfg, averaging=False, rounding=False, record_checksum=False)
    evaluate = _ENV.evaluator(_ENV.tuning_oracle, solver.k)
    trace = run(cfg, _ENV.stream(spec.tuning_seed), evaluate=evaluate)
    values = [trace.suboptimality[t] for t in sorted(trace.suboptimality)]
    score = float(np.mean(values)) if values else math.inf
    if math.isnan(score):
        score = math.inf
    return solver_idx, c, score


def _run_cell(args) -> tuple:
    solver_idx, seed, c = args
    spec = _ENV.spec
    solver = spec.solvers[solver_idx]
    cfg = _solver_config(solver, _ENV.dim, seed, c)
    evaluate = _ENV.evaluator(_ENV.final_oracle, solver.k)
    trace = run(cfg, _ENV.stream(seed), evaluate=evaluate)
    out = Path(spec.output_dir)
    trace_path = out / f"trace_{spec.label(solver)}_seed{seed}.csv"
    write_trace_csv(trace_path, trace)
    top = trace.final_state.leading_subspace(1)[:, 0]
    e1_aligned = bool(abs(top[0]) >= abs(top[1])) if _ENV.dim == 2 else None
    return (
        solver_idx,
        seed,
        trace.suboptimality,
        trace.ranks,
        int(trace.runtime_proxy[-1]) if trace.ranks.shape[0] else 0,
        e1_aligned,
        trace.checksum,
    )


def _format(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def write_trace_csv(path, trace: RunTrace) -> None:
    """Write the per-iteration trace (schema: streampca trace v1)."""
    buf = io.StringIO()
    buf.write(f"# {TRACE_SCHEMA}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "rank", "runtime_proxy", "suboptimality", "comp", "eigenvalues"])
    snapshots = trace.eig_snapshots
    for i, t in enumerate(trace.iterations):
        packed = ""
        comp = ""
        if snapshots is not None:
            packed = ";".join(repr(float(v)) for v in snapshots[i])
            comp = repr(float(trace.comps[i]))
        writer.writerow(
            [
                int(t),
                int(trace.ranks[i]),
                int(trace.runtime_proxy[i]),
                _format(trace.suboptimality.get(int(t))),
                comp,
                packed,
            ]
        )
    Path(path).write_text(buf.getvalue())


def run_experiment(spec: ExperimentSpec) -> dict:
    """Execute every (solver, seed) cell and write the experiment artifacts.

    Returns a summary mapping each solver label to its tuned constant, final
    mean suboptimality with standard error, mean final runtime proxy, and
    (for the planar trap source) the frequency of e1-aligned final states.
    """
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _worker_init(spec)  # validates the spec/data in-process before forking
    env = _ENV

    tune_jobs = []
    tuned: dict[int, float] = {}
    for idx, solver in enumerate(spec.solvers):
        if solver.algorithm == "incremental" or solver.schedule == "fixed":
            tuned[idx] = solver.c if solver.c is not None else 1.0
        elif solver.c is not None:
            tuned[idx] = solver.c
        else:
            tune_jobs.extend((idx, c) for c in sorted(set(spec.grid)))

    use_pool = spec.workers > 1
    if tune_jobs:
        results = _map_jobs(_tune_cell, tune_jobs, spec, use_pool)
        by_solver: dict[int, list[tuple[float, float]]] = {}
        for solver_idx, c, score in results:
            by_solver.setdefault(solver_idx, []).append((c, score))
        for solver_idx, pairs in by_solver.items():
            pairs.sort()
            best_c, best_score = pairs[0][0], math.inf
            for c, score in pairs:
                if score < best_score:
                    best_c, best_score = c, score
            tuned[solver_idx] = best_c

    run_jobs = [
        (idx, seed, tuned[idx]) for idx in range(len(spec.solvers)) for seed in spec.seeds
    ]
    cell_results = _map_jobs(_run_cell, run_jobs, spec, use_pool)
    cells = {(r[0], r[1]): r for r in cell_results}

    # All algorithms must have consumed the identical sequence per seed.
    for seed in spec.seeds:
        digests = {cells[(i, seed)][6] for i in range(len(spec.solvers))}
        if len(digests) != 1:
            raise RuntimeError(f"stream checksum mismatch for seed {seed}: {digests}")

    aggregate_rows = []
    summary = {}
    for idx, solver in enumerate(spec.solvers):
        label = spec.label(solver)
        checkpoints = evaluation_checkpoints(solver.T)
        sub_by_seed = [cells[(idx, seed)][2] for seed in spec.seeds]
        ranks_by_seed = [cells[(idx, seed)][3] for seed in spec.seeds]
        for t in checkpoints:
            vals = np.array([s[t] for s in sub_by_seed])
            ranks = np.array([float(r[t - 1]) for r in ranks_by_seed])
            proxies = np.array(
                [float(np.sum(r[:t].astype(np.int64) ** 2)) for r in ranks_by_seed]
            )
            se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
            aggregate_rows.append(
                (label, t, float(vals.mean()), se, float(ranks.mean()), float(proxies.mean()))
            )
        finals = np.array([s[solver.T] for s in sub_by_seed])
        fse = float(finals.std(ddof=1) / math.sqrt(len(finals))) if len(finals) > 1 else 0.0
        e1_flags = [cells[(idx, seed)][5] for seed in spec.seeds]
        e1_freq = (
            float(np.mean([bool(f) for f in e1_flags])) if None not in e1_flags else None
        )
        proxy_final = float(np.mean([cells[(idx, seed)][4] for seed in spec.seeds]))
        summary[label] = {
            "c": tuned[idx],
            "final_mean_suboptimality": float(finals.mean()),
            "final_stderr": fse,
            "mean_runtime_proxy": proxy_final,
            "e1_frequency": e1_freq,
        }

    _write_aggregate(out / "aggregate.csv", aggregate_rows)
    _write_summary(out / "summary.csv", summary)
    _write_plot_script(out / "plots.gp", spec)
    summary["files"] = sorted(p.name for p in out.iterdir())
    return summary


def _map_jobs(fn, jobs, spec, use_pool):
    if not use_pool:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(
        max_workers=spec.workers, initializer=_worker_init, initargs=(spec,)
    ) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * spec.workers))))


def _write_aggregate(path: Path, rows) -> None:
    buf = io.StringIO()
    buf.write(f"# {AGGREGATE_SCHEMA}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["algorithm", "t", "mean_suboptimality", "stderr_suboptimality", "mean_rank", "mean_runtime_proxy"]
    )
    for label, t, mean, se, rank, proxy in rows:
        writer.writerow([label, t, repr(mean), repr(se), repr(rank), repr(proxy)])
    path.write_text(buf.getvalue())


def _write_summary(path: Path, summary: dict) -> None:
    buf = io.StringIO()
    buf.write(f"# {SUMMARY_SCHEMA}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["algorithm", "c", "final_mean_suboptimality", "final_stderr", "mean_runtime_proxy", "e1_frequency"]
    )
    for label, info in summary.items():
        writer.writerow(
            [
                label,
                repr(float(info["c"])),
                repr(info["final_mean_suboptimality"]),
                repr(info["final_stderr"]),
                repr(info["mean_runtime_proxy"]),
                "" if info["e1_frequency"] is None else repr(info["e1_frequency"]),
            ]
        )
    path.write_text(buf.getvalue())


def _write_plot_script(path: Path, spec: ExperimentSpec) -> None:
    labels = " ".join(spec.label(s) for s in spec.solvers)
    text = f"""# gnuplot script generated by streampca for experiment "{spec.name}"
set datafile separator ","
set terminal pngcairo size 1400,900
set output "{spec.name}_panels.png"
set multiplot layout 2,2
algs = "{labels}"
set logscale x
set xlabel "iterations"
set ylabel "suboptimality"
plot for [a in algs] "aggregate.csv" skip 2 \\
    using (strcol(1) eq a ? $2 : NaN):3 with lines title a
set xlabel "runtime proxy (cumulative squared rank)"
plot for [a in algs] "aggregate.csv" skip 2 \\
    using (strcol(1) eq a ? $6 : NaN):3 with lines title a
set xlabel "iterations"
set ylabel "iterate rank"
plot for [a in algs] "aggregate.csv" skip 2 \\
    using (strcol(1) eq a ? $2 : NaN):5 with lines title a
set ylabel "mean suboptimality +- 2 SE"
plot for [a in algs] "aggregate.csv" skip 2 \\
    using (strcol(1) eq a ? $2 : NaN):3:(2*$4) with yerrorlines title a
unset multiplot
"""
    path.write_text(text)

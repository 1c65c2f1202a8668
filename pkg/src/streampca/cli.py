"""Command-line interface.

Subcommands: ``run`` (one solver run to a trace CSV), ``experiment`` (execute
a TOML experiment spec), ``project`` (project a spectrum), ``round``
(decompose a feasible spectrum into rank-k projectors), ``ingest`` (IDX file
to dataset cache), and ``selftest`` (embedded oracle-equivalence suites).

Exit codes: 0 success, 1 selftest failure, 2 usage or spec error, 3 data
error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import harness
from .data import (
    DatasetSource,
    IdxFormatError,
    OrthogonalDistribution,
    TrapDistribution,
    load_idx,
    normalize,
    save_cache,
    split,
)
from .eigenstate import EigenState
from .projection import (
    SpectrumInfeasibleError,
    SpectrumView,
    find_shift,
    project_capped_rank,
)
from .solvers import ALGORITHMS, SCHEDULES, SolverConfig, round_to_rank_k, run
from .selftest import run_selftest

EXIT_OK = 0
EXIT_SELFTEST = 1
EXIT_SPEC = 2
EXIT_DATA = 3


def _parse_floats(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",") if v != ""])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad float list {text!r}: {exc}") from exc


def _parse_ints(text: str) -> np.ndarray:
    try:
        return np.array([int(v) for v in text.split(",") if v != ""], dtype=np.int64)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad int list {text!r}: {exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streampca",
        description="Stochastic-approximation PCA solvers and benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p_run = sub.add_parser("run", formatter_class=fmt, help="run one solver against a sample stream")
    p_run.add_argument("--algo", required=True, choices=ALGORITHMS, help="algorithm")
    p_run.add_argument("--dist", default="orthogonal", choices=("orthogonal", "trap"),
                       help="sample source")
    p_run.add_argument("--d", type=int, default=32, help="dimension (orthogonal source)")
    p_run.add_argument("--tau", type=float, default=1.1, help="decay rate (orthogonal source)")
    p_run.add_argument("--k", type=int, required=True, help="target subspace dimension")
    p_run.add_argument("--K", type=int, default=None, help="rank cap (capped MSG; default k+1)")
    p_run.add_argument("--T", type=int, required=True, help="iteration count")
    p_run.add_argument("--schedule", default="decay", choices=SCHEDULES, help="step-size schedule")
    p_run.add_argument("--c", type=float, default=1.0, help="decay constant for eta_t = c/sqrt(t)")
    p_run.add_argument("--seed", type=int, default=0, help="seed")
    p_run.add_argument("--averaging", action="store_true", default=False, help="average the iterates")
    p_run.add_argument("--rounding", action="store_true", default=False,
                       help="round the result to a sampled rank-k projector")
    p_run.add_argument("--out", default="trace.csv", help="trace CSV path")

    p_exp = sub.add_parser("experiment", formatter_class=fmt, help="run a TOML experiment spec")
    p_exp.add_argument("spec", help="spec file path")
    p_exp.add_argument("--out", default=None, help="override the spec's output directory")
    p_exp.add_argument("--workers", type=int, default=None, help="override the spec's worker count")

    p_proj = sub.add_parser("project", formatter_class=fmt,
                            help="project a spectrum onto the trace-k feasible set")
    p_proj.add_argument("--eigvals", type=_parse_floats, required=True,
                        help="comma-separated distinct eigenvalues")
    p_proj.add_argument("--mults", type=_parse_ints, default=None,
                        help="comma-separated multiplicities (default all ones)")
    p_proj.add_argument("--d", type=int, default=None,
                        help="ambient dimension (default: sum of multiplicities)")
    p_proj.add_argument("--k", type=int, required=True, help="target trace")
    p_proj.add_argument("--K", type=int, default=None, help="optional rank cap")

    p_round = sub.add_parser("round", formatter_class=fmt,
                             help="decompose a feasible spectrum into rank-k projectors")
    p_round.add_argument("--eigvals", type=_parse_floats, required=True,
                         help="comma-separated eigenvalues (trace must equal k)")
    p_round.add_argument("--k", type=int, required=True, help="projector rank")
    p_round.add_argument("--seed", type=int, default=0, help="seed for sampling one component")

    p_ing = sub.add_parser("ingest", formatter_class=fmt,
                           help="parse an IDX file into the flat dataset cache")
    p_ing.add_argument("idx", help="IDX image file path")
    p_ing.add_argument("--out", default="dataset.cache", help="cache file path")
    p_ing.add_argument("--normalize", action="store_true", default=False,
                       help="center and scale features on the train split")
    p_ing.add_argument("--split-seed", type=int, default=0, help="seed for the 40/20/40 split")

    p_self = sub.add_parser("selftest", formatter_class=fmt,
                            help="run the embedded oracle-equivalence suites")
    p_self.add_argument("--inject-fault", action="store_true", default=False,
                        help=argparse.SUPPRESS)
    return parser


def _cmd_run(args) -> int:
    if args.dist == "orthogonal":
        dist = OrthogonalDistribution(d=args.d, tau=args.tau)
    else:
        dist = TrapDistribution()
    try:
        config = SolverConfig(
            algorithm=args.algo, d=dist.dim, k=args.k, T=args.T, K=args.K,
            schedule=args.schedule, c=args.c, seed=args.seed,
            averaging=args.averaging, rounding=args.rounding,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    oracle = harness.ClosedFormOracle(dist.second_moments())
    evaluate = lambda state: harness.population_suboptimality(state, oracle, args.k)
    trace = run(config, dist.stream(args.seed), evaluate=evaluate)
    harness.write_trace_csv(args.out, trace)
    final = trace.suboptimality.get(args.T)
    print(f"wrote {args.out} ({args.T} iterations)")
    if final is not None:
        print(f"final suboptimality: {final:.6g}")
    top = trace.final_state.leading_subspace(1)[:, 0]
    axis = int(np.argmax(np.abs(top)))
    print(f"final top eigenvector is closest to axis e{axis + 1}")
    return EXIT_OK


def _cmd_experiment(args) -> int:
    try:
        spec = harness.load_spec(args.spec)
        if args.out is not None:
            spec.output_dir = args.out
        if args.workers is not None:
            spec.workers = args.workers
        summary = harness.run_experiment(spec)
    except harness.SpecError as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except harness.DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    for label, info in summary.items():
        if label == "files":
            continue
        line = (
            f"{label}: c={info['c']:g} "
            f"final suboptimality {info['final_mean_suboptimality']:.6g}"
            f" +- {info['final_stderr']:.2g}"
            f" (runtime proxy {info['mean_runtime_proxy']:.6g})"
        )
        if info["e1_frequency"] is not None:
            line += f", e1-convergence frequency {info['e1_frequency']:.4f}"
        print(line)
    print(f"artifacts in {spec.output_dir}: {', '.join(summary['files'])}")
    return EXIT_OK


def _cmd_project(args) -> int:
    eigvals = args.eigvals
    mults = args.mults if args.mults is not None else np.ones(len(eigvals), dtype=np.int64)
    if len(mults) != len(eigvals):
        print("error: eigvals and mults lengths differ", file=sys.stderr)
        return EXIT_SPEC
    d = args.d if args.d is not None else int(mults.sum())
    try:
        if args.K is None:
            view = SpectrumView(eigvals, mults, dim=d, target_trace=args.k)
            shift = find_shift(view)
            projected = np.clip(eigvals + shift, 0.0, 1.0)
            print(f"shift S = {shift!r}")
            for v, p, m in zip(eigvals, projected, mults):
                print(f"  {v!r} -> {p!r}  (multiplicity {int(m)})")
            if d > int(mults.sum()):
                lifted = min(1.0, max(0.0, shift))
                print(f"  0.0 -> {lifted!r}  (implicit, multiplicity {d - int(mults.sum())})")
        else:
            expanded = np.repeat(eigvals, mults)
            state = EigenState.from_eigenpairs(expanded, np.eye(d)[:, : len(expanded)], dim=d)
            out = project_capped_rank(state, args.k, args.K)
            vals = out.expanded_eigvals()
            print(f"projected spectrum (rank {out.rank} <= K={args.K}):")
            print("  " + ", ".join(repr(float(v)) for v in vals))
    except (SpectrumInfeasibleError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    return EXIT_OK


def _cmd_round(args) -> int:
    vals = args.eigvals
    d = len(vals)
    state = EigenState.from_eigenpairs(vals, np.eye(d), dim=d)
    try:
        mixture, sampled = round_to_rank_k(state, args.k, np.random.default_rng(args.seed))
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    print(f"{len(mixture)} components (at most d = {d}):")
    for w, b in zip(mixture.weights, mixture.bases):
        axes = [f"e{int(np.argmax(np.abs(b[:, j]))) + 1}" for j in range(b.shape[1])]
        print(f"  weight {w!r} on span({', '.join(axes)})")
    axes = [f"e{int(np.argmax(np.abs(sampled[:, j]))) + 1}" for j in range(sampled.shape[1])]
    print(f"sampled component: span({', '.join(axes)})")
    return EXIT_OK


def _cmd_ingest(args) -> int:
    try:
        table = load_idx(args.idx)
    except (OSError, IdxFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    if table.ndim == 1:
        print(f"data error: {args.idx} is a label vector; PCA ingestion needs images",
              file=sys.stderr)
        return EXIT_DATA
    dataset = split(DatasetSource(table.astype(np.float64)), args.split_seed)
    if args.normalize:
        dataset = normalize(dataset)
    save_cache(args.out, dataset.samples.astype(np.float32))
    msn = float(np.mean(np.sum(dataset.train**2, axis=1)))
    print(f"wrote {args.out}: n={dataset.n} d={dataset.dim}")
    print(
        f"splits train/val/test = {len(dataset.train_idx)}/{len(dataset.val_idx)}"
        f"/{len(dataset.test_idx)}; train mean |x|^2 = {msn:.4f}"
    )
    return EXIT_OK


def _cmd_selftest(args) -> int:
    results = run_selftest(inject_fault=args.inject_fault)
    for result in results:
        print(result.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_SELFTEST


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "experiment": _cmd_experiment,
        "project": _cmd_project,
        "round": _cmd_round,
        "ingest": _cmd_ingest,
        "selftest": _cmd_selftest,
    }
    return handlers[args.command](args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Command-line entry point: ``radmm {run,check,sweep,preprocess,noise-diag}``.

Exit codes: 0 success, 1 ``check`` found the condition unsatisfied,
2 invalid input, 3 solver failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from . import __version__
from .analysis import aggregate_runs, check_sufficient_condition
from .config import ConfigError, RunConfig, git_blob_sha1, input_hash, load_config, read_kv_file, run_seed
from .dataset import DataError, Schema, load_csv, preprocess, write_dataset
from .engine import RunAborted, RunResult, StepConditionError, run
from .inner_solver import InnerSolverError
from .objective import SolverDivergence, lipschitz_bound
from .privacy import check_step_condition, sample_objective_noise
from .topology import GraphError

log = logging.getLogger("radmm")

EXIT_OK = 0
EXIT_UNSATISFIED = 1
EXIT_INVALID = 2
EXIT_SOLVER = 3
EXIT_IO = 4

METRIC_COLUMNS = (
    "run_id", "t", "avg_loss", "consensus_error", "privacy_bound_running", "eta_t", "gamma_t", "L_mean", "L_range",
)


class ValidationFailure(Exception):
    pass


def num(x: float) -> str:
    return f"{x:.17g}"


def _header(cfg: RunConfig, digest: str) -> list[str]:
    return [f"radmm {__version__}", f"input_hash = {digest}"] + [f"{k} = {v}" for k, v in cfg.resolved_items()]


def write_metrics(path: Path, results: Sequence[RunResult], header: Sequence[str]) -> None:
    traces = [r.loss_trace for r in results]
    complete = len({len(t) for t in traces}) == 1
    mean, spread = aggregate_runs(traces) if complete else (None, None)
    with path.open("w") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write(",".join(METRIC_COLUMNS) + "\n")
        for run_id, res in enumerate(results):
            for idx, m in enumerate(res.metrics):
                agg = [num(mean[idx]), num(spread[idx])] if complete else ["nan", "nan"]
                row = [str(run_id), str(m.t), num(m.avg_loss), num(m.consensus_error),
                       num(m.privacy_bound_running), num(m.eta_t), num(m.gamma_t)] + agg
                fh.write(",".join(row) + "\n")


def write_finals(path: Path, results: Sequence[RunResult], header: Sequence[str]) -> None:
    with path.open("w") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        for run_id, res in enumerate(results):
            for kind, mat in (("primal", res.primals), ("dual", res.duals)):
                fh.write(f"# run {run_id} {kind} (one row per node)\n")
                for row in np.atleast_2d(mat):
                    fh.write(" ".join(num(v) for v in row) + "\n")


def condition_summary(cfg: RunConfig, graph, params) -> list[str]:
    if not cfg.schedule().is_fixed:
        return ["convergence condition: not applicable (eta or gamma is scheduled; the condition covers fixed parameters only)"]
    if cfg.algorithm == "conventional":
        return ["convergence condition: not applicable to conventional ADMM"]
    report = check_sufficient_condition(graph, cfg.eta, cfg.gamma, lipschitz_bound(params), cfg.check_L, cfg.check_mu)
    return ["convergence condition (M_i = C*c1 + rho/N):"] + ["  " + ln for ln in report.format().splitlines()]


def write_summary(path, cfg, graph, params, results, header, aborted: str | None = None) -> None:
    lines = [f"# {h}" for h in header]
    lines.append(f"algorithm: {cfg.algorithm}")
    lines.append(f"nodes: {graph.n_nodes}, edges: {len(graph.edges)}, degrees: {graph.degrees.tolist()}")
    lines += condition_summary(cfg, graph, params)
    for run_id, res in enumerate(results):
        lines.append(f"run {run_id}: seed {res.seed}, wall time {res.wall_time:.3f} s, half-iterations {len(res.metrics)}")
        if res.privacy_per_node is None:
            lines.append("  privacy: none (non-private algorithm)")
        else:
            lines.append(f"  beta (max over nodes): {num(res.privacy_total)}")
            for i, b in enumerate(res.privacy_per_node):
                lines.append(f"    node {i}: {num(b)}")
        if res.metrics:
            last = res.metrics[-1]
            lines.append(f"  final avg_loss {num(last.avg_loss)}, consensus_error {num(last.consensus_error)}")
    if aborted:
        lines.append(f"ABORTED: {aborted}")
    path.write_text("\n".join(lines) + "\n")


def execute(cfg: RunConfig, out_dir: Path) -> int:
    """Run ``cfg.n_runs`` seeded runs and write metrics, summary and finals."""
    try:
        graph, shards, params = cfg.build_problem()
    except (ConfigError, GraphError, DataError, ValueError) as exc:
        raise ValidationFailure(str(exc)) from exc
    schedule = cfg.schedule()
    if cfg.algorithm == "private_radmm":
        sizes = [len(s) for s in shards]
        for k in range(1, cfg.K + 1):
            cond = check_step_condition(params, graph, sizes, schedule.eta_at(2 * k - 1))
            if not cond.ok:
                raise ValidationFailure(
                    f"step condition fails at round {k}: 2*c1 = {cond.lhs:g} >= "
                    f"{cond.rhs[cond.binding_node]:g} at node {cond.binding_node}; increase eta"
                )
    digest = input_hash(cfg)
    header = _header(cfg, digest)
    results: list[RunResult] = []
    aborted = None
    for run_id in range(cfg.n_runs):
        try:
            res = run(graph, shards, params, schedule, cfg.K, cfg.algorithm, run_seed(cfg.master_seed, run_id),
                      cfg.inner_tol, cfg.inner_max_iter, cfg.workers)
        except StepConditionError as exc:
            raise ValidationFailure(str(exc)) from exc
        except RunAborted as exc:
            results.append(exc.partial)
            aborted = f"run {run_id}: {exc.cause}"
            break
        results.append(res)
        log.info("run %d done in %.2f s", run_id, res.wall_time)

    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics(out_dir / "metrics.csv", results, header)
    write_finals(out_dir / "finals.txt", results, header)
    write_summary(out_dir / "summary.txt", cfg, graph, params, results, header, aborted)
    if aborted:
        print(f"error: {aborted}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"wrote {out_dir / 'metrics.csv'}, {out_dir / 'summary.txt'}, {out_dir / 'finals.txt'}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.set)
    return execute(cfg, Path(args.output_dir or cfg.output_dir))


def cmd_check(args) -> int:
    cfg = load_config(args.config, args.set)
    if not cfg.schedule().is_fixed:
        raise ValidationFailure("check needs fixed eta and gamma; the condition is not established for schedules")
    graph, shards, params = cfg.build_problem()
    report = check_sufficient_condition(graph, cfg.eta, cfg.gamma, lipschitz_bound(params), cfg.check_L, cfg.check_mu)
    print(f"graph: {graph.n_nodes} nodes, degrees {graph.degrees.tolist()}; M_i = C*c1 + rho/N = {num(lipschitz_bound(params))}")
    print(report.format())
    if cfg.algorithm == "private_radmm":
        cond = check_step_condition(params, graph, [len(s) for s in shards], cfg.eta)
        print(f"{'private step condition':<22}{'holds' if cond.ok else 'FAILS'} (margin {num(cond.margin)}, binding node {cond.binding_node})")
    return EXIT_OK if report.satisfied else EXIT_UNSATISFIED


def cmd_sweep(args) -> int:
    base = read_kv_file(args.config)
    for item in args.set:
        k, v = (p.strip() for p in item.split("=", 1))
        base[k] = v
    axes = {k[len("sweep."):]: [v.strip() for v in val.split("|")] for k, val in base.items() if k.startswith("sweep.")}
    fixed = {k: v for k, v in base.items() if not k.startswith("sweep.")}
    if not axes:
        raise ValidationFailure("sweep needs at least one 'sweep.<key> = v1 | v2 | ...' entry")
    root = Path(args.output_dir or fixed.get("output_dir", "output"))
    root.mkdir(parents=True, exist_ok=True)
    keys = sorted(axes)
    status = EXIT_OK
    with (root / "sweep_index.csv").open("w") as index:
        index.write(",".join(["point"] + keys) + "\n")
        for n, combo in enumerate(itertools.product(*(axes[k] for k in keys))):
            mapping = dict(fixed, **dict(zip(keys, combo)))
            cfg = RunConfig.from_mapping(mapping, base_dir=Path(args.config).parent)
            name = f"point_{n:03d}"
            index.write(",".join([name] + list(combo)) + "\n")
            code = execute(cfg, root / name)
            status = max(status, code)
    return status


def cmd_preprocess(args) -> int:
    schema = Schema.from_mapping(read_kv_file(args.schema))
    data = preprocess(load_csv(args.csv_in, schema), schema)
    digest = git_blob_sha1(Path(args.csv_in).read_bytes() + Path(args.schema).read_bytes())
    comments = [f"radmm {__version__} preprocess", f"source = {Path(args.csv_in).name}",
                f"schema = {Path(args.schema).name}", f"input_hash = {digest}"]
    write_dataset(data, args.out, comments)
    print(f"{len(data)} samples x {data.dim} features -> {args.out}")
    return EXIT_OK


def cmd_noise_diag(args) -> int:
    if args.n_samples < 1000:
        raise ValidationFailure("n-samples must be >= 1000")
    if args.d < 1 or not args.alpha > 0:
        raise ValidationFailure("need d >= 1 and alpha > 0")
    rng = np.random.default_rng(args.seed)
    eps = sample_objective_noise(args.d, args.alpha, rng, size=args.n_samples)
    norms = np.linalg.norm(eps, axis=1)
    expected = args.d / args.alpha
    ks = stats.kstest(norms, stats.gamma(a=args.d, scale=1.0 / args.alpha).cdf).statistic
    rows = [
        ("d", args.d), ("alpha", args.alpha), ("n_samples", args.n_samples), ("seed", args.seed),
        ("mean_norm", num(norms.mean())), ("expected_mean_norm", num(expected)),
        ("relative_error", num(abs(norms.mean() - expected) / expected)),
        ("mean_vector_norm", num(np.linalg.norm(eps.mean(axis=0)))),
        ("ks_statistic", num(ks)),
    ]
    for name, value in rows:
        print(f"{name:<20}{value}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radmm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("config", help="key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        return p

    p = with_config(sub.add_parser("run", help="simulate and write metrics.csv, summary.txt, finals.txt"))
    p.add_argument("-o", "--output-dir")
    p.set_defaults(func=cmd_run)

    p = with_config(sub.add_parser("check", help="evaluate the convergence condition for fixed eta, gamma"))
    p.set_defaults(func=cmd_check)

    p = with_config(sub.add_parser("sweep", help="run the cartesian product of sweep.<key> values"))
    p.add_argument("-o", "--output-dir")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("preprocess", help="CSV + schema -> normalized dataset file")
    p.add_argument("csv_in")
    p.add_argument("schema")
    p.add_argument("out")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("noise-diag", help="empirical check of the objective-perturbation sampler")
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--n-samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_noise_diag)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValidationFailure, ConfigError, GraphError, DataError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (InnerSolverError, SolverDivergence) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

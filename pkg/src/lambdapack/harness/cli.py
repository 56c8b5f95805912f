"""Command-line entry point.

    lambdapack run --builtin cholesky --grid 4 --block 64 --workers 4 --check
    lambdapack validate --program prog.lp --param N=4
    lambdapack analyze --program prog.lp --param N=4 --node "2:i=0,j=1,k=1" --children
    lambdapack enumerate-dag --builtin tsqr --param N=8
    lambdapack bench-analysis --grids 4,8,16,32

Exit codes: 0 ok, 1 numerical check failed, 2 run aborted, 3 usage error.
"""

from __future__ import annotations

import argparse
import sys
from fractions import Fraction

from ..executor import WorkerConfig
from ..lang import parse_node, parse_program, validate_ssa
from ..provisioner import ScalingPolicy
from .bench import bench_analysis, bench_csv, dag_dump, query_node
from .faults import parse_fault_spec
from .programs import BUILTINS, gen_cholesky, gen_gemm, gen_tsqr
from .runner import RunAbort, RunConfig, run

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_ABORT = 2
EXIT_USAGE = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 3, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(EXIT_USAGE)


def _parse_params(items: list[str]) -> dict[str, int]:
    out = {}
    for item in items or []:
        name, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--param wants K=V, got {item!r}")
        out[name.strip()] = int(value)
    return out


def _add_program_args(p: _Parser):
    p.add_argument("--program", help="path to a .lp program file")
    p.add_argument("--builtin", choices=sorted(BUILTINS), help="builtin workload")
    p.add_argument("--param", action="append", default=[], metavar="K=V")
    p.add_argument("--grid", type=int, help="block-grid dimension (param N)")
    p.add_argument("--leaves", type=int, help="tsqr leaf count (param N)")


def _load_program(args, params: dict[str, int]):
    if args.builtin:
        n = params.get("N")
        if args.builtin == "cholesky":
            return gen_cholesky(n or 4)
        if args.builtin == "tsqr":
            return gen_tsqr(n or 4)
        return gen_gemm(n or 2, params.get("K", 2))
    if args.program:
        with open(args.program, encoding="utf-8") as f:
            return parse_program(f.read())
    raise ValueError("one of --program/--builtin is required")


def main(argv: list[str] | None = None) -> int:
    top = _Parser(prog="lambdapack")
    sub = top.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", parents=[], help="execute a job end to end")
    _add_program_args(p_run)
    p_run.add_argument("--block", type=int, default=32, help="tile edge in scalars")
    p_run.add_argument("--elements", type=int, help="cholesky matrix dimension (ragged grids)")
    p_run.add_argument("--rows", type=int, default=512, help="tsqr input rows")
    p_run.add_argument("--cols", type=int, default=16, help="tsqr input cols")
    p_run.add_argument("--backend", choices=("mem", "fs"), default="mem")
    p_run.add_argument("--root", help="filesystem store root (fs backend)")
    p_run.add_argument("--store-delay", type=float, default=0.0, metavar="S")
    p_run.add_argument("--store-bandwidth", type=float, metavar="BYTES_PER_S")
    p_run.add_argument("--workers", type=int, help="fixed worker count")
    p_run.add_argument("--autoscale", metavar="sf=F,period=S", help="autoscaling policy")
    p_run.add_argument("--startup-latency", type=float, default=10.0, metavar="S")
    p_run.add_argument("--max-workers", type=int, default=64)
    p_run.add_argument("--pipeline", type=int, default=1, metavar="W")
    p_run.add_argument("--lease", type=float, default=10.0, metavar="S")
    p_run.add_argument("--runtime-limit", type=float, default=300.0, metavar="S")
    p_run.add_argument("--idle-timeout", type=float, default=10.0, metavar="S")
    p_run.add_argument("--poll-interval", type=float, default=0.05, metavar="S")
    p_run.add_argument("--compute-delay", type=float, default=0.0, metavar="S")
    p_run.add_argument("--fault", help="fault spec, e.g. kill:0.8@50%%")
    p_run.add_argument("--fault-seed", type=int, default=0)
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--check", action="store_true", help="verify the numerical oracle")
    p_run.add_argument("--metrics", metavar="DIR", help="write metrics CSVs here")

    p_an = sub.add_parser("analyze", help="children/parents of one node")
    _add_program_args(p_an)
    p_an.add_argument("--node", required=True, metavar="LINE:VAR=VAL,...")
    group = p_an.add_mutually_exclusive_group(required=True)
    group.add_argument("--children", action="store_true")
    group.add_argument("--parents", action="store_true")

    p_enum = sub.add_parser("enumerate-dag", help="materialize the full DAG (oracle mode)")
    _add_program_args(p_enum)

    p_val = sub.add_parser("validate", help="parse and check single assignment")
    _add_program_args(p_val)

    p_bench = sub.add_parser("bench-analysis", help="timing of implicit vs enumerated analysis")
    p_bench.add_argument("--grids", default="4,8,16,32")
    p_bench.add_argument("--samples", type=int, default=120)
    p_bench.add_argument("--seed", type=int, default=0)

    args = top.parse_args(argv)
    try:
        return _dispatch(args)
    except RunAbort as e:
        print(f"run aborted: {e.reason}", file=sys.stderr)
        if e.snapshot:
            print(e.snapshot, file=sys.stderr)
        return EXIT_ABORT
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


def _dispatch(args) -> int:
    if args.cmd == "run":
        return _cmd_run(args)
    if args.cmd == "bench-analysis":
        grids = tuple(int(g) for g in args.grids.split(","))
        sys.stdout.write(bench_csv(bench_analysis(grids, samples=args.samples, seed=args.seed)))
        return EXIT_OK

    params = _parse_params(args.param)
    if getattr(args, "grid", None):
        params.setdefault("N", args.grid)
    if getattr(args, "leaves", None):
        params.setdefault("N", args.leaves)
    program = _load_program(args, params)
    bound = program.resolve_params(params)

    if args.cmd == "analyze":
        node = parse_node(args.node)
        direction = "children" if args.children else "parents"
        for line in query_node(program, bound, node, direction):
            print(line)
        return EXIT_OK
    if args.cmd == "enumerate-dag":
        sys.stdout.write(dag_dump(program, bound))
        return EXIT_OK
    if args.cmd == "validate":
        violations = validate_ssa(program, bound)
        if violations:
            for v in violations:
                print(f"violation: {v}")
            return EXIT_CHECK_FAILED
        print("ok")
        return EXIT_OK
    raise ValueError(f"unknown command {args.cmd!r}")


def _parse_autoscale(spec: str, args) -> ScalingPolicy:
    fields = {}
    for part in spec.split(","):
        k, _, v = part.partition("=")
        fields[k.strip()] = v.strip()
    sf = Fraction(fields.get("sf", "1/2"))
    period = float(fields.get("period", 1.0))
    return ScalingPolicy(
        sf=sf,
        pipeline_width=args.pipeline,
        period=period,
        startup_latency=args.startup_latency,
        max_workers=args.max_workers,
    )


def _cmd_run(args) -> int:
    params = _parse_params(args.param)
    if args.grid:
        params.setdefault("N", args.grid)
    if args.leaves:
        params.setdefault("N", args.leaves)
    worker = WorkerConfig(
        lease_length=args.lease,
        pipeline_width=args.pipeline,
        runtime_limit=args.runtime_limit,
        poll_interval=args.poll_interval,
        idle_timeout=args.idle_timeout,
    )
    cfg = RunConfig(
        builtin=args.builtin,
        program_path=args.program,
        params=params,
        block=args.block,
        elements=args.elements,
        tsqr_rows=args.rows,
        tsqr_cols=args.cols,
        backend={"mem": "memory", "fs": "fs"}[args.backend],
        root=args.root,
        store_delay_s=args.store_delay,
        store_bandwidth=args.store_bandwidth,
        worker=worker,
        workers=args.workers,
        autoscale=_parse_autoscale(args.autoscale, args) if args.autoscale else None,
        fault=parse_fault_spec(args.fault) if args.fault else None,
        fault_seed=args.fault_seed,
        seed=args.seed,
        check=args.check,
        metrics_dir=args.metrics,
        compute_delay_s=args.compute_delay,
    )
    metrics = run(cfg)
    print(
        f"run {metrics.run_id}: {metrics.tasks_completed} tasks, "
        f"{metrics.completion_time:.3f}s, core-seconds {metrics.core_seconds:.3f}"
    )
    if args.check:
        print(f"check: {'pass' if metrics.check_passed else 'FAIL'}")
        if not metrics.check_passed:
            return EXIT_CHECK_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

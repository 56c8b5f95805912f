"""Full-DAG enumeration dumps and implicit-vs-enumerated timing.

The timing CSV is the desk-scale analogue of comparing a materialized task
graph against on-demand index solving: program bytes stay constant across
grid sizes and per-node query time is grid-independent, while full
enumeration grows with the iteration space.
"""

from __future__ import annotations

import csv
import io
import random
import statistics
import time

from ..analysis import children_of, parents_of
from ..lang import enumerate_nodes, format_node, oracle_edges, print_program
from .programs import gen_cholesky


def dag_dump(program, params: dict[str, int]) -> str:
    """CSV rows: node,<ref> then edge,<parent>,<child> (oracle mode)."""
    nodes, edges = oracle_edges(program, params)
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["kind", "a", "b"])
    for n in nodes:
        w.writerow(["node", format_node(n), ""])
    for parent, child in sorted(edges, key=lambda e: (format_node(e[0]), format_node(e[1]))):
        w.writerow(["edge", format_node(parent), format_node(child)])
    return buf.getvalue()


def query_node(program, params, node, direction: str) -> list[str]:
    fn = children_of if direction == "children" else parents_of
    return sorted(format_node(n) for n in fn(program, params, node))


def _median_query_s(program, params, nodes, repeats: int = 1) -> float:
    times = []
    for n in nodes:
        t0 = time.perf_counter()
        for _ in range(repeats):
            children_of(program, params, n)
        times.append((time.perf_counter() - t0) / repeats)
    return statistics.median(times)


def _enumerate_s(program, params, repeats: int) -> float:
    t0 = time.perf_counter()
    for _ in range(repeats):
        enumerate_nodes(program, params)
    return (time.perf_counter() - t0) / repeats


def bench_analysis(
    grids: tuple[int, ...] = (4, 8, 16, 32),
    samples: int = 120,
    seed: int = 0,
    enum_repeats: int = 50,
) -> list[dict]:
    """Per grid size: serialized program bytes, median children_of seconds
    over sampled nodes, full-enumeration seconds, node count."""
    rng = random.Random(seed)
    rows = []
    for grid in grids:
        program = gen_cholesky(grid)
        params = {"N": grid}
        nodes = enumerate_nodes(program, params)
        picked = nodes if len(nodes) <= samples else rng.sample(nodes, samples)
        _median_query_s(program, params, picked[: min(10, len(picked))])  # warm-up
        rows.append(
            {
                "grid": grid,
                "program_bytes": len(print_program(program).encode()),
                "nodes": len(nodes),
                "children_median_s": _median_query_s(program, params, picked),
                "full_enumeration_s": _enumerate_s(program, params, enum_repeats),
            }
        )
    return rows


def bench_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(
        buf,
        fieldnames=["grid", "program_bytes", "nodes", "children_median_s", "full_enumeration_s"],
    )
    w.writeheader()
    for r in rows:
        w.writerow({**r, "children_median_s": f"{r['children_median_s']:.9f}",
                    "full_enumeration_s": f"{r['full_enumeration_s']:.9f}"})
    return buf.getvalue()


def sweep_sf_csv(rows: list[tuple[float, float, float]]) -> str:
    """CSV of (sf, worker_seconds, completion_time) triples: the cost versus
    completion-time trade-off of the scaling factor."""
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["sf", "worker_seconds", "completion_time"])
    for sf, ws, ct in rows:
        w.writerow([f"{sf:.6g}", f"{ws:.6f}", f"{ct:.6f}"])
    return buf.getvalue()

"""Iteration-space enumeration and single-assignment validation.

enumerate_nodes walks the full loop nest and is deliberately brute force:
it exists as the ground-truth oracle for the implicit dependence queries
and as the materialized-DAG baseline, never as the execution path.
"""

from __future__ import annotations

from dataclasses import dataclass

from .ast import (
    Assign,
    EvalError,
    For,
    IdxExpr,
    If,
    KernelCall,
    LangError,
    Program,
)
from .evaluator import eval_index, eval_scalar


class LoopRangeError(LangError):
    """Raised for loops that cannot terminate (zero or negative step)."""


@dataclass(frozen=True, order=True)
class NodeRef:
    """One dynamic task instance: a kernel-call line plus concrete loop indices."""

    line_id: int
    binding: tuple[tuple[str, int], ...]

    def as_dict(self) -> dict[str, int]:
        return dict(self.binding)

    def __str__(self) -> str:
        return format_node(self)


def make_node(line_id: int, binding: dict[str, int]) -> NodeRef:
    return NodeRef(line_id, tuple(sorted(binding.items())))


def format_node(n: NodeRef) -> str:
    return f"{n.line_id}:" + ",".join(f"{k}={v}" for k, v in n.binding)


def parse_node(text: str) -> NodeRef:
    line_part, _, bind_part = text.partition(":")
    binding = {}
    if bind_part:
        for item in bind_part.split(","):
            k, _, v = item.partition("=")
            if not k or not v:
                raise ValueError(f"bad node reference {text!r}")
            binding[k.strip()] = int(v)
    return make_node(int(line_part), binding)


def loop_range(f: For, env: dict[str, int]) -> range:
    lo = eval_scalar(f.lo, env)
    hi = eval_scalar(f.hi, env)
    step = 1 if f.step is None else eval_scalar(f.step, env)
    for v, what in ((lo, "lower bound"), (hi, "upper bound"), (step, "step")):
        if isinstance(v, bool) or not isinstance(v, int):
            raise EvalError(f"loop {what} of {f.var!r} is not an integer: {v!r}")
    if step <= 0:
        raise LoopRangeError(
            f"loop over {f.var!r} has non-terminating step {step}"
        )
    return range(lo, hi, step)


def enumerate_nodes(p: Program, params: dict[str, int]) -> list[NodeRef]:
    """Every (line id, loop binding) in program order. Oracle/baseline only."""
    bound = p.resolve_params(params)
    out: list[NodeRef] = []

    def walk(stmts, env, loop_vars):
        for s in stmts:
            if isinstance(s, KernelCall):
                out.append(make_node(s.line_id, {v: env[v] for v in loop_vars}))
            elif isinstance(s, For):
                for v in loop_range(s, env):
                    walk(s.body, {**env, s.var: v}, loop_vars + (s.var,))
            elif isinstance(s, If):
                branch = s.then if eval_scalar(s.cond, env) else s.orelse
                walk(branch, env, loop_vars)
            elif isinstance(s, Assign):
                env = {**env, s.name: eval_scalar(s.value, env)}

    walk(p.body, dict(bound), ())
    return out


def node_writes(p: Program, n: NodeRef, params: dict[str, int]) -> list[tuple[str, tuple[int, ...]]]:
    """Concrete (matrix, index) tiles written by node n."""
    ctx = p.line(n.line_id)
    env = _node_env(p, ctx, n, params)
    return [_concrete(idx, env) for idx in ctx.call.outputs]


def node_reads(p: Program, n: NodeRef, params: dict[str, int]) -> list[tuple[str, tuple[int, ...]]]:
    """Concrete (matrix, index) tiles read by node n, in argument order."""
    ctx = p.line(n.line_id)
    env = _node_env(p, ctx, n, params)
    return [_concrete(idx, env) for idx in ctx.call.matrix_inputs]


def node_scalar_args(p: Program, n: NodeRef, params: dict[str, int]) -> list:
    ctx = p.line(n.line_id)
    env = _node_env(p, ctx, n, params)
    return [eval_scalar(e, env) for e in ctx.call.scalar_inputs]


def _node_env(p, ctx, n: NodeRef, params) -> dict[str, int]:
    env = dict(p.resolve_params(params))
    env.update(n.as_dict())
    for a in ctx.assigns:
        env[a.name] = eval_scalar(a.value, env)
    return env


def _concrete(idx: IdxExpr, env) -> tuple[str, tuple[int, ...]]:
    return idx.matrix_name, tuple(eval_index(e, env) for e in idx.indices)


@dataclass(frozen=True)
class SsaViolation:
    matrix: str
    index: tuple[int, ...]
    writers: tuple[NodeRef, ...]

    def __str__(self) -> str:
        who = ", ".join(str(w) for w in self.writers)
        return f"{self.matrix}[{','.join(map(str, self.index))}] written by {who}"


def validate_ssa(p: Program, params: dict[str, int]) -> list[SsaViolation]:
    """Exhaustively check that no concrete tile has two writers.

    Returns the (possibly empty) violation list; empty means the program is
    in single-assignment form under these parameters.
    """
    writers: dict[tuple[str, tuple[int, ...]], list[NodeRef]] = {}
    for n in enumerate_nodes(p, params):
        for tile in node_writes(p, n, params):
            writers.setdefault(tile, []).append(n)
    return [
        SsaViolation(m, idx, tuple(nodes))
        for (m, idx), nodes in sorted(writers.items())
        if len(nodes) > 1
    ]


def oracle_edges(
    p: Program, params: dict[str, int]
) -> tuple[list[NodeRef], set[tuple[NodeRef, NodeRef]]]:
    """Materialize the full DAG by brute force: scan every node's reads
    against every node's writes. The independent oracle for the implicit
    children/parents queries."""
    nodes = enumerate_nodes(p, params)
    writer: dict[tuple[str, tuple[int, ...]], NodeRef] = {}
    for n in nodes:
        for tile in node_writes(p, n, params):
            if tile in writer:
                raise LangError(f"SSA violation at {tile} during oracle build")
            writer[tile] = n
    edges: set[tuple[NodeRef, NodeRef]] = set()
    for n in nodes:
        for tile in node_reads(p, n, params):
            w = writer.get(tile)
            if w is not None:
                edges.add((w, n))
    return nodes, edges


def output_tiles(p: Program, params: dict[str, int]) -> list[tuple[str, tuple[int, ...]]]:
    """Concrete tiles whose existence marks run completion.

    Explicit `output` declarations are evaluated over their comprehension
    ranges. A program with no declarations falls back to every tile the
    program writes to output-role matrices (computed by enumeration once,
    at setup).
    """
    bound = p.resolve_params(params)
    if p.outputs:
        tiles: list[tuple[str, tuple[int, ...]]] = []
        seen = set()
        for decl in p.outputs:
            for env in _comprehension_envs(decl.loops, dict(bound)):
                t = _concrete(decl.tile, env)
                if t not in seen:
                    seen.add(t)
                    tiles.append(t)
        return tiles
    out_matrices = {m.name for m in p.matrices if m.role.value == "output"}
    tiles = []
    seen = set()
    for n in enumerate_nodes(p, params):
        for t in node_writes(p, n, params):
            if t[0] in out_matrices and t not in seen:
                seen.add(t)
                tiles.append(t)
    return tiles


def _comprehension_envs(loops, env):
    if not loops:
        yield env
        return
    var, lo, hi, step = loops[0]
    f = For(var, lo, hi, step, ())
    for v in loop_range(f, env):
        yield from _comprehension_envs(loops[1:], {**env, var: v})

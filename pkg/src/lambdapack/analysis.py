"""Implicit-DAG queries: who reads, who writes, children, parents.

The task graph is never materialized. Given a concrete node, its edges are
recovered by solving, per program line, the system "symbolic index ==
concrete index". Affine subsystems are solved exactly over the rationals;
``c * b**expr`` terms are inverted to synthetic affine equations when their
right-hand side is an exact power; anything else falls back to bounded
enumeration of one loop variable at a time, outermost first. Every
candidate must finally lie inside the iteration space (loop ranges, step
divisibility, guards), which verify_binding checks.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from fractions import Fraction

from .lang.ast import (
    BinOp,
    Bop,
    CmpOp,
    EvalError,
    Expr,
    FloatConst,
    IntConst,
    LangError,
    LineContext,
    Pow,
    Program,
    Ref,
    UnOp,
    Uop,
)
from .lang.evaluator import eval_index, eval_scalar, substitute
from .lang.iteration import NodeRef, loop_range, make_node


class SsaWriterError(LangError):
    """Two writers found for one tile: the program is not single-assignment."""


class InitialInput:
    """Sentinel: the tile is not written by any node and must pre-exist."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "InitialInput"


INITIAL_INPUT = InitialInput()


@dataclass(frozen=True)
class IndexSystem:
    """Equations ``expr == value`` over the loop variables of one line."""

    unknowns: tuple[str, ...]
    equations: tuple[tuple[Expr, int], ...]
    context: dict[str, int] = field(default_factory=dict, hash=False)


@dataclass(frozen=True)
class CandidateSolution:
    binding: dict[str, int] = field(hash=False)
    status: str = "none"  # unique | none | underdetermined


# --- linear/nonlinear decomposition -----------------------------------------


@dataclass
class _SumForm:
    """expr as affine part + sum of c * base**affine terms, or opaque."""

    coeffs: dict[str, Fraction]
    const: Fraction
    powers: list[tuple[Fraction, int, "_SumForm"]]
    opaque: bool = False

    @classmethod
    def constant(cls, v) -> "_SumForm":
        return cls({}, Fraction(v), [])

    @classmethod
    def bad(cls) -> "_SumForm":
        return cls({}, Fraction(0), [], opaque=True)

    @property
    def is_const(self) -> bool:
        return not self.opaque and not self.coeffs and not self.powers

    @property
    def is_affine(self) -> bool:
        return not self.opaque and not self.powers

    def scaled(self, k: Fraction) -> "_SumForm":
        if self.opaque:
            return self
        if k == 0:
            return _SumForm.constant(0)
        return _SumForm(
            {v: c * k for v, c in self.coeffs.items()},
            self.const * k,
            [(c * k, b, e) for c, b, e in self.powers],
        )

    def plus(self, other: "_SumForm") -> "_SumForm":
        if self.opaque or other.opaque:
            return _SumForm.bad()
        coeffs = dict(self.coeffs)
        for v, c in other.coeffs.items():
            coeffs[v] = coeffs.get(v, Fraction(0)) + c
        return _SumForm(
            {v: c for v, c in coeffs.items() if c != 0},
            self.const + other.const,
            self.powers + other.powers,
        )


def _decompose(e: Expr, unknowns: frozenset[str], env: dict[str, int]) -> _SumForm:
    if isinstance(e, IntConst):
        return _SumForm.constant(e.value)
    if isinstance(e, FloatConst):
        return _SumForm.bad()
    if isinstance(e, Ref):
        if e.name in unknowns:
            return _SumForm({e.name: Fraction(1)}, Fraction(0), [])
        if e.name in env:
            return _SumForm.constant(env[e.name])
        return _SumForm.bad()
    if isinstance(e, UnOp):
        inner = _decompose(e.operand, unknowns, env)
        if e.op is Uop.NEG:
            return inner.scaled(Fraction(-1))
        # log/log2/ceil/floor fold only over an already-constant operand
        if inner.is_const:
            c = inner.const
            if e.op is Uop.CEILING:
                return _SumForm.constant(-((-c.numerator) // c.denominator))
            if e.op is Uop.FLOOR:
                return _SumForm.constant(c.numerator // c.denominator)
            if e.op is Uop.LOG2 and c.denominator == 1:
                m = _as_power(c, 2)
                if m is not None:
                    return _SumForm.constant(m)
            if e.op is Uop.LOG and c == 1:
                return _SumForm.constant(0)
        return _SumForm.bad()
    if isinstance(e, Pow):
        exp = _decompose(e.exponent, unknowns, env)
        if exp.is_const:
            if exp.const.denominator != 1 or exp.const < 0:
                return _SumForm.bad()
            return _SumForm.constant(Fraction(e.base) ** int(exp.const))
        if exp.is_affine and e.base >= 2:
            return _SumForm({}, Fraction(0), [(Fraction(1), e.base, exp)])
        return _SumForm.bad()
    if isinstance(e, BinOp):
        if e.op in (Bop.AND, Bop.OR):
            return _SumForm.bad()
        left = _decompose(e.left, unknowns, env)
        right = _decompose(e.right, unknowns, env)
        if e.op is Bop.ADD:
            return left.plus(right)
        if e.op is Bop.SUB:
            return left.plus(right.scaled(Fraction(-1)))
        if e.op is Bop.MUL:
            if left.is_const:
                return right.scaled(left.const)
            if right.is_const:
                return left.scaled(right.const)
            return _SumForm.bad()
        if e.op is Bop.DIV:
            if right.is_const and right.const != 0:
                return left.scaled(Fraction(1) / right.const)
            return _SumForm.bad()
        if e.op is Bop.MOD:
            if left.is_const and right.is_const and right.const != 0:
                if left.const.denominator == 1 and right.const.denominator == 1:
                    return _SumForm.constant(int(left.const) % int(right.const))
            return _SumForm.bad()
    if isinstance(e, CmpOp):
        return _SumForm.bad()
    return _SumForm.bad()  # pragma: no cover


# --- exact rational elimination ----------------------------------------------


def _rref_pinned(rows: list[tuple[dict[str, Fraction], Fraction]], order: list[str]):
    """Reduce affine rows; return (consistent, {var: value} for fully pinned vars)."""
    matrix = [[r[0].get(v, Fraction(0)) for v in order] + [r[1]] for r in rows]
    ncols = len(order)
    pivot_rows: list[int] = []
    lead = 0
    for col in range(ncols):
        pivot = next(
            (r for r in range(lead, len(matrix)) if matrix[r][col] != 0), None
        )
        if pivot is None:
            continue
        matrix[lead], matrix[pivot] = matrix[pivot], matrix[lead]
        pv = matrix[lead][col]
        matrix[lead] = [x / pv for x in matrix[lead]]
        for r in range(len(matrix)):
            if r != lead and matrix[r][col] != 0:
                f = matrix[r][col]
                matrix[r] = [a - f * b for a, b in zip(matrix[r], matrix[lead])]
        pivot_rows.append(lead)
        lead += 1
        if lead == len(matrix):
            break
    for r in range(len(matrix)):
        if all(x == 0 for x in matrix[r][:-1]) and matrix[r][-1] != 0:
            return False, {}
    pinned: dict[str, Fraction] = {}
    for r in pivot_rows:
        nz = [c for c in range(ncols) if matrix[r][c] != 0]
        if len(nz) == 1:
            pinned[order[nz[0]]] = matrix[r][-1]
    return True, pinned


def _as_power(value: Fraction, base: int) -> int | None:
    """m such that base**m == value, or None."""
    if value.denominator != 1 or value <= 0:
        return None
    v = int(value)
    m = 0
    while v > 1:
        if v % base:
            return None
        v //= base
        m += 1
    return m


def solve_index_system(sys: IndexSystem) -> CandidateSolution:
    """Solve iteratively: exact affine elimination, power-term inversion,
    substitution to fixpoint. Returns unique/none, or underdetermined with
    whatever was pinned (callers enumerate the rest over loop ranges)."""
    fixed: dict[str, int] = {}
    remaining = list(sys.unknowns)
    while remaining:
        env = {**sys.context, **fixed}
        unknowns = frozenset(remaining)
        affine_rows: list[tuple[dict[str, Fraction], Fraction]] = []
        stuck = []
        for expr, target in sys.equations:
            form = _decompose(expr, unknowns, env)
            if form.opaque:
                stuck.append(form)
                continue
            if form.is_const:
                if form.const != target:
                    return CandidateSolution({}, "none")
                continue
            if form.is_affine:
                affine_rows.append((form.coeffs, Fraction(target) - form.const))
                continue
            # one pure power term and no free affine part inverts exactly
            if len(form.powers) == 1 and not form.coeffs:
                c, base, exp = form.powers[0]
                m = _as_power((Fraction(target) - form.const) / c, base)
                if m is None:
                    return CandidateSolution({}, "none")
                affine_rows.append((exp.coeffs, Fraction(m) - exp.const))
            else:
                stuck.append(form)
        progress = False
        if affine_rows:
            consistent, pinned = _rref_pinned(affine_rows, remaining)
            if not consistent:
                return CandidateSolution({}, "none")
            for var, val in pinned.items():
                if val.denominator != 1:
                    return CandidateSolution({}, "none")
                fixed[var] = int(val)
                remaining.remove(var)
                progress = True
        if not progress:
            break
    if remaining:
        return CandidateSolution(dict(fixed), "underdetermined")
    # full assignment: confirm every equation exactly, with index semantics
    env = {**sys.context, **fixed}
    for expr, target in sys.equations:
        try:
            if eval_index(expr, env) != target:
                return CandidateSolution({}, "none")
        except EvalError:
            return CandidateSolution({}, "none")
    return CandidateSolution(dict(fixed), "unique")


# --- iteration-space membership ----------------------------------------------


def verify_binding(
    p: Program, line_id: int, binding: dict[str, int], params: dict[str, int]
) -> bool:
    """True iff the binding lies in line_id's iteration space: every
    enclosing loop admits its value (bounds, step divisibility, evaluated
    outside-in) and every guard takes the branch the line sits on."""
    ctx = p.line(line_id)
    env = {**p.resolve_params(params), **binding}
    for a in ctx.assigns:
        try:
            env[a.name] = eval_scalar(a.value, env)
        except EvalError:
            return False
    for f in ctx.loops:
        v = binding.get(f.var)
        if v is None:
            return False
        try:
            r = loop_range(f, env)
        except EvalError:
            return False
        if not (r.start <= v < r.stop) or (v - r.start) % r.step:
            return False
    for cond, taken in ctx.guards:
        try:
            holds = bool(eval_scalar(cond, env))
        except EvalError:
            return False
        if holds != taken:
            return False
    return True


# --- queries ------------------------------------------------------------------


class AnalysisContext:
    """Query context with an optional (tile -> writer) memo.

    The memo is a pure cache: results are identical with it disabled.
    """

    def __init__(self, program: Program, params: dict[str, int], memo: bool = True):
        self.program = program
        self.params = program.resolve_params(params)
        self._memo_enabled = memo
        self._writer_memo: dict[tuple[str, tuple[int, ...]], object] = {}
        self._lock = threading.Lock()

    def writer_cached(self, matrix: str, idx: tuple[int, ...]):
        if not self._memo_enabled:
            return find_writer(self.program, self.params, matrix, idx)
        key = (matrix, idx)
        with self._lock:
            hit = self._writer_memo.get(key)
        if hit is None:
            hit = find_writer(self.program, self.params, matrix, idx)
            with self._lock:
                self._writer_memo[key] = hit
        return hit

    def children(self, n: NodeRef) -> set[NodeRef]:
        return children_of(self.program, self.params, n)

    def parents(self, n: NodeRef) -> set[NodeRef]:
        out = set()
        for matrix, idx in _node_tiles(self.program, self.params, n, reads=True):
            w = self.writer_cached(matrix, idx)
            if w is not INITIAL_INPUT:
                out.add(w)
        return out

    def parent_count(self, n: NodeRef) -> int:
        return len(self.parents(n))


def _inline_assigns(ctx: LineContext) -> dict[str, Expr]:
    """Substitution map turning assigned scalars into loop-var/param exprs."""
    defs: dict[str, Expr] = {}
    for a in ctx.assigns:
        defs[a.name] = substitute(a.value, defs)
    return defs


def _solve_line(
    p: Program,
    params: dict[str, int],
    ctx: LineContext,
    patterns: list[IdxExpr],
    idx: tuple[int, ...],
):
    """All loop bindings of ctx's line at which some pattern equals idx."""
    defs = _inline_assigns(ctx)
    loop_vars = list(ctx.loop_vars)
    seen: set[tuple] = set()
    for pattern in patterns:
        if len(pattern.indices) != len(idx):
            continue
        eqs = tuple(
            (substitute(ix, defs), concrete)
            for ix, concrete in zip(pattern.indices, idx)
        )
        for binding in _solve_rec(eqs, loop_vars, ctx, dict(params)):
            key = tuple(sorted(binding.items()))
            if key not in seen:
                seen.add(key)
                yield binding


def _solve_rec(eqs, loop_vars, ctx: LineContext, known: dict[str, int]):
    unknowns = tuple(v for v in loop_vars if v not in known)
    sol = solve_index_system(IndexSystem(unknowns, eqs, known))
    if sol.status == "none":
        return
    merged = {**known, **sol.binding}
    if sol.status == "unique":
        yield {v: merged[v] for v in loop_vars}
        return
    # underdetermined: enumerate the outermost still-free loop, whose bounds
    # depend only on strictly-outer (already fixed) variables
    target = next(v for v in loop_vars if v not in merged)
    env = dict(merged)
    for a in ctx.assigns:
        try:
            env[a.name] = eval_scalar(a.value, env)
        except EvalError:
            pass
    f = next(f for f in ctx.loops if f.var == target)
    try:
        candidates = loop_range(f, env)
    except EvalError:
        return
    for v in candidates:
        yield from _solve_rec(eqs, loop_vars, ctx, {**merged, target: v})


def _node_tiles(p: Program, params, n: NodeRef, *, reads: bool):
    ctx = p.line(n.line_id)
    env = {**p.resolve_params(params), **n.as_dict()}
    for a in ctx.assigns:
        env[a.name] = eval_scalar(a.value, env)
    idxs = ctx.call.matrix_inputs if reads else ctx.call.outputs
    for idx in idxs:
        yield idx.matrix_name, tuple(eval_index(e, env) for e in idx.indices)


def find_readers(
    p: Program, params: dict[str, int], matrix: str, idx: tuple[int, ...]
) -> set[NodeRef]:
    """Exactly the nodes whose kernel inputs include matrix[idx]."""
    p.matrix(matrix)  # raises on unknown matrix
    bound = p.resolve_params(params)
    out: set[NodeRef] = set()
    for line_id in p.line_ids:
        ctx = p.line(line_id)
        patterns = [x for x in ctx.call.matrix_inputs if x.matrix_name == matrix]
        if not patterns:
            continue
        for binding in _solve_line(p, bound, ctx, patterns, tuple(idx)):
            if verify_binding(p, line_id, binding, bound):
                out.add(make_node(line_id, binding))
    return out


def find_writer(
    p: Program, params: dict[str, int], matrix: str, idx: tuple[int, ...]
):
    """The unique node writing matrix[idx], or INITIAL_INPUT if none does."""
    p.matrix(matrix)
    bound = p.resolve_params(params)
    found: list[NodeRef] = []
    for line_id in p.line_ids:
        ctx = p.line(line_id)
        patterns = [x for x in ctx.call.outputs if x.matrix_name == matrix]
        if not patterns:
            continue
        for binding in _solve_line(p, bound, ctx, patterns, tuple(idx)):
            if verify_binding(p, line_id, binding, bound):
                n = make_node(line_id, binding)
                if n not in found:
                    found.append(n)
    if not found:
        return INITIAL_INPUT
    if len(found) > 1:
        raise SsaWriterError(
            f"{matrix}[{','.join(map(str, idx))}] has multiple writers: "
            + ", ".join(map(str, found))
        )
    return found[0]


def children_of(p: Program, params: dict[str, int], n: NodeRef) -> set[NodeRef]:
    """Union of find_readers over every tile n writes."""
    bound = p.resolve_params(params)
    out: set[NodeRef] = set()
    for matrix, idx in _node_tiles(p, bound, n, reads=False):
        out |= find_readers(p, bound, matrix, idx)
    return out


def parents_of(p: Program, params: dict[str, int], n: NodeRef) -> set[NodeRef]:
    """Writers of n's input tiles, initial inputs excluded. len() is n's
    readiness threshold."""
    bound = p.resolve_params(params)
    out: set[NodeRef] = set()
    for matrix, idx in _node_tiles(p, bound, n, reads=True):
        w = find_writer(p, bound, matrix, idx)
        if w is not INITIAL_INPUT:
            out.add(w)
    return out

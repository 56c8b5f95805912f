"""Canonical source printer. parse(print(p)) reproduces p structurally."""

from __future__ import annotations

from .ast import (
    Assign,
    BinOp,
    Bop,
    CmpOp,
    Expr,
    FloatConst,
    For,
    IdxExpr,
    If,
    IntConst,
    KernelCall,
    OutputDecl,
    Pow,
    Program,
    Ref,
    UnOp,
    Uop,
)

_INDENT = "  "

# binding strength, loosest first; unary NEG binds like a prefix at _UNARY
_PREC_OR = 1
_PREC_AND = 2
_PREC_NOT = 3
_PREC_CMP = 4
_PREC_ADD = 5
_PREC_MUL = 6
_PREC_UNARY = 7
_PREC_POW = 8
_PREC_ATOM = 9

_BOP_PREC = {
    Bop.OR: _PREC_OR,
    Bop.AND: _PREC_AND,
    Bop.ADD: _PREC_ADD,
    Bop.SUB: _PREC_ADD,
    Bop.MUL: _PREC_MUL,
    Bop.DIV: _PREC_MUL,
    Bop.MOD: _PREC_MUL,
}

_FUNC_NAMES = {Uop.LOG: "log", Uop.LOG2: "log2", Uop.CEILING: "ceil", Uop.FLOOR: "floor"}


def print_expr(e: Expr) -> str:
    return _fmt(e, 0)


def _fmt(e: Expr, parent_prec: int) -> str:
    if isinstance(e, IntConst):
        s, prec = str(e.value), _PREC_ATOM
    elif isinstance(e, FloatConst):
        s, prec = repr(e.value), _PREC_ATOM
    elif isinstance(e, Ref):
        s, prec = e.name, _PREC_ATOM
    elif isinstance(e, Pow):
        # exponent is the right operand of a right-associative operator
        s = f"{e.base} ** {_fmt(e.exponent, _PREC_POW)}"
        prec = _PREC_POW
    elif isinstance(e, UnOp):
        if e.op in _FUNC_NAMES:
            s, prec = f"{_FUNC_NAMES[e.op]}({_fmt(e.operand, 0)})", _PREC_ATOM
        elif e.op is Uop.NEG:
            s, prec = f"-{_fmt(e.operand, _PREC_UNARY)}", _PREC_UNARY
        else:
            s, prec = f"not {_fmt(e.operand, _PREC_NOT)}", _PREC_NOT
    elif isinstance(e, CmpOp):
        s = f"{_fmt(e.left, _PREC_CMP + 1)} {e.op.value} {_fmt(e.right, _PREC_CMP + 1)}"
        prec = _PREC_CMP
    elif isinstance(e, BinOp):
        prec = _BOP_PREC[e.op]
        # left-associative: right child needs one more level of binding
        s = f"{_fmt(e.left, prec)} {e.op.value} {_fmt(e.right, prec + 1)}"
    else:
        raise TypeError(f"not an expression: {type(e).__name__}")
    return f"({s})" if prec < parent_prec else s


def print_idx(idx: IdxExpr) -> str:
    return f"{idx.matrix_name}[{', '.join(_fmt(i, 0) for i in idx.indices)}]"


def _range_str(lo: Expr, hi: Expr, step: Expr | None) -> str:
    parts = [_fmt(lo, 0), _fmt(hi, 0)]
    if step is not None:
        parts.append(_fmt(step, 0))
    return f"range({', '.join(parts)})"


def _print_stmt(s, depth: int, out: list[str]):
    pad = _INDENT * depth
    if isinstance(s, KernelCall):
        args = [print_idx(i) for i in s.matrix_inputs] + [
            _fmt(e, 0) for e in s.scalar_inputs
        ]
        out.append(f"{pad}{print_idx(s.outputs[0])} = {s.kernel}({', '.join(args)})")
    elif isinstance(s, Assign):
        out.append(f"{pad}{s.name} = {_fmt(s.value, 0)}")
    elif isinstance(s, For):
        out.append(f"{pad}for {s.var} in {_range_str(s.lo, s.hi, s.step)}:")
        for c in s.body:
            _print_stmt(c, depth + 1, out)
    elif isinstance(s, If):
        out.append(f"{pad}if {_fmt(s.cond, 0)}:")
        for c in s.then:
            _print_stmt(c, depth + 1, out)
        if s.orelse:
            out.append(f"{pad}else:")
            for c in s.orelse:
                _print_stmt(c, depth + 1, out)
    else:
        raise TypeError(f"not a statement: {type(s).__name__}")


def _print_output(o: OutputDecl) -> str:
    s = f"output {print_idx(o.tile)}"
    for var, lo, hi, step in o.loops:
        s += f" for {var} in {_range_str(lo, hi, step)}"
    return s


def print_program(p: Program) -> str:
    out = [f"program {p.name}"]
    for q in p.params:
        out.append(f"param {q.name}" if q.value is None else f"param {q.name} = {q.value}")
    for m in p.matrices:
        out.append(f"matrix {m.name}[{m.arity}] {m.role.value}")
    for s in p.body:
        _print_stmt(s, 0, out)
    for o in p.outputs:
        out.append(_print_output(o))
    return "\n".join(out) + "\n"

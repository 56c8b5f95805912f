"""Scalar expression evaluation.

Two contexts share one walker. Scalar context (loop bounds, guards,
assignments) floors integer division. Index context (tile subscripts)
requires exact integer results so a tile index can never be silently
rounded.
"""

from __future__ import annotations

import math

from .ast import (
    BinOp,
    Bop,
    CmpOp,
    Cop,
    EvalError,
    Expr,
    FloatConst,
    IntConst,
    Pow,
    Ref,
    UnOp,
    Uop,
)

Number = int | float | bool


def eval_scalar(e: Expr, binding: dict[str, int]) -> Number:
    return _eval(e, binding, index=False)


def eval_index(e: Expr, binding: dict[str, int]) -> int:
    """Evaluate a tile-subscript expression; must come out an exact integer."""
    v = _eval(e, binding, index=True)
    if isinstance(v, bool) or not isinstance(v, int):
        raise EvalError(f"tile index evaluated to non-integer {v!r}")
    return v


def _eval(e: Expr, b: dict[str, int], *, index: bool) -> Number:
    if isinstance(e, IntConst):
        return e.value
    if isinstance(e, FloatConst):
        return e.value
    if isinstance(e, Ref):
        try:
            return b[e.name]
        except KeyError:
            raise EvalError(f"unbound reference {e.name!r}") from None
    if isinstance(e, Pow):
        exp = _eval(e.exponent, b, index=index)
        if isinstance(exp, bool) or not isinstance(exp, int):
            raise EvalError(f"exponent must be an integer, got {exp!r}")
        if exp < 0:
            if index:
                raise EvalError("negative exponent in index context")
            return float(e.base) ** exp
        return e.base**exp
    if isinstance(e, UnOp):
        v = _eval(e.operand, b, index=index)
        if e.op is Uop.NEG:
            return -v
        if e.op is Uop.NOT:
            return not v
        if e.op is Uop.LOG2:
            return _exact_log2(v)
        if e.op is Uop.LOG:
            if v <= 0:
                raise EvalError(f"log of non-positive value {v!r}")
            return 0 if v == 1 else math.log(v)
        if e.op is Uop.CEILING:
            return math.ceil(v)
        if e.op is Uop.FLOOR:
            return math.floor(v)
        raise EvalError(f"unknown unary op {e.op}")  # pragma: no cover
    if isinstance(e, CmpOp):
        l = _eval(e.left, b, index=index)
        r = _eval(e.right, b, index=index)
        return {
            Cop.EQ: l == r,
            Cop.NE: l != r,
            Cop.LT: l < r,
            Cop.GT: l > r,
            Cop.LE: l <= r,
            Cop.GE: l >= r,
        }[e.op]
    if isinstance(e, BinOp):
        l = _eval(e.left, b, index=index)
        if e.op is Bop.AND:
            return bool(l) and bool(_eval(e.right, b, index=index))
        if e.op is Bop.OR:
            return bool(l) or bool(_eval(e.right, b, index=index))
        r = _eval(e.right, b, index=index)
        if e.op is Bop.ADD:
            return l + r
        if e.op is Bop.SUB:
            return l - r
        if e.op is Bop.MUL:
            return l * r
        if e.op is Bop.MOD:
            if r == 0:
                raise EvalError("modulo by zero")
            return l % r
        if e.op is Bop.DIV:
            if r == 0:
                raise EvalError("division by zero")
            if isinstance(l, int) and isinstance(r, int):
                if index:
                    if l % r != 0:
                        raise EvalError(f"inexact index division {l}/{r}")
                    return l // r
                return l // r
            return l / r
        raise EvalError(f"unknown binary op {e.op}")  # pragma: no cover
    raise EvalError(f"cannot evaluate {type(e).__name__}")  # pragma: no cover


def _exact_log2(v: Number) -> Number:
    """log2 that stays an exact int on integer powers of two (loop bounds rely on it)."""
    if isinstance(v, int) and not isinstance(v, bool) and v > 0:
        if v & (v - 1) == 0:
            return v.bit_length() - 1
        return math.log2(v)
    if isinstance(v, (int, float)) and v > 0:
        return math.log2(v)
    raise EvalError(f"log2 of non-positive value {v!r}")


def free_refs(e: Expr) -> set[str]:
    """Names referenced anywhere in e."""
    if isinstance(e, Ref):
        return {e.name}
    if isinstance(e, (IntConst, FloatConst)):
        return set()
    if isinstance(e, UnOp):
        return free_refs(e.operand)
    if isinstance(e, Pow):
        return free_refs(e.exponent)
    if isinstance(e, (BinOp, CmpOp)):
        return free_refs(e.left) | free_refs(e.right)
    raise TypeError(f"not an expression: {type(e).__name__}")


def substitute(e: Expr, defs: dict[str, Expr]) -> Expr:
    """Replace Refs by expressions (used to inline scalar assignments)."""
    if isinstance(e, Ref):
        return defs.get(e.name, e)
    if isinstance(e, (IntConst, FloatConst)):
        return e
    if isinstance(e, UnOp):
        return UnOp(e.op, substitute(e.operand, defs))
    if isinstance(e, Pow):
        return Pow(e.base, substitute(e.exponent, defs))
    if isinstance(e, BinOp):
        return BinOp(e.op, substitute(e.left, defs), substitute(e.right, defs))
    if isinstance(e, CmpOp):
        return CmpOp(e.op, substitute(e.left, defs), substitute(e.right, defs))
    raise TypeError(f"not an expression: {type(e).__name__}")

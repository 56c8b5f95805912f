"""AST for the tiled linear algebra DSL.

Programs are loop nests over kernel calls on symbolic tile indices. All
nodes are immutable; a Program plus a parameter binding fully determines
the iteration space. Statement bodies are plain tuples (implicit blocks).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Union


class Bop(enum.Enum):
    ADD = "+"
    SUB = "-"
    MUL = "*"
    DIV = "/"
    MOD = "%"
    AND = "and"
    OR = "or"


class Cop(enum.Enum):
    EQ = "=="
    NE = "!="
    LT = "<"
    GT = ">"
    LE = "<="
    GE = ">="


class Uop(enum.Enum):
    NEG = "-"
    NOT = "not"
    LOG = "log"
    CEILING = "ceil"
    FLOOR = "floor"
    LOG2 = "log2"


@dataclass(frozen=True)
class IntConst:
    value: int


@dataclass(frozen=True)
class FloatConst:
    value: float


@dataclass(frozen=True)
class Ref:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: Bop
    left: Expr
    right: Expr


@dataclass(frozen=True)
class CmpOp:
    op: Cop
    left: Expr
    right: Expr


@dataclass(frozen=True)
class UnOp:
    op: Uop
    operand: Expr


@dataclass(frozen=True)
class Pow:
    """Integer base raised to an expression, the ``2**e`` form.

    The base is restricted to an integer literal so the index solver can
    treat ``c * base**e`` terms symbolically.
    """

    base: int
    exponent: Expr


Expr = Union[IntConst, FloatConst, Ref, BinOp, CmpOp, UnOp, Pow]


@dataclass(frozen=True)
class IdxExpr:
    """A symbolic tile reference: matrix name plus one index Expr per dimension."""

    matrix_name: str
    indices: tuple[Expr, ...]


@dataclass(frozen=True)
class KernelCall:
    """One kernel-call statement; line_id is its ordinal among kernel calls."""

    line_id: int
    kernel: str
    outputs: tuple[IdxExpr, ...]
    matrix_inputs: tuple[IdxExpr, ...]
    scalar_inputs: tuple[Expr, ...] = ()


@dataclass(frozen=True)
class Assign:
    name: str
    value: Expr


@dataclass(frozen=True)
class For:
    """``for var in range(lo, hi, step)``; half-open, step defaults to 1."""

    var: str
    lo: Expr
    hi: Expr
    step: Expr | None
    body: tuple[Stmt, ...]


@dataclass(frozen=True)
class If:
    cond: Expr
    then: tuple[Stmt, ...]
    orelse: tuple[Stmt, ...] = ()


Stmt = Union[For, If, KernelCall, Assign]


@dataclass(frozen=True)
class ParamDecl:
    name: str
    value: int | None = None


class MatrixRole(enum.Enum):
    INPUT = "input"
    INTERMEDIATE = "intermediate"
    OUTPUT = "output"


@dataclass(frozen=True)
class MatrixDecl:
    name: str
    arity: int
    role: MatrixRole


@dataclass(frozen=True)
class OutputDecl:
    """Declares tiles whose existence marks run completion.

    ``tile`` may reference the comprehension loops, e.g.
    ``output O[i, j] for i in range(0, N) for j in range(0, i + 1)``.
    """

    tile: IdxExpr
    loops: tuple[tuple[str, Expr, Expr, Expr | None], ...] = ()


@dataclass(frozen=True)
class LineContext:
    """Static context of one kernel-call line: enclosing loops, guards, assigns.

    ``guards`` pairs each If predicate with the branch taken (True = then).
    All three tuples are ordered outermost first.
    """

    call: KernelCall
    loops: tuple[For, ...]
    guards: tuple[tuple[Expr, bool], ...]
    assigns: tuple[Assign, ...]

    @property
    def loop_vars(self) -> tuple[str, ...]:
        return tuple(f.var for f in self.loops)


@dataclass(frozen=True)
class Program:
    name: str
    params: tuple[ParamDecl, ...]
    matrices: tuple[MatrixDecl, ...]
    body: tuple[Stmt, ...]
    outputs: tuple[OutputDecl, ...] = ()
    _line_index: dict = field(
        default_factory=dict, compare=False, repr=False, hash=False
    )

    def __post_init__(self):
        index: dict[int, LineContext] = {}
        _index_stmts(self.body, (), (), (), index)
        object.__setattr__(self, "_line_index", index)

    @property
    def kernel_calls(self) -> tuple[KernelCall, ...]:
        return tuple(self._line_index[i].call for i in sorted(self._line_index))

    @property
    def line_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self._line_index))

    def line(self, line_id: int) -> LineContext:
        try:
            return self._line_index[line_id]
        except KeyError:
            raise KeyError(f"no kernel call with line id {line_id}") from None

    def matrix(self, name: str) -> MatrixDecl:
        for m in self.matrices:
            if m.name == name:
                return m
        raise KeyError(f"undeclared matrix {name!r}")

    def param_defaults(self) -> dict[str, int]:
        return {p.name: p.value for p in self.params if p.value is not None}

    def resolve_params(self, overrides: dict[str, int] | None = None) -> dict[str, int]:
        """Merge declared defaults with overrides; every param must end up bound."""
        bound = self.param_defaults()
        bound.update(overrides or {})
        missing = [p.name for p in self.params if p.name not in bound]
        if missing:
            raise UnboundParameterError(f"unbound parameter(s): {', '.join(missing)}")
        return {p.name: bound[p.name] for p in self.params}


def _index_stmts(stmts, loops, guards, assigns, out):
    for s in stmts:
        if isinstance(s, KernelCall):
            out[s.line_id] = LineContext(s, loops, guards, assigns)
        elif isinstance(s, For):
            _index_stmts(s.body, loops + (s,), guards, assigns, out)
        elif isinstance(s, If):
            _index_stmts(s.then, loops, guards + ((s.cond, True),), assigns, out)
            _index_stmts(s.orelse, loops, guards + ((s.cond, False),), assigns, out)
        elif isinstance(s, Assign):
            assigns = assigns + (s,)
        else:  # pragma: no cover - parser only builds the four kinds
            raise TypeError(f"unexpected statement {type(s).__name__}")


class LangError(Exception):
    """Base class for language-level errors."""


class EvalError(LangError):
    pass


class UnboundParameterError(LangError):
    pass

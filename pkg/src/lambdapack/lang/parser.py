"""Parser for `.lp` program files.

Line-oriented concrete syntax, blocks by indentation (spaces only):

    program cholesky
    param N = 4
    matrix S[3] input
    matrix O[2] output
    for i in range(0, N):
      O[i, i] = chol(S[i, i, i])
    output O[i, j] for i in range(0, N) for j in range(0, i + 1)

Kernel names are validated against a closed registry at parse time, as is
the subscript count of every tile reference against its matrix declaration.
The grammar has no function definitions, so recursion is unrepresentable.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .ast import (
    Assign,
    BinOp,
    Bop,
    CmpOp,
    Cop,
    Expr,
    FloatConst,
    For,
    IdxExpr,
    If,
    IntConst,
    KernelCall,
    LangError,
    MatrixDecl,
    MatrixRole,
    OutputDecl,
    ParamDecl,
    Pow,
    Program,
    Ref,
    UnOp,
    Uop,
)
from .evaluator import free_refs


class ParseError(LangError):
    def __init__(self, message: str, line: int, col: int = 0):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


_KEYWORDS = {
    "program", "param", "matrix", "output", "for", "in", "range", "if",
    "else", "and", "or", "not", "input", "intermediate", "def",
}
_UNARY_FUNCS = {"log": Uop.LOG, "log2": Uop.LOG2, "ceil": Uop.CEILING, "floor": Uop.FLOOR}

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d+|\d+)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|==|!=|<=|>=|[+\-*/%<>=(),:\[\]]))"
)


@dataclass
class _Tok:
    kind: str  # num | name | op | end
    text: str
    col: int


def _tokenize(text: str, lineno: int) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            rest = text[pos:].lstrip()
            if not rest:
                break
            raise ParseError(f"unexpected character {rest[0]!r}", lineno, pos + 1)
        if m.group("num"):
            toks.append(_Tok("num", m.group("num"), m.start("num") + 1))
        elif m.group("name"):
            toks.append(_Tok("name", m.group("name"), m.start("name") + 1))
        else:
            toks.append(_Tok("op", m.group("op"), m.start("op") + 1))
        pos = m.end()
    toks.append(_Tok("end", "", len(text) + 1))
    return toks


class _ExprParser:
    """Precedence-climbing parser over one line's token stream."""

    def __init__(self, toks: list[_Tok], lineno: int):
        self.toks = toks
        self.i = 0
        self.lineno = lineno

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        t = self.toks[self.i]
        if t.kind != "end":
            self.i += 1
        return t

    def expect(self, text: str) -> _Tok:
        t = self.next()
        if t.text != text:
            self.fail(f"expected {text!r}, got {t.text or 'end of line'!r}", t)
        return t

    def at_end(self) -> bool:
        return self.peek().kind == "end"

    def fail(self, msg: str, tok: _Tok | None = None):
        raise ParseError(msg, self.lineno, (tok or self.peek()).col)

    # expression grammar, loosest binding first
    def expr(self) -> Expr:
        return self._or()

    def _or(self) -> Expr:
        e = self._and()
        while self.peek().text == "or":
            self.next()
            e = BinOp(Bop.OR, e, self._and())
        return e

    def _and(self) -> Expr:
        e = self._not()
        while self.peek().text == "and":
            self.next()
            e = BinOp(Bop.AND, e, self._not())
        return e

    def _not(self) -> Expr:
        if self.peek().text == "not":
            self.next()
            return UnOp(Uop.NOT, self._not())
        return self._cmp()

    _CMP = {"==": Cop.EQ, "!=": Cop.NE, "<": Cop.LT, ">": Cop.GT, "<=": Cop.LE, ">=": Cop.GE}

    def _cmp(self) -> Expr:
        e = self._add()
        if self.peek().text in self._CMP:
            op = self._CMP[self.next().text]
            return CmpOp(op, e, self._add())
        return e

    def _add(self) -> Expr:
        e = self._mul()
        while self.peek().text in ("+", "-"):
            op = Bop.ADD if self.next().text == "+" else Bop.SUB
            e = BinOp(op, e, self._mul())
        return e

    def _mul(self) -> Expr:
        e = self._unary()
        while self.peek().text in ("*", "/", "%"):
            t = self.next().text
            op = {"*": Bop.MUL, "/": Bop.DIV, "%": Bop.MOD}[t]
            e = BinOp(op, e, self._unary())
        return e

    def _unary(self) -> Expr:
        if self.peek().text == "-":
            self.next()
            return UnOp(Uop.NEG, self._unary())
        return self._power()

    def _power(self) -> Expr:
        base_tok = self.peek()
        e = self._atom()
        if self.peek().text == "**":
            self.next()
            if not isinstance(e, IntConst):
                self.fail("'**' base must be an integer literal", base_tok)
            return Pow(e.value, self._unary())
        return e

    def _atom(self) -> Expr:
        t = self.next()
        if t.kind == "num":
            if "." in t.text:
                return FloatConst(float(t.text))
            return IntConst(int(t.text))
        if t.text == "(":
            e = self.expr()
            self.expect(")")
            return e
        if t.kind == "name":
            if t.text in _UNARY_FUNCS and self.peek().text == "(":
                self.next()
                e = self.expr()
                self.expect(")")
                return UnOp(_UNARY_FUNCS[t.text], e)
            if t.text in _KEYWORDS:
                self.fail(f"unexpected keyword {t.text!r}", t)
            return Ref(t.text)
        self.fail(f"expected expression, got {t.text or 'end of line'!r}", t)


# default kernel registry: name -> set of accepted matrix-input arities
DEFAULT_KERNEL_ARITIES: dict[str, set[int]] = {
    "chol": {1},
    "trsm": {2},
    "syrk": {3},
    "qr_factor": {1, 2},
    "matmul": {2},
    "add": {2},
}


@dataclass
class _Line:
    number: int
    indent: int
    toks: list[_Tok]
    text: str


def parse_program(
    source: str,
    name: str = "main",
    kernel_arities: dict[str, set[int]] | None = None,
) -> Program:
    """Parse `.lp` source text into a Program.

    Kernel-call statements get line ids 0, 1, ... in source order, stable
    under print/reparse. Raises ParseError with line/column on bad input.
    """
    kernels = DEFAULT_KERNEL_ARITIES if kernel_arities is None else kernel_arities
    lines = _logical_lines(source)
    if not lines:
        raise ParseError("empty program", 1)
    return _ProgramParser(lines, name, kernels).parse()


def _logical_lines(source: str) -> list[_Line]:
    out = []
    for n, raw in enumerate(source.splitlines(), start=1):
        text = raw.split("#", 1)[0].rstrip()
        if not text.strip():
            continue
        if "\t" in raw[: len(raw) - len(raw.lstrip())]:
            raise ParseError("indentation must use spaces, not tabs", n)
        indent = len(text) - len(text.lstrip(" "))
        out.append(_Line(n, indent, _tokenize(text.strip(), n), text.strip()))
    return out


class _ProgramParser:
    def __init__(self, lines: list[_Line], name: str, kernels: dict[str, set[int]]):
        self.lines = lines
        self.pos = 0
        self.name = name
        self.kernels = kernels
        self.params: list[ParamDecl] = []
        self.matrices: dict[str, MatrixDecl] = {}
        self.outputs: list[OutputDecl] = []
        self.next_line_id = 0
        self.assigned: set[str] = set()

    def parse(self) -> Program:
        self._parse_header()
        body = self._parse_block(indent=0, scope=())
        while self.pos < len(self.lines):  # trailing output decls after the body
            line = self.lines[self.pos]
            if line.toks[0].text != "output":
                raise ParseError(
                    "only output declarations may follow the program body", line.number
                )
            self._parse_output(line)
            self.pos += 1
        if not self.matrices:
            raise ParseError("program declares no matrices", self.lines[-1].number)
        return Program(
            name=self.name,
            params=tuple(self.params),
            matrices=tuple(self.matrices.values()),
            body=body,
            outputs=tuple(self.outputs),
        )

    def _parse_header(self):
        while self.pos < len(self.lines):
            line = self.lines[self.pos]
            head = line.toks[0].text
            if head == "program":
                if line.indent:
                    raise ParseError("declarations must not be indented", line.number)
                p = _ExprParser(line.toks, line.number)
                p.expect("program")
                t = p.next()
                if t.kind != "name":
                    p.fail("expected program name", t)
                self.name = t.text
                if not p.at_end():
                    p.fail("trailing tokens after program name")
            elif head == "param":
                self._parse_param(line)
            elif head == "matrix":
                self._parse_matrix(line)
            elif head == "output":
                self._parse_output(line)
            else:
                return
            self.pos += 1

    def _parse_param(self, line: _Line):
        p = _ExprParser(line.toks, line.number)
        p.expect("param")
        t = p.next()
        if t.kind != "name" or t.text in _KEYWORDS:
            p.fail("expected parameter name", t)
        value = None
        if p.peek().text == "=":
            p.next()
            v = p.next()
            neg = False
            if v.text == "-":
                neg, v = True, p.next()
            if v.kind != "num" or "." in v.text:
                p.fail("parameter value must be an integer literal", v)
            value = -int(v.text) if neg else int(v.text)
        if not p.at_end():
            p.fail("trailing tokens in param declaration")
        if any(q.name == t.text for q in self.params):
            raise ParseError(f"duplicate param {t.text!r}", line.number, t.col)
        self.params.append(ParamDecl(t.text, value))

    def _parse_matrix(self, line: _Line):
        p = _ExprParser(line.toks, line.number)
        p.expect("matrix")
        t = p.next()
        if t.kind != "name" or t.text in _KEYWORDS:
            p.fail("expected matrix name", t)
        p.expect("[")
        a = p.next()
        if a.kind != "num" or "." in a.text or int(a.text) < 1:
            p.fail("matrix arity must be a positive integer", a)
        p.expect("]")
        role_tok = p.next()
        try:
            role = MatrixRole(role_tok.text)
        except ValueError:
            p.fail("matrix role must be input, intermediate, or output", role_tok)
        if not p.at_end():
            p.fail("trailing tokens in matrix declaration")
        if t.text in self.matrices or any(q.name == t.text for q in self.params):
            raise ParseError(f"duplicate name {t.text!r}", line.number, t.col)
        self.matrices[t.text] = MatrixDecl(t.text, int(a.text), role)

    def _parse_output(self, line: _Line):
        p = _ExprParser(line.toks, line.number)
        p.expect("output")
        tile = self._parse_idx(p)
        loops = []
        while p.peek().text == "for":
            p.next()
            v = p.next()
            if v.kind != "name" or v.text in _KEYWORDS:
                p.fail("expected loop variable", v)
            p.expect("in")
            lo, hi, step = self._parse_range(p)
            loops.append((v.text, lo, hi, step))
        if not p.at_end():
            p.fail("trailing tokens in output declaration")
        comp_vars = {v for v, *_ in loops}
        params = {q.name for q in self.params}
        for idx in tile.indices:
            bad = free_refs(idx) - comp_vars - params
            if bad:
                p.fail(f"output index references unknown name(s) {sorted(bad)}")
        self.outputs.append(OutputDecl(tile, tuple(loops)))

    def _parse_range(self, p: _ExprParser) -> tuple[Expr, Expr, Expr | None]:
        p.expect("range")
        p.expect("(")
        lo = p.expr()
        p.expect(",")
        hi = p.expr()
        step = None
        if p.peek().text == ",":
            p.next()
            step = p.expr()
        p.expect(")")
        return lo, hi, step

    def _parse_idx(self, p: _ExprParser) -> IdxExpr:
        t = p.next()
        if t.kind != "name":
            p.fail("expected matrix name", t)
        decl = self.matrices.get(t.text)
        if decl is None:
            p.fail(f"undeclared matrix {t.text!r}", t)
        p.expect("[")
        indices = [p.expr()]
        while p.peek().text == ",":
            p.next()
            indices.append(p.expr())
        p.expect("]")
        if len(indices) != decl.arity:
            p.fail(
                f"matrix {decl.name!r} has arity {decl.arity}, got {len(indices)} indices", t
            )
        return IdxExpr(t.text, tuple(indices))

    def _parse_block(self, indent: int, scope: tuple[str, ...]):
        # scope holds loop variables plus scalars assigned earlier in this
        # block or an enclosing one; assignments extend it for the rest of
        # the block only.
        stmts = []
        while self.pos < len(self.lines):
            line = self.lines[self.pos]
            if line.indent < indent:
                break
            if line.indent > indent:
                raise ParseError("unexpected indentation", line.number, line.indent + 1)
            head = line.toks[0].text
            if head in ("param", "matrix", "program"):
                raise ParseError(
                    "declarations must precede the program body", line.number
                )
            if head == "output":
                if indent:
                    raise ParseError("output declarations must be top-level", line.number)
                break
            if head == "else":
                break
            self.pos += 1
            if head == "for":
                stmts.append(self._parse_for(line, scope))
            elif head == "if":
                stmts.append(self._parse_if(line, scope))
            elif head == "def":
                raise ParseError("function definitions are not allowed", line.number)
            else:
                stmt = self._parse_call_or_assign(line, scope)
                if isinstance(stmt, Assign):
                    scope = scope + (stmt.name,)
                stmts.append(stmt)
        return tuple(stmts)

    def _child_indent(self, parent: _Line) -> int:
        if self.pos >= len(self.lines) or self.lines[self.pos].indent <= parent.indent:
            raise ParseError("expected an indented block", parent.number)
        return self.lines[self.pos].indent

    def _parse_for(self, line: _Line, scope):
        p = _ExprParser(line.toks, line.number)
        p.expect("for")
        v = p.next()
        if v.kind != "name" or v.text in _KEYWORDS:
            p.fail("expected loop variable", v)
        if v.text in scope or v.text in self.assigned or self._is_param(v.text):
            p.fail(f"loop variable {v.text!r} shadows an existing name", v)
        if v.text in self.matrices:
            p.fail(f"loop variable {v.text!r} collides with a matrix", v)
        p.expect("in")
        lo, hi, step = self._parse_range(p)
        p.expect(":")
        if not p.at_end():
            p.fail("trailing tokens after ':'")
        for e in (lo, hi) + ((step,) if step else ()):
            self._check_scalar_refs(e, scope, line)
        body = self._parse_block(self._child_indent(line), scope + (v.text,))
        return For(v.text, lo, hi, step, body)

    def _parse_if(self, line: _Line, scope):
        p = _ExprParser(line.toks, line.number)
        p.expect("if")
        cond = p.expr()
        p.expect(":")
        if not p.at_end():
            p.fail("trailing tokens after ':'")
        self._check_scalar_refs(cond, scope, line)
        then = self._parse_block(self._child_indent(line), scope)
        orelse = ()
        if self.pos < len(self.lines):
            nxt = self.lines[self.pos]
            if nxt.indent == line.indent and nxt.toks[0].text == "else":
                p2 = _ExprParser(nxt.toks, nxt.number)
                p2.expect("else")
                p2.expect(":")
                if not p2.at_end():
                    p2.fail("trailing tokens after ':'")
                self.pos += 1
                orelse = self._parse_block(self._child_indent(nxt), scope)
        return If(cond, then, orelse)

    def _parse_call_or_assign(self, line: _Line, scope):
        p = _ExprParser(line.toks, line.number)
        first = p.peek()
        if first.kind != "name":
            p.fail("expected a statement", first)
        if first.text in self.matrices:
            return self._parse_kernel_call(p, line, scope)
        return self._parse_assign(p, line, scope)

    def _parse_assign(self, p: _ExprParser, line: _Line, scope):
        t = p.next()
        if t.text in _KEYWORDS:
            p.fail(f"unexpected keyword {t.text!r}", t)
        # single-assignment applies to scalars too: a name may be bound once
        # anywhere in the program
        if t.text in scope or t.text in self.assigned or self._is_param(t.text):
            p.fail(f"{t.text!r} is already bound and may not be reassigned", t)
        p.expect("=")
        value = p.expr()
        if not p.at_end():
            p.fail("trailing tokens in assignment")
        self._check_scalar_refs(value, scope, line)
        self.assigned.add(t.text)
        return Assign(t.text, value)

    def _parse_kernel_call(self, p: _ExprParser, line: _Line, scope):
        out = self._parse_idx(p)
        p.expect("=")
        k = p.next()
        if k.kind != "name":
            p.fail("expected kernel name", k)
        if k.text in self.matrices:
            p.fail(
                f"{k.text!r} is a matrix; tile statements must call a kernel", k
            )
        if k.text not in self.kernels:
            p.fail(f"unknown kernel {k.text!r}", k)
        p.expect("(")
        matrix_inputs: list[IdxExpr] = []
        scalar_inputs: list[Expr] = []
        if p.peek().text != ")":
            while True:
                nxt = p.peek()
                if nxt.kind == "name" and nxt.text in self.matrices:
                    matrix_inputs.append(self._parse_idx(p))
                else:
                    scalar_inputs.append(p.expr())
                if p.peek().text != ",":
                    break
                p.next()
        p.expect(")")
        if not p.at_end():
            p.fail("trailing tokens after kernel call")
        if len(matrix_inputs) not in self.kernels[k.text]:
            p.fail(
                f"kernel {k.text!r} takes {sorted(self.kernels[k.text])} matrix "
                f"argument(s), got {len(matrix_inputs)}",
                k,
            )
        for idx in (out, *matrix_inputs):
            for e in idx.indices:
                self._check_scalar_refs(e, scope, line)
        for e in scalar_inputs:
            self._check_scalar_refs(e, scope, line)
        call = KernelCall(
            line_id=self.next_line_id,
            kernel=k.text,
            outputs=(out,),
            matrix_inputs=tuple(matrix_inputs),
            scalar_inputs=tuple(scalar_inputs),
        )
        self.next_line_id += 1
        return call

    def _is_param(self, name: str) -> bool:
        return any(q.name == name for q in self.params)

    def _check_scalar_refs(self, e: Expr, scope, line: _Line):
        known = set(scope) | {q.name for q in self.params}
        bad = free_refs(e) - known
        if bad:
            raise ParseError(
                f"reference to unknown name(s) {sorted(bad)} "
                "(only loop variables, params, and in-scope scalars allowed)",
                line.number,
            )

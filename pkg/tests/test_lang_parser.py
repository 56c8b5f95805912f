"""Parsing, printing, and the structural invariants of programs."""

from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lambdapack.harness import cholesky_source, gemm_source, tsqr_source
from lambdapack.lang import (
    BinOp,
    Bop,
    IntConst,
    ParseError,
    Pow,
    Ref,
    UnOp,
    Uop,
    parse_program,
    print_expr,
    print_program,
)
from lambdapack.lang.parser import _ExprParser, _tokenize


def parse_expr(text: str):
    return _ExprParser(_tokenize(text, 1), 1).expr()


class TestPrograms:
    def test_cholesky_has_three_kernel_lines(self):
        p = parse_program(cholesky_source(4))
        assert [c.kernel for c in p.kernel_calls] == ["chol", "trsm", "syrk"]
        assert [c.line_id for c in p.kernel_calls] == [0, 1, 2]

    def test_tsqr_has_two_kernel_lines_and_power_step(self):
        p = parse_program(tsqr_source(4))
        assert [c.kernel for c in p.kernel_calls] == ["qr_factor", "qr_factor"]
        merge_loops = p.line(1).loops
        inner = merge_loops[-1]
        assert isinstance(inner.step, Pow)
        assert inner.step.base == 2

    def test_empty_input_is_a_syntax_error(self):
        with pytest.raises(ParseError):
            parse_program("")

    def test_unknown_kernel_rejected(self):
        src = "matrix O[1] output\nO[0] = mystery(O[0])\n"
        with pytest.raises(ParseError, match="unknown kernel"):
            parse_program(src)

    def test_matrix_arity_mismatch_rejected(self):
        src = "matrix O[2] output\nfor i in range(0, 4):\n  O[i] = chol(O[i, i])\n"
        with pytest.raises(ParseError, match="arity"):
            parse_program(src)

    def test_kernel_matrix_arity_checked(self):
        src = "matrix O[1] output\nfor i in range(0, 2):\n  O[i] = trsm(O[i])\n"
        with pytest.raises(ParseError, match="matrix argument"):
            parse_program(src)

    def test_function_definitions_rejected(self):
        src = "matrix O[1] output\ndef f():\n  O[0] = chol(O[0])\n"
        with pytest.raises(ParseError, match="function definitions"):
            parse_program(src)

    def test_undeclared_matrix_rejected(self):
        src = "matrix O[1] output\nfor i in range(0, 2):\n  O[i] = chol(Q[i])\n"
        with pytest.raises(ParseError):
            parse_program(src)

    def test_reference_to_unknown_loop_var_rejected(self):
        src = "matrix O[2] output\nfor i in range(0, 4):\n  O[i, j] = chol(O[i, i])\n"
        with pytest.raises(ParseError, match="unknown name"):
            parse_program(src)

    def test_tabs_rejected(self):
        src = "matrix O[1] output\nfor i in range(0, 2):\n\tO[i] = chol(O[i])\n"
        with pytest.raises(ParseError, match="spaces"):
            parse_program(src)

    def test_scalar_reassignment_rejected(self):
        src = (
            "param N\nmatrix O[1] output\n"
            "x = 1\nx = 2\nfor i in range(0, N):\n  O[i] = chol(O[i])\n"
        )
        with pytest.raises(ParseError, match="reassigned"):
            parse_program(src)

    def test_loop_var_shadowing_rejected(self):
        src = (
            "matrix O[2] output\nfor i in range(0, 2):\n"
            "  for i in range(0, 2):\n    O[i, i] = chol(O[i, i])\n"
        )
        with pytest.raises(ParseError, match="shadows"):
            parse_program(src)

    def test_assign_scope_ends_with_block(self):
        src = (
            "param N\nmatrix O[2] output\n"
            "for i in range(0, N):\n  x = i + 1\n"
            "for j in range(0, N):\n  O[j, x] = chol(O[j, j])\n"
        )
        with pytest.raises(ParseError, match="unknown name"):
            parse_program(src)

    def test_if_else_blocks(self):
        src = (
            "param N\nmatrix O[2] output\n"
            "for i in range(0, N):\n"
            "  if i % 2 == 0:\n    O[i, 0] = chol(O[i, i])\n"
            "  else:\n    O[i, 1] = chol(O[i, i])\n"
        )
        p = parse_program(src)
        assert len(p.kernel_calls) == 2
        assert p.line(0).guards == ((p.body[0].body[0].cond, True),)
        assert p.line(1).guards == ((p.body[0].body[0].cond, False),)

    def test_declarations_after_body_rejected(self):
        src = "matrix O[1] output\nO[0] = chol(O[0])\nparam N\n"
        with pytest.raises(ParseError):
            parse_program(src)


class TestRoundTrip:
    @pytest.mark.parametrize(
        "source",
        [cholesky_source(4), tsqr_source(8), gemm_source(2, 4)],
        ids=["cholesky", "tsqr", "gemm"],
    )
    def test_parse_print_identity(self, source):
        p = parse_program(source)
        printed = print_program(p)
        assert parse_program(printed) == p
        # the generators emit canonical form already
        assert printed == source

    def test_roundtrip_with_if_and_assign(self):
        src = (
            "program quirky\n"
            "param N = 4\n"
            "matrix O[2] output\n"
            "for i in range(0, N):\n"
            "  half = i / 2\n"
            "  if i % 2 == 0 and half < N:\n"
            "    O[i, half] = chol(O[i, i])\n"
            "  else:\n"
            "    O[i, 0] = chol(O[i, i])\n"
        )
        p = parse_program(src)
        assert parse_program(print_program(p)) == p


_names = st.sampled_from(["i", "j", "k", "level", "N"])


def exprs(depth=3):
    base = st.one_of(
        st.integers(min_value=0, max_value=9).map(IntConst),
        _names.map(Ref),
    )
    if depth == 0:
        return base
    sub = exprs(depth - 1)
    return st.one_of(
        base,
        st.builds(BinOp, st.sampled_from(list(Bop)), sub, sub),
        st.builds(UnOp, st.sampled_from([Uop.NEG, Uop.LOG2, Uop.FLOOR, Uop.CEILING]), sub),
        st.builds(Pow, st.integers(min_value=2, max_value=3), sub),
    )


class TestExprPrinting:
    @given(exprs())
    def test_expr_print_parse_roundtrip(self, e):
        assert parse_expr(print_expr(e)) == e

    def test_precedence_parens(self):
        e = parse_expr("(i + 1) * 2")
        assert print_expr(e) == "(i + 1) * 2"
        assert parse_expr(print_expr(e)) == e

    def test_power_binds_tighter_than_add(self):
        e = parse_expr("i + 2 ** level")
        assert isinstance(e, BinOp) and e.op is Bop.ADD
        assert isinstance(e.right, Pow)

    def test_power_base_must_be_literal(self):
        with pytest.raises(ParseError, match="integer literal"):
            parse_expr("i ** 2")


class TestConstantSize:
    def test_serialized_size_constant_modulo_param_value(self):
        import re

        blobs = []
        for b in (4, 8, 16, 32):
            text = print_program(parse_program(cholesky_source(b)))
            blobs.append(re.sub(r"param N = \d+", "param N = ?", text).encode())
        assert len({len(x) for x in blobs}) == 1
        assert len(set(blobs)) == 1

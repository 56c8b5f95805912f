"""Scalar/index expression evaluation semantics."""

from __future__ import annotations

import pytest

from lambdapack.lang import EvalError, eval_index, eval_scalar
from lambdapack.lang.parser import _ExprParser, _tokenize


def ev(text: str, binding=None, index=False):
    e = _ExprParser(_tokenize(text, 1), 1).expr()
    return eval_index(e, binding or {}) if index else eval_scalar(e, binding or {})


def test_log2_of_power_of_two_is_exact_int():
    assert ev("log2(8)") == 3
    assert isinstance(ev("log2(8)"), int)


def test_power_with_binding():
    assert ev("2 ** (level + 1)", {"level": 1}) == 4


def test_mixed_power_index_expression():
    assert ev("i + 2 ** level", {"i": 4, "level": 1}, index=True) == 6


def test_unbound_reference():
    with pytest.raises(EvalError, match="unbound"):
        ev("i + 1")


def test_division_by_zero():
    with pytest.raises(EvalError, match="zero"):
        ev("4 / (i - 2)", {"i": 2})


def test_scalar_division_floors():
    assert ev("7 / 2") == 3
    assert ev("-7 / 2") == -4  # floor, not truncation


def test_index_division_must_be_exact():
    assert ev("6 / 2", index=True) == 3
    with pytest.raises(EvalError, match="inexact"):
        ev("7 / 2", index=True)


def test_index_must_be_integer():
    with pytest.raises(EvalError, match="non-integer"):
        ev("1.5", index=True)


def test_modulo():
    assert ev("7 % 3") == 1
    with pytest.raises(EvalError):
        ev("7 % 0")


def test_comparisons_and_logic():
    assert ev("1 < 2 and not 2 < 1") is True
    assert ev("1 == 2 or 3 <= 3") is True


def test_ceil_floor_log():
    assert ev("ceil(7 / 2.0)") == 4
    assert ev("floor(7 / 2.0)") == 3
    assert ev("log(1)") == 0
    assert ev("log2(6)") == pytest.approx(2.584962500721156)


def test_negative_exponent_scalar_vs_index():
    assert ev("2 ** (0 - 1)") == 0.5
    with pytest.raises(EvalError):
        ev("2 ** (0 - 1)", index=True)

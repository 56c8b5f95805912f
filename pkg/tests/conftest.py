from __future__ import annotations

import pytest

from lambdapack.harness import cholesky_source, gemm_source, tsqr_source
from lambdapack.lang import parse_program


@pytest.fixture(scope="session")
def cholesky4():
    return parse_program(cholesky_source(4))


@pytest.fixture(scope="session")
def tsqr8():
    return parse_program(tsqr_source(8))


@pytest.fixture(scope="session")
def gemm22():
    return parse_program(gemm_source(2, 2))


def line_by_kernel(program, kernel: str, which: int = 0) -> int:
    """Line id of the nth kernel-call statement using `kernel`."""
    calls = [c.line_id for c in program.kernel_calls if c.kernel == kernel]
    return calls[which]

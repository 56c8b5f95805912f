"""Builtin workload programs.

Each generator returns source text identical to the shipped `.lp` files
(modulo the parameter value), so generated and on-disk programs parse to
the same AST.
"""

from __future__ import annotations

from ..lang import Program, parse_program


def cholesky_source(n_blocks: int = 4) -> str:
    return f"""program cholesky
param N = {n_blocks}
matrix S[3] input
matrix O[2] output
for i in range(0, N):
  O[i, i] = chol(S[i, i, i])
  for j in range(i + 1, N):
    O[j, i] = trsm(O[i, i], S[i, j, i])
    for k in range(i + 1, j + 1):
      S[i + 1, j, k] = syrk(S[i, j, k], O[j, i], O[k, i])
output O[i, j] for i in range(0, N) for j in range(0, i + 1)
"""


def tsqr_source(n_leaves: int = 4) -> str:
    return f"""program tsqr
param N = {n_leaves}
matrix A[1] input
matrix R[2] output
for i in range(0, N):
  R[i, 0] = qr_factor(A[i])
for level in range(0, log2(N)):
  for i in range(0, N, 2 ** (level + 1)):
    R[i, level + 1] = qr_factor(R[i, level], R[i + 2 ** level, level])
output R[0, log2(N)]
"""


def gemm_source(n_blocks: int = 2, k_blocks: int = 2) -> str:
    return f"""program gemm
param N = {n_blocks}
param K = {k_blocks}
matrix A[2] input
matrix B[2] input
matrix P[4] output
for i in range(0, N):
  for j in range(0, N):
    for k in range(0, K):
      P[i, j, k, 0] = matmul(A[i, k], B[k, j])
for level in range(0, log2(K)):
  for i in range(0, N):
    for j in range(0, N):
      for k in range(0, K, 2 ** (level + 1)):
        P[i, j, k, level + 1] = add(P[i, j, k, level], P[i, j, k + 2 ** level, level])
output P[i, j, 0, log2(K)] for i in range(0, N) for j in range(0, N)
"""


def gen_cholesky(n_blocks: int) -> Program:
    if n_blocks < 1:
        raise ValueError("grid must have at least one block")
    return parse_program(cholesky_source(n_blocks))


def gen_tsqr(n_leaves: int) -> Program:
    if n_leaves < 1 or n_leaves & (n_leaves - 1):
        raise ValueError("leaf count must be a power of two")
    return parse_program(tsqr_source(n_leaves))


def gen_gemm(n_blocks: int, k_blocks: int) -> Program:
    if n_blocks < 1:
        raise ValueError("grid must have at least one block")
    if k_blocks < 1 or k_blocks & (k_blocks - 1):
        raise ValueError("inner block count must be a power of two")
    return parse_program(gemm_source(n_blocks, k_blocks))


BUILTINS = {
    "cholesky": gen_cholesky,
    "tsqr": gen_tsqr,
    "gemm": gen_gemm,
}

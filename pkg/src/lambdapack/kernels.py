"""Dense block kernels invoked by kernel-call statements.

Factorizations are written out directly (unblocked column loops over
numpy vectors) instead of binding a vendor LAPACK, which keeps outputs
bit-deterministic for fixed inputs on one platform; idempotent
re-execution depends on that. All arithmetic is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .store import Tile

SYMMETRY_RTOL = 1e-12


class KernelError(Exception):
    pass


class ShapeError(KernelError):
    pass


class NotSpdError(KernelError):
    """Cholesky hit a non-positive pivot; carries the pivot index."""

    def __init__(self, pivot: int, value: float):
        super().__init__(f"non-positive pivot {value!r} at index {pivot}")
        self.pivot = pivot
        self.value = value


def chol(a: Tile) -> Tile:
    """Lower-triangular L with positive diagonal such that L @ L.T == a."""
    m = a.data
    if a.rows != a.cols:
        raise ShapeError(f"chol needs a square tile, got {a.rows}x{a.cols}")
    scale = np.abs(m).max()
    if scale > 0 and np.abs(m - m.T).max() > SYMMETRY_RTOL * scale:
        raise KernelError("chol input is not symmetric")
    n = a.rows
    low = np.zeros((n, n))
    for j in range(n):
        d = m[j, j] - low[j, :j] @ low[j, :j]
        if d <= 0.0 or not math.isfinite(d):
            raise NotSpdError(j, d)
        low[j, j] = math.sqrt(d)
        if j + 1 < n:
            low[j + 1 :, j] = (m[j + 1 :, j] - low[j + 1 :, :j] @ low[j, :j]) / low[j, j]
    return Tile(low)


def trsm(low: Tile, a: Tile) -> Tile:
    """X with X @ low.T == a, for lower-triangular nonsingular low.

    This is the panel update of blocked Cholesky: with a = A[j, i] and
    low = L[i, i], the result is L[j, i], keeping L @ L.T equal to the
    original matrix.
    """
    l = low.data
    if low.rows != low.cols:
        raise ShapeError(f"trsm triangle must be square, got {low.rows}x{low.cols}")
    if a.cols != low.rows:
        raise ShapeError(f"trsm shapes non-conformal: {a.rows}x{a.cols} vs {low.rows}")
    n = low.rows
    if np.any(np.diag(l) == 0.0):
        raise KernelError("trsm triangle has a zero diagonal entry")
    x = np.zeros_like(a.data)
    for j in range(n):
        x[:, j] = (a.data[:, j] - x[:, :j] @ l[j, :j]) / l[j, j]
    return Tile(x)


def syrk(s: Tile, x: Tile, y: Tile) -> Tile:
    """Fused trailing update s - x @ y.T."""
    if x.cols != y.cols or s.rows != x.rows or s.cols != y.rows:
        raise ShapeError(
            f"syrk shapes non-conformal: {s.rows}x{s.cols}, {x.rows}x{x.cols}, {y.rows}x{y.cols}"
        )
    return Tile(s.data - x.data @ y.data.T)


def _householder_r(m: np.ndarray) -> np.ndarray:
    """Upper-triangular R of the QR of m via Householder reflections."""
    r = m.copy()
    rows, cols = r.shape
    for k in range(cols):
        v = r[k:, k].copy()
        alpha = np.sqrt(v @ v)
        if alpha == 0.0:
            continue
        if v[0] >= 0:
            alpha = -alpha
        v[0] -= alpha
        norm2 = v @ v
        if norm2 == 0.0:
            continue
        w = (2.0 / norm2) * (v @ r[k:, k:])
        r[k:, k:] -= np.outer(v, w)
        r[k, k] = alpha
        r[k + 1 :, k] = 0.0
    return np.triu(r[:cols, :])


def qr_leaf(a: Tile) -> Tile:
    """R factor of a (rows >= cols), diagonal made nonnegative for uniqueness."""
    if a.rows < a.cols:
        raise ShapeError(f"qr needs rows >= cols, got {a.rows}x{a.cols}")
    r = _householder_r(a.data)
    signs = np.where(np.diag(r) < 0.0, -1.0, 1.0)
    return Tile(signs[:, None] * r)


def qr_merge(r1: Tile, r2: Tile) -> Tile:
    """R factor of r1 stacked on r2; both upper-triangular square, same size."""
    for t in (r1, r2):
        if t.rows != t.cols:
            raise ShapeError(f"merge input must be square, got {t.rows}x{t.cols}")
        if np.count_nonzero(np.tril(t.data, -1)):
            raise KernelError("merge input is not upper-triangular")
    if r1.rows != r2.rows:
        raise ShapeError(f"merge inputs differ in size: {r1.rows} vs {r2.rows}")
    return qr_leaf(Tile(np.vstack([r1.data, r2.data])))


def qr_factor(*tiles: Tile) -> Tile:
    """Dispatch: one argument factors a leaf block, two merge R factors."""
    if len(tiles) == 1:
        return qr_leaf(tiles[0])
    if len(tiles) == 2:
        return qr_merge(tiles[0], tiles[1])
    raise ShapeError(f"qr_factor takes 1 or 2 tiles, got {len(tiles)}")


def matmul(a: Tile, b: Tile) -> Tile:
    if a.cols != b.rows:
        raise ShapeError(f"matmul shapes non-conformal: {a.rows}x{a.cols} @ {b.rows}x{b.cols}")
    return Tile(a.data @ b.data)


def add(a: Tile, b: Tile) -> Tile:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shapes differ: {a.data.shape} vs {b.data.shape}")
    return Tile(a.data + b.data)


# --- registry -------------------------------------------------------------------


def _flops_chol(shapes):
    n = shapes[0][0]
    return n**3 // 3 + n**2


def _flops_trsm(shapes):
    (n, _), (m, _) = shapes[0], shapes[1]
    return m * n * n


def _flops_syrk(shapes):
    (m, n), (_, p) = shapes[0], shapes[1]
    return 2 * m * n * p


def _flops_qr(shapes):
    if len(shapes) == 1:
        m, n = shapes[0]
    else:
        m, n = shapes[0][0] + shapes[1][0], shapes[0][1]
    return 2 * m * n * n


def _flops_matmul(shapes):
    (m, k), (_, n) = shapes[0], shapes[1]
    return 2 * m * k * n


def _flops_add(shapes):
    return shapes[0][0] * shapes[0][1]


@dataclass(frozen=True)
class KernelSpec:
    """A registered kernel: pure, deterministic function of its input tiles."""

    name: str
    arities: frozenset[int]
    fn: Callable[..., Tile]
    flops: Callable[[list[tuple[int, int]]], int]


REGISTRY: dict[str, KernelSpec] = {
    spec.name: spec
    for spec in (
        KernelSpec("chol", frozenset({1}), chol, _flops_chol),
        KernelSpec("trsm", frozenset({2}), trsm, _flops_trsm),
        KernelSpec("syrk", frozenset({3}), syrk, _flops_syrk),
        KernelSpec("qr_factor", frozenset({1, 2}), qr_factor, _flops_qr),
        KernelSpec("matmul", frozenset({2}), matmul, _flops_matmul),
        KernelSpec("add", frozenset({2}), add, _flops_add),
    )
}

KERNEL_ARITIES: dict[str, set[int]] = {k: set(v.arities) for k, v in REGISTRY.items()}


def run_kernel(name: str, tiles: list[Tile], scalars: list | None = None) -> Tile:
    spec = REGISTRY.get(name)
    if spec is None:
        raise KernelError(f"unknown kernel {name!r}")
    if len(tiles) not in spec.arities:
        raise ShapeError(
            f"kernel {name!r} takes {sorted(spec.arities)} tiles, got {len(tiles)}"
        )
    if scalars:
        raise KernelError(f"kernel {name!r} takes no scalar arguments")
    return spec.fn(*tiles)

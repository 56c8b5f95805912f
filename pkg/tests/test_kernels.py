"""Block kernel correctness, error paths, determinism, end-to-end oracles."""

from __future__ import annotations

import numpy as np
import pytest

from lambdapack.kernels import (
    KernelError,
    NotSpdError,
    ShapeError,
    add,
    chol,
    matmul,
    qr_factor,
    qr_leaf,
    qr_merge,
    run_kernel,
    syrk,
    trsm,
)
from lambdapack.store import Tile


def T(values) -> Tile:
    return Tile(np.asarray(values, dtype=float))


def spd(n: int, seed: int) -> np.ndarray:
    m = np.random.default_rng(seed).standard_normal((n, n))
    return m @ m.T + n * np.eye(n)


class TestChol:
    def test_scalar(self):
        assert chol(T([[4.0]])).data.tolist() == [[2.0]]

    def test_hand_case_verified_by_multiplication(self):
        a = T([[4.0, 2.0], [2.0, 5.0]])
        low = chol(a)
        assert low.data.tolist() == [[2.0, 0.0], [1.0, 2.0]]
        assert np.allclose(low.data @ low.data.T, a.data, rtol=0, atol=1e-12)

    def test_indefinite_reports_pivot(self):
        with pytest.raises(NotSpdError) as e:
            chol(T([[1.0, 2.0], [2.0, 1.0]]))
        assert e.value.pivot == 1

    def test_asymmetry_rejected(self):
        with pytest.raises(KernelError, match="symmetric"):
            chol(T([[1.0, 2.0], [0.0, 1.0]]))

    def test_non_square_rejected(self):
        with pytest.raises(ShapeError):
            chol(T(np.ones((2, 3))))

    @pytest.mark.parametrize("n", [1, 2, 5, 32])
    def test_reconstruction(self, n):
        a = spd(n, n)
        low = chol(T(a)).data
        assert np.all(np.diag(low) > 0)
        assert np.count_nonzero(np.triu(low, 1)) == 0
        assert np.linalg.norm(low @ low.T - a) / np.linalg.norm(a) <= 1e-12


class TestTrsm:
    def test_identity_solve(self):
        a = T(np.arange(6.0).reshape(2, 3) + 1)
        # X I^T = A  ->  X = A
        assert np.array_equal(trsm(T(np.eye(3)), a).data, a.data)

    def test_solves_against_triangle(self):
        low = chol(T(spd(4, 1)))
        a = T(np.random.default_rng(2).standard_normal((3, 4)))
        x = trsm(low, a)
        assert np.allclose(x.data @ low.data.T, a.data, atol=1e-12)

    def test_zero_pivot(self):
        bad = T([[1.0, 0.0], [1.0, 0.0]])
        with pytest.raises(KernelError, match="zero diagonal"):
            trsm(bad, T(np.ones((2, 2))))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            trsm(T(np.eye(3)), T(np.ones((2, 2))))


class TestSyrk:
    def test_zero_update_is_identity(self):
        s = T(np.arange(4.0).reshape(2, 2))
        z = T(np.zeros((2, 3)))
        assert np.array_equal(syrk(s, z, z).data, s.data)

    def test_hand_case(self):
        x = T([[1.0], [1.0]])
        assert syrk(T(np.zeros((2, 2))), x, x).data.tolist() == [[-1.0, -1.0], [-1.0, -1.0]]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            syrk(T(np.zeros((2, 2))), T(np.ones((2, 3))), T(np.ones((2, 2))))


class TestQr:
    def test_fixed_point_of_positive_upper_triangular(self):
        r = T(np.triu([[2.0, 1.0, 0.5], [0.0, 3.0, -1.0], [0.0, 0.0, 1.0]]))
        got = qr_leaf(r)
        assert np.allclose(got.data, r.data, atol=1e-12)

    def test_merge_identity_zero(self):
        got = qr_merge(T(np.eye(3)), T(np.zeros((3, 3))))
        assert np.allclose(got.data, np.eye(3), atol=1e-12)

    def test_wide_input_rejected(self):
        with pytest.raises(ShapeError, match="rows >= cols"):
            qr_leaf(T(np.ones((2, 3))))

    def test_non_triangular_merge_rejected(self):
        with pytest.raises(KernelError, match="upper-triangular"):
            qr_merge(T(np.ones((2, 2))), T(np.eye(2)))

    def test_gram_preserved(self):
        a = np.random.default_rng(5).standard_normal((40, 8))
        r = qr_leaf(T(a))
        gram = a.T @ a
        assert np.linalg.norm(r.data.T @ r.data - gram) / np.linalg.norm(gram) <= 1e-12
        assert np.all(np.diag(r.data) >= 0)

    def test_dispatch_by_arity(self):
        a = T(np.random.default_rng(0).standard_normal((6, 3)))
        assert qr_factor(a) == qr_leaf(a)
        r = qr_leaf(a)
        assert qr_factor(r, r) == qr_merge(r, r)
        with pytest.raises(ShapeError):
            qr_factor(a, a, a)


class TestPlumbingKernels:
    def test_matmul_identity(self):
        b = T(np.arange(4.0).reshape(2, 2))
        assert np.array_equal(matmul(T(np.eye(2)), b).data, b.data)

    def test_matmul_hand(self):
        got = matmul(T([[1.0, 2.0], [3.0, 4.0]]), T(np.eye(2)))
        assert got.data.tolist() == [[1.0, 2.0], [3.0, 4.0]]

    def test_add(self):
        a = T([[1.0, 2.0]])
        assert np.array_equal(add(a, T(np.zeros((1, 2)))).data, a.data)

    def test_conformality(self):
        with pytest.raises(ShapeError):
            matmul(T(np.ones((2, 3))), T(np.ones((2, 3))))
        with pytest.raises(ShapeError):
            add(T(np.ones((2, 3))), T(np.ones((3, 2))))


class TestRegistry:
    def test_run_kernel_dispatch(self):
        out = run_kernel("chol", [T([[9.0]])])
        assert out.data.tolist() == [[3.0]]

    def test_unknown_kernel(self):
        with pytest.raises(KernelError):
            run_kernel("lu", [T([[1.0]])])

    def test_scalar_args_rejected(self):
        with pytest.raises(KernelError, match="scalar"):
            run_kernel("add", [T([[1.0]]), T([[1.0]])], [3])


class TestDeterminism:
    def test_bit_identical_across_calls(self):
        a = spd(24, 9)
        first = chol(T(a)).encode()
        for _ in range(5):
            assert chol(T(a)).encode() == first
        x = np.random.default_rng(1).standard_normal((24, 24))
        assert matmul(T(a), T(x)).encode() == matmul(T(a), T(x)).encode()
        q = np.random.default_rng(2).standard_normal((32, 8))
        assert qr_leaf(T(q)).encode() == qr_leaf(T(q)).encode()


class TestTiledPipelines:
    """Whole-algorithm oracles run directly on kernels, no engine involved."""

    def test_two_block_cholesky_to_1e12(self):
        # chol + trsm + syrk + chol on one split; the trsm convention is
        # exactly what makes L L^T reproduce A here
        a = spd(16, 7)
        a00, a10, a11 = a[:8, :8], a[8:, :8], a[8:, 8:]
        l00 = chol(Tile(a00))
        l10 = trsm(l00, Tile(a10))
        l11 = chol(syrk(Tile(a11), l10, l10))
        low = np.zeros((16, 16))
        low[:8, :8], low[8:, :8], low[8:, 8:] = l00.data, l10.data, l11.data
        assert np.linalg.norm(low @ low.T - a) / np.linalg.norm(a) <= 1e-12

    @pytest.mark.parametrize("blocks", [1, 2, 4, 8])
    def test_tiled_cholesky_reconstructs(self, blocks):
        rng = np.random.default_rng(blocks)
        n = 70  # ragged final blocks at 4 and 8 blocks (70 = 3*18+16 = 7*9+7)
        a = rng.standard_normal((n, n))
        a = a @ a.T + n * np.eye(n)
        bs = -(-n // blocks)
        from lambdapack.store import assemble, partition

        s = {(0, r, c): t for (r, c), t in partition(a, bs) if r >= c}
        grid = -(-n // bs)
        out = {}
        for i in range(grid):
            out[(i, i)] = chol(Tile(s[(i, i, i)].data))
            for j in range(i + 1, grid):
                out[(j, i)] = trsm(out[(i, i)], s[(i, j, i)])
                for k in range(i + 1, j + 1):
                    s[(i + 1, j, k)] = syrk(s[(i, j, k)], out[(j, i)], out[(k, i)])
        full = {}
        for r in range(grid):
            for c in range(grid):
                full[(r, c)] = out.get((r, c)) or Tile(
                    np.zeros((out[(r, r)].rows, out[(c, c)].cols))
                )
        low = assemble(full)
        assert np.linalg.norm(low @ low.T - a) / np.linalg.norm(a) <= 1e-10

    def test_tsqr_tree_gram(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((64 * 4, 8))
        rs = [qr_leaf(Tile(a[i * 64 : (i + 1) * 64])) for i in range(4)]
        r01 = qr_merge(rs[0], rs[1])
        r23 = qr_merge(rs[2], rs[3])
        r = qr_merge(r01, r23)
        gram = a.T @ a
        assert np.linalg.norm(r.data.T @ r.data - gram) / np.linalg.norm(gram) <= 1e-10

    def test_tiled_gemm_matches_dense(self):
        rng = np.random.default_rng(4)
        a = rng.standard_normal((32, 64))
        b = rng.standard_normal((64, 32))
        from lambdapack.store import assemble, partition

        at = dict(partition(a, 16))
        bt = dict(partition(b, 16))
        c = {}
        for i in range(2):
            for j in range(2):
                acc = matmul(at[(i, 0)], bt[(0, j)])
                for k in range(1, 4):
                    acc = add(acc, matmul(at[(i, k)], bt[(k, j)]))
                c[(i, j)] = acc
        got = assemble(c)
        want = a @ b
        assert np.linalg.norm(got - want) / np.linalg.norm(want) <= 1e-12

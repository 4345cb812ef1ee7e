#!/usr/bin/env python3
"""
网格与离散算子测试
Laplacian、H 内积、Poisson 求解、Dirichlet 特征对
"""

import sys
import os
from fractions import Fraction

import numpy as np
from numpy.testing import assert_allclose

# 添加项目路径
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.errors import GridMismatchError, NonFiniteFieldError
from src.grid_core import (eigenpairs, inner_h, inner_l2, laplacian_apply, norm_h, norm_lp,
                           random_field, random_rows, solve_poisson)
from src.models import Field, Grid


def test_grid_validation():
    """网格参数校验与精确步长"""
    grid = Grid(2, 31)
    assert grid.spacing == Fraction(1, 32)
    assert grid.spacing * (grid.n + 1) == 1
    assert grid.size == 31 * 31
    for bad, message in [((1, 2), "n: must be ≥ 3"), ((3, 8), "dimension: must be 1 or 2")]:
        try:
            Grid(*bad)
        except ValueError as e:
            assert str(e) == message
        else:
            raise AssertionError(f"Grid{bad} should be rejected")


def test_field_validation():
    """长度不符与非有限值都被拒绝"""
    grid = Grid(1, 7)
    try:
        Field(grid, np.zeros(6))
        raise AssertionError("wrong length accepted")
    except GridMismatchError:
        pass
    values = np.zeros(7)
    values[3] = np.nan
    try:
        Field(grid, values)
        raise AssertionError("NaN accepted")
    except NonFiniteFieldError:
        pass
    try:
        Field(grid, np.ones(7)) + Field(Grid(1, 9), np.ones(9))
        raise AssertionError("grid mismatch accepted")
    except GridMismatchError:
        pass


def test_laplacian_symmetry():
    """(L_h u, v) = (u, L_h v)，且 inner_h(u,v) = inner_l2(L_h u, v)"""
    rng = np.random.default_rng(11)
    for grid in (Grid(1, 63), Grid(2, 24)):
        for _ in range(10):
            u = Field(grid, rng.standard_normal(grid.size))
            v = Field(grid, rng.standard_normal(grid.size))
            lu, lv = laplacian_apply(grid, u), laplacian_apply(grid, v)
            scale = np.linalg.norm(lu.values) * np.linalg.norm(v.values) * grid.cell_volume
            assert abs(inner_l2(lu, v) - inner_l2(u, lv)) <= 1e-12 * scale
            assert abs(inner_h(u, v) - inner_l2(lu, v)) <= 1e-12 * scale


def test_poisson_inverts_laplacian():
    """solve_poisson ∘ laplacian_apply = id（DST 与 CG 两种方法）"""
    rng = np.random.default_rng(12)
    for grid, method in [(Grid(1, 255), "dst"), (Grid(2, 32), "dst"), (Grid(2, 16), "cg")]:
        u = random_field(grid, rng)
        back = solve_poisson(grid, laplacian_apply(grid, u), method=method)
        assert_allclose(back.values, u.values, rtol=0, atol=1e-6 * np.max(np.abs(u.values)))
    try:
        solve_poisson(Grid(1, 7), Field(Grid(1, 7), np.ones(7)), method="jacobi")
        raise AssertionError("unknown method accepted")
    except ValueError:
        pass


def dense_laplacian(grid: Grid) -> np.ndarray:
    """逐节点组装的稠密差分矩阵，作为独立参照"""
    n, d = grid.n, grid.dimension
    h2 = float(grid.h) ** 2
    index = np.arange(grid.size).reshape(grid.shape)
    L = np.zeros((grid.size, grid.size))
    for node in np.ndindex(*grid.shape):
        k = index[node]
        L[k, k] = 2.0 * d / h2
        for axis in range(d):
            for step in (-1, 1):
                other = list(node)
                other[axis] += step
                if 0 <= other[axis] < n:
                    L[k, index[tuple(other)]] = -1.0 / h2
    return L


def test_laplacian_dense_reference():
    """二维 n=8：模板作用与稠密矩阵乘法一致到 1e-12"""
    grid = Grid(2, 8)
    L = dense_laplacian(grid)
    rng = np.random.default_rng(13)
    for _ in range(5):
        u = Field(grid, rng.standard_normal(grid.size))
        expected = L @ u.values
        got = laplacian_apply(grid, u).values
        assert_allclose(got, expected, rtol=0, atol=1e-12 * np.max(np.abs(expected)))


def test_poisson_dense_reference():
    """二维 n=16：相对残差 ≤ tol，并与稠密分解的解一致到 1e-8"""
    grid = Grid(2, 16)
    L = dense_laplacian(grid)
    rng = np.random.default_rng(14)
    rhs = Field(grid, rng.standard_normal(grid.size))
    for method in ("dst", "cg"):
        v = solve_poisson(grid, rhs, tol=1e-10, method=method)
        rel = np.linalg.norm(L @ v.values - rhs.values) / np.linalg.norm(rhs.values)
        assert rel <= 1e-10, (method, rel)
        expected = np.linalg.solve(L, rhs.values)
        assert_allclose(v.values, expected, rtol=0, atol=1e-8 * np.max(np.abs(expected)))
    zero = solve_poisson(grid, Field.zeros(grid))
    assert not np.any(zero.values)


def test_poisson_on_eigenvector():
    """右端为 λ·e 时解回 e"""
    grid = Grid(1, 63)
    lam, e = eigenpairs(grid, 1)[0]
    v = solve_poisson(grid, Field(grid, lam * e.values))
    assert_allclose(v.values, e.values, rtol=0, atol=1e-8 * np.max(np.abs(e.values)))


def test_sine_quadrature():
    """一维 n=255，u_j = sin(jπh)：‖u‖²_H ≈ π²/2（1% 以内），inner_h(u,u) = norm_h(u)²"""
    grid = Grid(1, 255)
    x = grid.coordinates()[0]
    u = Field(grid, np.sin(np.pi * x))
    target = np.pi ** 2 / 2
    assert abs(norm_h(u) ** 2 - target) <= 0.01 * target
    assert abs(inner_h(u, u) - norm_h(u) ** 2) <= 1e-12 * target


def test_closed_form_spectrum_1d():
    """一维 n=3：λ_k = 16(2 − 2cos(kπ/4))"""
    pairs = eigenpairs(Grid(1, 3), 3)
    expected = [16 * (2 - 2 * np.cos(k * np.pi / 4)) for k in (1, 2, 3)]
    assert_allclose([lam for lam, _ in pairs], expected, rtol=1e-10)
    assert_allclose([lam for lam, _ in pairs], [9.3726, 32.0, 54.6274], atol=1e-4)
    for lam, e in pairs:
        assert abs(norm_h(e) - 1.0) <= 1e-12


def test_square_spectrum():
    """单位正方形 n=63：λ₁ ≈ 2π²，λ₂ ≈ 5π²（1% 以内），e₁ 处处为正"""
    grid = Grid(2, 63)
    pairs = eigenpairs(grid, 2)
    (lam1, e1), (lam2, _) = pairs
    assert abs(lam1 - 2 * np.pi ** 2) <= 0.01 * 2 * np.pi ** 2
    assert abs(lam2 - 5 * np.pi ** 2) <= 0.01 * 5 * np.pi ** 2
    assert np.all(e1.values > 0)


def test_eigen_residual_and_positivity():
    """特征残差 ≤ 1e-8；二维 n=31 的 e₁ 严格为正"""
    grid = Grid(2, 31)
    for lam, e in eigenpairs(grid, 3):
        res = laplacian_apply(grid, e).values - lam * e.values
        assert np.linalg.norm(res) <= 1e-8
    lam1, e1 = eigenpairs(grid, 1)[0]
    assert np.all(e1.values > 0)


def test_degenerate_pair_orientation():
    """简并的 (λ₂, λ₃)：e₂ 与模板 sin(2πx)sin(πy) 平行，(¼,½) 附近为正"""
    grid = Grid(2, 31)
    pairs = eigenpairs(grid, 3)
    assert abs(pairs[1][0] - pairs[2][0]) <= 1e-6 * pairs[1][0]
    e2, e3 = pairs[1][1], pairs[2][1]
    x, y = grid.coordinates()
    template = np.sin(2 * np.pi * x) * np.sin(np.pi * y)
    cos = np.dot(e2.values, template) / (np.linalg.norm(e2.values) * np.linalg.norm(template))
    assert cos > 0.999
    assert e2.values[grid.nearest_node((0.25, 0.5))] > 0
    assert e3.values[grid.nearest_node((0.5, 0.25))] > 0
    # 重复调用得到相同结果
    again = eigenpairs(grid, 3)
    assert np.array_equal(again[1][1].values, e2.values)


def test_norms():
    """Lᵖ 范数与参数校验"""
    grid = Grid(1, 99)
    u = Field(grid, np.ones(grid.size))
    assert abs(norm_lp(u, 2.0) - np.sqrt(99 / 100)) <= 1e-14
    try:
        norm_lp(u, 0.5)
        raise AssertionError("p < 1 accepted")
    except ValueError as e:
        assert "p: must be ≥ 1" in str(e)


def test_random_fields_deterministic():
    """同一种子得到逐位相同的随机场"""
    grid = Grid(2, 20)
    a = random_rows(grid, np.random.default_rng(5), 3)
    b = random_rows(grid, np.random.default_rng(5), 3)
    assert np.array_equal(a, b)
    assert a.shape == (3, grid.size)


TESTS = [
    ("网格校验", test_grid_validation),
    ("场校验", test_field_validation),
    ("Laplacian 对称性", test_laplacian_symmetry),
    ("Poisson 求解", test_poisson_inverts_laplacian),
    ("Laplacian 稠密参照", test_laplacian_dense_reference),
    ("Poisson 稠密参照", test_poisson_dense_reference),
    ("特征向量右端", test_poisson_on_eigenvector),
    ("正弦求积", test_sine_quadrature),
    ("一维闭式谱", test_closed_form_spectrum_1d),
    ("正方形谱", test_square_spectrum),
    ("特征残差与正性", test_eigen_residual_and_positivity),
    ("简并特征对方向", test_degenerate_pair_orientation),
    ("范数", test_norms),
    ("随机场可复现", test_random_fields_deterministic),
]


def main():
    """运行所有测试"""
    print("=" * 60)
    print("🧪 网格与离散算子测试")
    print("=" * 60)

    passed = 0
    failed = 0
    for name, test in TESTS:
        try:
            test()
            print(f"✅ {name}: 通过")
            passed += 1
        except Exception as e:
            print(f"❌ {name}: 失败 - {e!r}")
            failed += 1

    print(f"\n总计: {passed} 通过, {failed} 失败")
    return 0 if failed == 0 else 1


if __name__ == "__main__":
    sys.exit(main())

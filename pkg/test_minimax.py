#!/usr/bin/env python3
"""
极小极大求解器测试
分类、半径与能级估计、山路解、变号解、曲面与交点见证、参照解
"""

import copy
import sys
import os

import numpy as np
from numpy.testing import assert_allclose

# 添加项目路径
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.cones import in_w, negative_part, positive_part
from src.energy import derivative, linear_hook, odd_power, ray_maximum
from src.errors import LinkingError, SolverError
from src.grid_core import eigenpairs, inner_h, laplacian_rows, norm_h, norm_h_rows
from src.minimax import (build_surface, boundary_admissible, choose_r, classify, deform_surface,
                         disjoint_bumps, estimate_alpha_rho, frozen_mask, mountain_pass,
                         nodal_rescale, reparametrize, sign_changes, sign_changing_solve,
                         verify_linking)
from src.models import ConeParams, EnergyModel, Field, FlowParams, Grid
from src.oracles import nehari_oracle, shooting_oracle


def model(dimension: int, n: int, p: float = 4.0) -> EnergyModel:
    return EnergyModel(Grid(dimension, n), odd_power(p))


def assert_nodal_residual(m: EnergyModel, u: Field, tol: float):
    """逐节点 |L_h u − f(u)| ≤ 10·tol/h^d"""
    nodal = np.max(np.abs(laplacian_rows(m.grid, u.values) - m.nl.f(u.values)))
    assert nodal <= 10 * tol / m.grid.cell_volume, nodal


def test_classify_and_sign_changes():
    grid = Grid(1, 7)
    assert classify(Field(grid, np.ones(7))) == "positive"
    assert classify(Field(grid, -np.ones(7))) == "negative"
    assert classify(Field.zeros(grid)) == "trivial"
    assert classify(Field(grid, np.array([0, 1, 1, 1, 1, 1, 0.0]))) == "weakly_signed"
    wave = Field(grid, np.array([1, 2, 1, -1, -2, -1, 0.5]))
    assert classify(wave) == "sign_changing"
    zeros = sign_changes(wave)
    assert len(zeros) == 2
    assert_allclose(zeros[0], 0.4375)
    try:
        sign_changes(Field.zeros(Grid(2, 7)))
        raise AssertionError("2D sign changes accepted")
    except ValueError:
        pass


def test_choose_r():
    """一维 n=255：I(16·e₁) < 0 首次成立，R = 32"""
    m = model(1, 255)
    e1 = eigenpairs(m.grid, 1)[0][1]
    assert choose_r(m, e1) == 32.0
    assert choose_r(m, -e1) == 32.0


def test_alpha_rho():
    """α、ρ 为正，且 e₁ 射线上的最大能量高于 α"""
    m = model(1, 255)
    rho, alpha = estimate_alpha_rho(m)
    assert rho > 0 and alpha > 0
    _, top = ray_maximum(m, eigenpairs(m.grid, 1)[0][1])
    assert top > alpha
    again = estimate_alpha_rho(m)
    assert again == (rho, alpha)


def test_disjoint_bumps():
    """α₁ ≥ 0 支撑在左 40%，α₂ ≤ 0 支撑在右 40%，H 范数为 1"""
    for grid in (Grid(1, 63), Grid(2, 31)):
        a1, a2 = disjoint_bumps(grid)
        assert np.all(a1.values >= 0) and np.all(a2.values <= 0)
        assert not np.any((a1.values != 0) & (a2.values != 0))
        assert abs(norm_h(a1) - 1.0) <= 1e-12
        assert abs(norm_h(a2) - 1.0) <= 1e-12
        assert inner_h(a1, a2) == 0.0
    try:
        disjoint_bumps(Grid(1, 5))
        raise AssertionError("n < 7 accepted")
    except ValueError:
        pass


def test_reparametrize_equal_arcs():
    """直线上非均匀分布的节点被重排为等弧长，端点不动"""
    grid = Grid(1, 31)
    e1 = eigenpairs(grid, 1)[0][1]
    s = np.linspace(0.0, 1.0, 17) ** 2
    images = np.outer(s * 5.0, e1.values)
    out = reparametrize(grid, images)
    seg = norm_h_rows(grid, out[1:] - out[:-1])
    assert_allclose(seg, seg.mean(), rtol=1e-10)
    assert np.array_equal(out[0], images[0]) and np.array_equal(out[-1], images[-1])
    kept = reparametrize(grid, images, keep=4)
    assert np.array_equal(kept[4], images[4])


def test_mountain_pass_matches_nehari():
    """一维 n=255：山路能级与 Nehari 参照解相对误差 ≤ 1e-3，残差 ≤ 1e-8"""
    m = model(1, 255)
    report = mountain_pass(m, "plus", FlowParams(), ConeParams())
    oracle = nehari_oracle(m)
    assert report.status == "converged", report.status
    assert report.classification == "positive"
    assert report.residual <= 1e-8 and oracle.residual <= 1e-8
    assert abs(report.level - oracle.level) <= 1e-3 * oracle.level
    assert report.path is not None and report.path.images.shape[0] == 33
    levels = [row.sup_level for row in report.trace]
    assert levels[-1] <= levels[0]
    assert_nodal_residual(m, report.field, FlowParams().residual_tol)
    try:
        mountain_pass(m, "plus", FlowParams(), ConeParams(), K=9)
        raise AssertionError("K < 17 accepted")
    except ValueError:
        pass


def test_mountain_pass_default_step():
    """默认 FlowParams（dt=0.5）：下降阶段最高能级不升，收敛到打靶参照能级（1e-3 以内）"""
    m = model(1, 63)
    fp = FlowParams()
    report = mountain_pass(m, "plus", fp, ConeParams())
    assert report.status == "converged", report.status
    assert report.residual <= fp.residual_tol
    descent = [row.sup_level for row in report.trace if row.phase == "descent"]
    assert len(descent) > 1
    for before, after in zip(descent[:-1], descent[1:]):
        assert after <= before + 1e-12 * (1 + abs(before)), (before, after)
    shooting = shooting_oracle(m.nl, pieces=1)
    assert abs(report.level - shooting.level) <= 1e-3 * shooting.level
    assert_nodal_residual(m, report.field, fp.residual_tol)


def test_small_grid_end_to_end():
    """一维 n=31：Nehari 参照解与变号曲面求解完整跑通"""
    m = model(1, 31)
    oracle = nehari_oracle(m, restarts=1)
    assert oracle.residual <= 1e-8
    assert classify(oracle.field) == "positive"
    fp, cp = FlowParams(), ConeParams()
    report = sign_changing_solve(m, "gamma_s", fp, cp, mesh_level=3, max_sweeps=200)
    assert report.iterations == len(report.trace) > 0
    assert report.classification == "sign_changing"
    assert report.level > oracle.level
    assert all(np.isfinite(row.sup_level) for row in report.trace)
    try:
        sign_changing_solve(m, "gamma_s", fp, cp, mesh_level=3, rho=1e6)
        raise AssertionError("rho ≥ R accepted")
    except LinkingError:
        pass


def test_negative_is_odd_image():
    """f 为奇函数：c₋ = c₊，负解 ≈ −正解"""
    m = model(1, 255)
    plus = mountain_pass(m, "plus", FlowParams(), ConeParams())
    minus = mountain_pass(m, "minus", FlowParams(), ConeParams())
    assert minus.status == "converged"
    assert minus.classification == "negative"
    assert abs(plus.level - minus.level) <= 1e-6 * plus.level
    assert norm_h(plus.field + minus.field) <= 1e-6


def test_sign_changing_1d():
    """一维 n=255：c_s ≈ 16·c₊，唯一零点在 ½ 附近，与打靶参照解一致"""
    m = model(1, 255)
    fp, cp = FlowParams(), ConeParams()
    plus = mountain_pass(m, "plus", fp, cp)
    report = sign_changing_solve(m, "gamma_s", fp, cp, mesh_level=3)
    assert report.status == "converged", report.status
    assert report.classification == "sign_changing"
    assert report.name == "sign_changing"
    assert abs(report.level / plus.level - 16.0) <= 2e-2 * 16.0
    zeros = sign_changes(report.field)
    assert len(zeros) == 1
    assert abs(zeros[0] - 0.5) <= 2 * float(m.grid.h)
    shooting = shooting_oracle(m.nl, pieces=2)
    assert abs(report.level - shooting.level) <= 1e-2 * shooting.level
    assert report.residual <= fp.residual_tol
    assert_nodal_residual(m, report.field, fp.residual_tol)


def test_shooting_scaling():
    """p=4：两段解的能量恰为一段解的 16 倍；一段解与 Nehari 参照解一致"""
    nl = odd_power(4.0)
    one = shooting_oracle(nl, pieces=1)
    two = shooting_oracle(nl, pieces=2)
    assert abs(two.level - 16.0 * one.level) <= 1e-6 * two.level
    oracle = nehari_oracle(model(1, 255))
    assert abs(one.level - oracle.level) <= 1e-3 * one.level
    try:
        shooting_oracle(nl, pieces=0)
        raise AssertionError("pieces = 0 accepted")
    except ValueError:
        pass


def test_nodal_rescale():
    """缩放后 I'(v)v⁺ = I'(v)v⁻ = 0；单一符号的场返回 None"""
    m = model(1, 127)
    pairs = eigenpairs(m.grid, 2)
    assert nodal_rescale(m, pairs[0][1].values) is None
    v = Field(m.grid, nodal_rescale(m, pairs[1][1].values))
    vp, vm = positive_part(v), negative_part(v)
    assert abs(derivative(m, v, vp)) <= 1e-8 * inner_h(vp, vp)
    assert abs(derivative(m, v, vm)) <= 1e-8 * inner_h(vm, vm)


def test_surface_construction():
    """圆弧顶点的参数半径精确为 R，冻结集合与变体一致"""
    m = model(1, 63)
    for variant in ("gamma_s", "gamma_s_prime", "gamma_s_doubleprime"):
        s = build_surface(m, variant, 3)
        assert np.all(s.radius[s.on_arc] == s.R)
        assert np.all(np.hypot(s.xy[s.on_arc, 0], s.xy[s.on_arc, 1]) <= s.R * (1 + 1e-14))
        assert np.count_nonzero(s.is_origin) == 1
        frozen = frozen_mask(s)
        if variant == "gamma_s":
            assert np.array_equal(frozen, s.on_arc | s.on_leg1 | s.on_leg2 | s.is_origin)
        else:
            assert not np.any(frozen & s.on_leg1 & ~s.on_arc)
    quarter = build_surface(m, "gamma_s_doubleprime", 3)
    assert np.all(quarter.xy >= 0)
    for bad in ({"variant": "gamma_x", "mesh_level": 3}, {"variant": "gamma_s", "mesh_level": 2}):
        try:
            build_surface(m, **bad)
            raise AssertionError(f"{bad} accepted")
        except ValueError:
            pass


def test_surface_boundary_after_sweeps():
    """扫描后冻结顶点逐位不变，变体的腿部保持符号"""
    m = model(1, 63)
    fp, cp = FlowParams(), ConeParams()
    for variant in ("gamma_s", "gamma_s_prime"):
        s = build_surface(m, variant, 3)
        reference = copy.deepcopy(s)
        rows = deform_surface(m, s, fp, cp, 20)
        assert len(rows) == 20
        assert boundary_admissible(s, reference)


def test_linking_witness():
    """R = 2ρ 的曲面：扫描前后都能在 ∂B_ρ 上找到 W 之外的交点"""
    m = model(1, 63)
    cp = ConeParams()
    rho, _ = estimate_alpha_rho(m)
    s = build_surface(m, "gamma_s", 3, R=2 * rho)
    for sweeps in (0, 1000):
        if sweeps:
            deform_surface(m, s, FlowParams(), cp, sweeps)
        witness = verify_linking(s, rho, cp, m)
        assert abs(norm_h(witness) - rho) <= 1e-6
        assert not in_w(witness, cp)
    try:
        verify_linking(s, 3 * rho, cp, m)
        raise AssertionError("rho ≥ R accepted")
    except ValueError:
        pass

    # 整个曲面缩进 B_{ρ/2}：没有边穿过 ∂B_ρ
    inside = build_surface(m, "gamma_s", 3, R=2 * rho)
    inside.images *= 0.5 * rho / float(np.max(norm_h_rows(m.grid, inside.images)))
    try:
        verify_linking(inside, rho, cp, m)
        raise AssertionError("surface inside B_{ρ/2} accepted")
    except LinkingError as e:
        assert e.crossings == []


def test_r_cap():
    """次线性的非线性项下 R 倍增超过上限"""
    m = EnergyModel(Grid(1, 31), linear_hook(1.0))
    try:
        choose_r(m, eigenpairs(m.grid, 1)[0][1])
        raise AssertionError("R cap not enforced")
    except SolverError:
        pass


TESTS = [
    ("分类与变号点", test_classify_and_sign_changes),
    ("半径 R", test_choose_r),
    ("α 与 ρ", test_alpha_rho),
    ("不相交鼓包", test_disjoint_bumps),
    ("等弧长重参数化", test_reparametrize_equal_arcs),
    ("山路解对比 Nehari", test_mountain_pass_matches_nehari),
    ("默认步长的山路解", test_mountain_pass_default_step),
    ("小网格端到端", test_small_grid_end_to_end),
    ("负解对称性", test_negative_is_odd_image),
    ("一维变号解", test_sign_changing_1d),
    ("打靶参照解", test_shooting_scaling),
    ("节点 Nehari 缩放", test_nodal_rescale),
    ("曲面构造", test_surface_construction),
    ("曲面边界", test_surface_boundary_after_sweeps),
    ("交点见证", test_linking_witness),
    ("R 上限", test_r_cap),
]


def main():
    """运行所有测试"""
    print("=" * 60)
    print("🧪 极小极大求解器测试")
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

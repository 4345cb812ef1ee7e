#!/usr/bin/env python3
"""
下降流测试
单步下降、下降流积分、截断函数、形变流 η、伪梯度、Newton 收尾
"""

import sys
import os

import numpy as np
from numpy.testing import assert_allclose

# 添加项目路径
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.checks import (check_cutoff_lipschitz, check_flow_monotone, check_pseudo_gradient_suite,
                        deformation_checks, demo_cutoff)
from src.cones import cone_sample_rows
from src.energy import energy, odd_power, operator_a, residual
from src.flow import (cutoff_g, deformation_eta, descent_step, integrate_flow, newton_polish,
                      pseudo_gradient)
from src.grid_core import eigenpairs, norm_h, random_field
from src.minimax import estimate_alpha_rho
from src.models import ConeParams, CutoffSpec, EnergyModel, Field, FlowParams, Grid
from src.oracles import nehari_oracle


def model(dimension: int, n: int, p: float = 4.0) -> EnergyModel:
    return EnergyModel(Grid(dimension, n), odd_power(p))


def test_unit_step_is_operator_a():
    """F 凸时 dt = 1 总被接受，u' = A(u)"""
    m = model(1, 127)
    rng = np.random.default_rng(41)
    for _ in range(5):
        u = random_field(m.grid, rng)
        out = descent_step(m, u, FlowParams(dt=1.0))
        assert out.dt == 1.0 and not out.stagnated
        expected = operator_a(m, u).values
        assert_allclose(out.field.values, expected, rtol=0,
                        atol=1e-13 * (1 + np.max(np.abs(expected))))
    try:
        descent_step(m, u, FlowParams(), dt=1.5)
        raise AssertionError("dt > 1 accepted")
    except ValueError:
        pass


def test_zero_is_fixed_point():
    m = model(2, 15)
    zero = Field.zeros(m.grid)
    out = descent_step(m, zero, FlowParams())
    assert np.array_equal(out.field.values, zero.values)
    result = integrate_flow(m, zero, FlowParams())
    assert result.status == "converged" and result.steps == 0


def test_strict_decrease():
    """u 不是临界点时一步下降后能量严格减小"""
    m = model(1, 63)
    rng = np.random.default_rng(42)
    for _ in range(5):
        u = random_field(m.grid, rng)
        out = descent_step(m, u, FlowParams(dt=0.5))
        assert energy(m, out.field) < energy(m, u)


def test_small_start_converges_to_zero():
    """0.01·e₁ 流向平凡解"""
    m = model(1, 255)
    e1 = eigenpairs(m.grid, 1)[0][1]
    result = integrate_flow(m, 0.01 * e1, FlowParams(dt=0.5))
    assert result.status == "converged"
    assert norm_h(result.field) <= 1e-7
    energies = [row.energy for row in result.trace]
    assert all(b <= a + 1e-14 * (1 + abs(a)) for a, b in zip(energies, energies[1:]))


def test_large_start_diverges():
    """20·e₁ 在 Nehari 射线点 t* ≈ 8.06 之外，流发散"""
    m = model(1, 255)
    e1 = eigenpairs(m.grid, 1)[0][1]
    result = integrate_flow(m, 20.0 * e1, FlowParams(dt=0.5))
    assert result.status == "diverged"
    assert np.all(np.isfinite(result.field.values))


def test_flow_monotone_check():
    check = check_flow_monotone(model(2, 16))
    assert check.passed, check


def test_cutoff_values():
    """能量带内为 1，ε′ 之外为 0，中点为 ½；靠近已知临界点时为 0"""
    m = model(1, 63)
    u = random_field(m.grid, np.random.default_rng(43))
    level = energy(m, u)
    assert cutoff_g(m, u, CutoffSpec(c=level, eps=0.1, eps_prime=0.2, delta=1.0)) == 1.0
    assert cutoff_g(m, u, CutoffSpec(c=level + 0.3, eps=0.1, eps_prime=0.2, delta=1.0)) == 0.0
    half = cutoff_g(m, u, CutoffSpec(c=level + 0.15, eps=0.1, eps_prime=0.2, delta=1.0))
    assert_allclose(half, 0.5, atol=1e-9)

    near = CutoffSpec(c=level, eps=0.1, eps_prime=0.2, delta=1.0, known_critical=(u,))
    assert cutoff_g(m, u, near) == 0.0
    far_point = Field(m.grid, u.values + 10.0 * eigenpairs(m.grid, 1)[0][1].values)
    far = CutoffSpec(c=level, eps=0.1, eps_prime=0.2, delta=1.0, known_critical=(far_point,))
    assert cutoff_g(m, u, far) == 1.0

    try:
        CutoffSpec(c=1.0, eps=0.2, eps_prime=0.1, delta=1.0)
        raise AssertionError("eps ≥ eps_prime accepted")
    except ValueError:
        pass


def test_cutoff_lipschitz():
    m = model(1, 63)
    _, alpha = estimate_alpha_rho(m)
    check = check_cutoff_lipschitz(m, demo_cutoff(alpha))
    assert check.passed, check


def test_eta_identity_and_freeze():
    """η(0,u) = u；能量带外的 u 不动"""
    m = model(1, 63)
    u = random_field(m.grid, np.random.default_rng(44))
    level = energy(m, u)
    cs = CutoffSpec(c=level, eps=0.1, eps_prime=0.2, delta=1.0)
    cp = ConeParams()
    start = deformation_eta(m, u, cs, cp, 0.0, beta=1.0)
    assert np.array_equal(start.field.values, u.values) and start.time == 0.0

    outside = CutoffSpec(c=level + 10.0, eps=1.0, eps_prime=2.0, delta=1.0)
    frozen = deformation_eta(m, u, outside, cp, 1.0, beta=1.0)
    assert frozen.status == "frozen"
    assert np.array_equal(frozen.field.values, u.values)

    moved = deformation_eta(m, u, cs, cp, 1.0, beta=1.0)
    assert energy(m, moved.field) <= level
    assert moved.horizon == 16.0 * cs.eps / 1.0

    for bad in ({"t": 1.5}, {"t": 0.5, "variant": "mapping3"}):
        try:
            deformation_eta(m, u, cs, cp, beta=1.0, **bad)
            raise AssertionError(f"{bad} accepted")
        except ValueError:
            pass


def test_deformation_checks():
    """形变流五条性质（少量样本）"""
    m = model(1, 63)
    _, alpha = estimate_alpha_rho(m)
    checks = deformation_checks(m, ConeParams(), alpha, samples=10)
    names = [c.name for c in checks]
    assert names == ["deformation_identity", "deformation_freeze",
                     "deformation_descent", "deformation_cone", "deformation_mapping2_freeze"]
    for check in checks:
        assert check.passed, check


def test_mapping2_freezes_cone_neighbourhood():
    """P̄⁻_{ε₁} 中能量在带内的场：mapping2 下不动，mapping 下被移动"""
    m = model(1, 63)
    _, alpha = estimate_alpha_rho(m)
    cs = demo_cutoff(alpha)
    cp = ConeParams()
    scale = np.sqrt(2 * cs.c)
    rows = cone_sample_rows(m.grid, 6, seed=5, eps=0.9 * cp.eps1, sign="minus",
                            norm_range=(0.95 * scale, 1.05 * scale))
    used = 0
    for row in rows:
        u = Field(m.grid, row)
        if cutoff_g(m, u, cs) == 0.0:
            continue
        used += 1
        frozen = deformation_eta(m, u, cs, cp, 1.0, variant="mapping2", beta=1.0)
        assert frozen.status == "frozen"
        assert np.array_equal(frozen.field.values, u.values)
        moved = deformation_eta(m, u, cs, cp, 1.0, variant="mapping", beta=1.0)
        assert moved.substeps > 0
        assert not np.array_equal(moved.field.values, u.values)
        assert energy(m, moved.field) < energy(m, u)
    assert used > 0


def test_pseudo_gradient():
    """B ≡ A 满足锥、范数等价、下降三条性质"""
    m = model(1, 63)
    u = random_field(m.grid, np.random.default_rng(45))
    assert np.array_equal(pseudo_gradient(m, u).values, operator_a(m, u).values)
    check = check_pseudo_gradient_suite(m, ConeParams())
    assert check.passed, check


def test_newton_polish():
    """Nehari 参照解附近扰动后，Newton 收尾回到同一临界点"""
    m = model(1, 63)
    ref = nehari_oracle(m, restarts=1)
    rng = np.random.default_rng(46)
    start = Field(m.grid, ref.field.values + 1e-3 * random_field(m.grid, rng).values)
    polished, ok, iterations = newton_polish(m, start, 1e-10)
    assert ok and iterations >= 1
    assert residual(m, polished) <= 1e-10
    assert abs(energy(m, polished) - ref.level) <= 1e-6 * ref.level
    assert np.all(polished.values > 0)


TESTS = [
    ("dt=1 的一步即 A(u)", test_unit_step_is_operator_a),
    ("零场为不动点", test_zero_is_fixed_point),
    ("严格下降", test_strict_decrease),
    ("小初值收敛到 0", test_small_start_converges_to_zero),
    ("大初值发散", test_large_start_diverges),
    ("能量单调", test_flow_monotone_check),
    ("截断函数取值", test_cutoff_values),
    ("截断函数 Lipschitz", test_cutoff_lipschitz),
    ("η 恒等与冻结", test_eta_identity_and_freeze),
    ("形变流性质", test_deformation_checks),
    ("mapping2 冻结锥邻域", test_mapping2_freezes_cone_neighbourhood),
    ("伪梯度", test_pseudo_gradient),
    ("Newton 收尾", test_newton_polish),
]


def main():
    """运行所有测试"""
    print("=" * 60)
    print("🧪 下降流测试")
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

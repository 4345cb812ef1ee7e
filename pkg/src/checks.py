"""
验证套件：把各条引理变成可在运行时核对的数值检查

每项检查返回一个 LemmaCheck（名称、是否通过、最差度量值、说明）。
verify-lemmas 运行全部检查，deform-demo 只运行形变流部分。
"""

import logging
from typing import List, Optional, Tuple

import numpy as np

from .cones import cone_distance_rows, cone_sample_rows, contraction_probe
from .energy import derivative, energy, gradient_h, lemma_a_identity, operator_a_rows
from .flow import (band_samples, check_pseudo_gradient, cutoff_g, cutoff_lipschitz,
                      deformation_eta, descent_step, estimate_beta, integrate_flow)
from .grid_core import inner_h, norm_h_rows, random_rows
from .models import (ConeParams, CutoffSpec, EnergyModel, Field, FlowParams, LemmaCheck,
                        ProbeReport)

logger = logging.getLogger(__name__)

IDENTITY_TOL = 1e-10
DUAL_TOL = 1e-8
FD_STEP = 1e-5
FD_TOL = 1e-6


def _report(check: LemmaCheck) -> LemmaCheck:
    if check.passed:
        logger.info("✓ %s（最差 %.3e）", check.name, check.worst)
    else:
        logger.warning("❌ %s（最差 %.3e）%s", check.name, check.worst, check.detail)
    return check


# ============ 能量恒等式 ============

def check_lemma_a_identity(m: EnergyModel, samples: int = 100, seed: int = 0) -> LemmaCheck:
    """I'(u)(u − A(u)) = ‖u − A(u)‖²_H，相对误差按 1 + ‖u − A(u)‖² 计"""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for row in random_rows(m.grid, rng, samples):
        lhs, rhs = lemma_a_identity(m, Field(m.grid, row))
        worst = max(worst, abs(lhs - rhs) / (1.0 + rhs))
    return _report(LemmaCheck("lemma_a_identity", worst <= IDENTITY_TOL, worst,
                              f"{samples} samples"))


def check_lemma_a_dual_norm(m: EnergyModel, samples: int = 20, directions: int = 20,
                            seed: int = 1) -> LemmaCheck:
    """‖I'(u)‖ = ‖u − A(u)‖_H：随机方向不超过它，方向 u − A(u) 取到它"""
    rng = np.random.default_rng(seed)
    grid = m.grid
    worst = 0.0
    for row in random_rows(grid, rng, samples):
        u = Field(grid, row)
        g = gradient_h(m, u)
        gnorm = float(norm_h_rows(grid, g.values))
        if gnorm == 0.0:
            continue
        attained = derivative(m, u, g) / gnorm
        worst = max(worst, abs(attained - gnorm) / gnorm)
        for w in random_rows(grid, rng, directions):
            ratio = abs(derivative(m, u, Field(grid, w))) / float(norm_h_rows(grid, w))
            worst = max(worst, ratio / gnorm - 1.0)
    return _report(LemmaCheck("lemma_a_dual_norm", worst <= DUAL_TOL, worst))


def check_gradient_fd(m: EnergyModel, pairs: int = 20, seed: int = 2) -> LemmaCheck:
    """中心差分 (I(u+sw) − I(u−sw))/2s 与 (∇_H I(u), w)_H 的相对差"""
    rng = np.random.default_rng(seed)
    grid = m.grid
    worst = 0.0
    for _ in range(pairs):
        u = Field(grid, random_rows(grid, rng, 1)[0])
        w = Field(grid, random_rows(grid, rng, 1)[0])
        fd = (energy(m, u + FD_STEP * w) - energy(m, u - FD_STEP * w)) / (2 * FD_STEP)
        exact = inner_h(gradient_h(m, u), w)
        worst = max(worst, abs(fd - exact) / max(abs(exact), 1e-12))
    return _report(LemmaCheck("gradient_fd", worst <= FD_TOL, worst, f"s = {FD_STEP:g}"))


# ============ 锥 ============

def check_max_principle(m: EnergyModel, samples: int = 100, seed: int = 3) -> LemmaCheck:
    """u ≤ 0 逐点 ⇒ A(u) ≤ 0 逐点；最差值为 max A(u)"""
    rng = np.random.default_rng(seed)
    rows = -np.abs(random_rows(m.grid, rng, samples))
    worst = float(np.max(operator_a_rows(m, rows)))
    return _report(LemmaCheck("max_principle", worst <= 0.0, worst))


def check_cone_contraction(m: EnergyModel, cp: ConeParams, samples: int = 100,
                           seed: int = 7) -> Tuple[LemmaCheck, ProbeReport]:
    """在经验 ε₀ 的一半处核对 ‖A(u)⁺‖ ≤ ½‖u⁺‖ 与 A(P̄⁻_ε) ⊂ P̄⁻_ε"""
    first = contraction_probe(m, cp, samples=samples, seed=seed)
    eps = first.eps0_empirical / 2 if first.eps0_empirical > 0 else cp.eps
    probe = contraction_probe(m, cp, samples=samples, seed=seed, eps=eps)
    passed = probe.max_ratio <= 0.5 and probe.invariance_ok
    check = LemmaCheck("cone_contraction", passed, probe.max_ratio,
                       f"eps = {eps:.6g}, eps0 = {first.eps0_empirical:.6g}")
    return _report(check), probe


def check_step_cone_invariance(m: EnergyModel, cp: ConeParams, eps: float,
                               samples: int = 100, seed: int = 8) -> LemmaCheck:
    """dt = 1 的下降步保持 P̄⁻_ε"""
    grid = m.grid
    fp = FlowParams(dt=1.0)
    worst = 0.0
    for row in cone_sample_rows(grid, samples, seed, eps):
        out = descent_step(m, Field(grid, row), fp, dt=1.0).field
        worst = max(worst, float(cone_distance_rows(grid, out.values[None, :], "minus", cp)[0]))
    return _report(LemmaCheck("step_cone_invariance", worst <= eps, worst, f"eps = {eps:.6g}"))


# ============ 流 ============

def check_pseudo_gradient_suite(m: EnergyModel, cp: ConeParams, samples: int = 20,
                                seed: int = 4) -> LemmaCheck:
    """B ≡ A 的三条性质，在随机场与锥样本上逐条核对"""
    grid = m.grid
    rng = np.random.default_rng(seed)
    rows = np.concatenate([
        random_rows(grid, rng, samples),
        cone_sample_rows(grid, samples // 2, seed, cp.eps, "minus"),
        cone_sample_rows(grid, samples // 2, seed + 1, cp.eps, "plus"),
    ])
    failed = set()
    worst = 0.0
    for row in rows:
        clauses = check_pseudo_gradient(m, Field(grid, row), cp)
        for name, (value, ok) in clauses.items():
            if not ok:
                failed.add(name)
        worst = max(worst, clauses["cone"][0])
    detail = "failed: " + ",".join(sorted(failed)) if failed else "B = A"
    return _report(LemmaCheck("pseudo_gradient", not failed, worst, detail))


def check_flow_monotone(m: EnergyModel, seed: int = 5, steps: int = 200) -> LemmaCheck:
    """下降流轨迹上能量单调不增；最差值为相邻两步能量的最大上升量"""
    rng = np.random.default_rng(seed)
    u0 = Field(m.grid, random_rows(m.grid, rng, 1)[0])
    result = integrate_flow(m, u0, FlowParams(max_steps=steps))
    energies = np.array([r.energy for r in result.trace])
    rises = np.diff(energies)
    worst = float(np.max(rises)) if rises.size else 0.0
    slack = 1e-14 * (1.0 + np.abs(energies[:-1])) if rises.size else 0.0
    return _report(LemmaCheck("flow_monotone", bool(np.all(rises <= slack)), worst,
                              f"{result.status} after {result.steps} steps"))


def check_cutoff_lipschitz(m: EnergyModel, cs: CutoffSpec, pairs: int = 50,
                           seed: int = 6) -> LemmaCheck:
    """|g(u) − g(v)| ≤ K·(|I(u) − I(v)| + ‖u − v‖_H)，最差值为比值"""
    grid = m.grid
    K = cutoff_lipschitz(cs)
    rng = np.random.default_rng(seed)
    scale = np.sqrt(2.0 * cs.c)
    worst = 0.0
    for _ in range(pairs):
        a, b = random_rows(grid, rng, 2)
        a *= scale / norm_h_rows(grid, a)
        b = a + rng.uniform(0.001, 0.1) * b / norm_h_rows(grid, b)
        u, v = Field(grid, a), Field(grid, b)
        bound = K * (abs(energy(m, u) - energy(m, v)) + float(norm_h_rows(grid, a - b)))
        gap = abs(cutoff_g(m, u, cs) - cutoff_g(m, v, cs))
        if bound > 0:
            worst = max(worst, gap / bound)
    return _report(LemmaCheck("cutoff_lipschitz", worst <= 1.0 + 1e-12, worst, f"K = {K:.6g}"))


# ============ 形变 η ============

def demo_cutoff(alpha: float) -> CutoffSpec:
    """c = α/2 的能量带 [3α/8, 5α/8]，不含 0 与山路能级"""
    c = alpha / 2
    return CutoffSpec(c=c, eps=c / 8, eps_prime=c / 4, delta=1.0)


def deformation_checks(m: EnergyModel, cp: ConeParams, alpha: float, samples: int = 50,
                       seed: int = 9, beta: Optional[float] = None) -> List[LemmaCheck]:
    """
    η 的五条性质：
    (1) η(0,u) = u；(2) 能量带外的样本不动；
    (3) I^{c+ε} \\ W 中的样本满足 I(η(1,u)) ≤ c − ε；(4) P̄^±_ε 的样本留在 P̄^±_ε；
    (5) mapping2 下 W_{ε₁} 中的样本不动
    """
    grid = m.grid
    cs = demo_cutoff(alpha)
    beta = estimate_beta(m, cs, cp, seed=seed) if beta is None else beta
    certified = beta > 1e-6
    rng = np.random.default_rng(seed)
    checks = []

    # (1)
    worst = 0.0
    for row in random_rows(grid, rng, 10):
        u = Field(grid, row)
        out = deformation_eta(m, u, cs, cp, 0.0, beta=beta).field
        worst = max(worst, float(np.max(np.abs(out.values - u.values))))
    checks.append(_report(LemmaCheck("deformation_identity", worst == 0.0, worst)))

    # (2) 能量在 [c−ε′, c+ε′] 之外：在射线上取低于 c−ε′ 的点
    moved = 0.0
    count = 0
    for row in random_rows(grid, rng, 4 * samples):
        if count >= samples:
            break
        u = Field(grid, row * np.sqrt(2 * (cs.c - 2 * cs.eps_prime)) / float(norm_h_rows(grid, row)))
        if abs(energy(m, u) - cs.c) <= cs.eps_prime:
            continue
        out = deformation_eta(m, u, cs, cp, 1.0, beta=beta).field
        moved = max(moved, float(np.max(np.abs(out.values - u.values))))
        count += 1
    checks.append(_report(LemmaCheck("deformation_freeze", moved == 0.0 and count > 0, moved,
                                     f"{count} samples")))

    # (3)
    rows = band_samples(m, cs, cp, samples, seed=seed, exclude_eps=cp.eps,
                        low=cs.c - cs.eps, high=cs.c + cs.eps)
    target = cs.c - cs.eps
    worst_excess = -np.inf
    statuses = set()
    for row in rows:
        res = deformation_eta(m, Field(grid, row), cs, cp, 1.0, beta=beta)
        statuses.add(res.status)
        worst_excess = max(worst_excess, energy(m, res.field) - target)
    passed = rows.shape[0] > 0 and worst_excess <= 1e-12 * (1.0 + abs(target))
    detail = (f"beta = {beta:.4g}, {rows.shape[0]} samples, status {','.join(sorted(statuses))}"
              + ("" if certified else ", band not certified"))
    checks.append(_report(LemmaCheck("deformation_descent", bool(passed),
                                     float(worst_excess), detail)))

    # (4) 锥样本的范数取在 √(2c) 附近，使其落在能量带内
    scale = np.sqrt(2 * cs.c)
    worst = 0.0
    for sign in ("minus", "plus"):
        cone_rows = cone_sample_rows(grid, samples // 2, seed, cp.eps, sign,
                                     norm_range=(0.9 * scale, 1.1 * scale))
        for row in cone_rows:
            out = deformation_eta(m, Field(grid, row), cs, cp, 1.0, beta=beta).field
            dist = float(cone_distance_rows(grid, out.values[None, :], sign, cp)[0])
            worst = max(worst, dist)
    checks.append(_report(LemmaCheck("deformation_cone", worst <= cp.eps, worst,
                                     f"eps = {cp.eps:g}")))

    # (5) mapping2：W_{ε₁} 中的样本完全不动
    checks.append(check_mapping2_freeze(m, cs, cp, samples // 2, seed, beta))
    return checks


def check_mapping2_freeze(m: EnergyModel, cs: CutoffSpec, cp: ConeParams, samples: int,
                          seed: int, beta: float) -> LemmaCheck:
    """
    mapping2 的权重在 W_{ε₁} 上为零：P̄^±_{ε₁} 中能量在带内的样本经 η(1,·) 后逐位不变

    同一批样本在 mapping 下的移动量写进说明，用来确认它们确实处在截断函数的支撑内。
    """
    grid = m.grid
    scale = np.sqrt(2 * cs.c)
    moved = 0.0
    count = 0
    moved_plain = 0
    for sign in ("minus", "plus"):
        rows = cone_sample_rows(grid, samples, seed, 0.9 * cp.eps1, sign,
                                norm_range=(0.9 * scale, 1.1 * scale))
        for row in rows:
            u = Field(grid, row)
            if cutoff_g(m, u, cs) == 0.0:
                continue
            count += 1
            out = deformation_eta(m, u, cs, cp, 1.0, variant="mapping2", beta=beta).field
            moved = max(moved, float(np.max(np.abs(out.values - u.values))))
            plain = deformation_eta(m, u, cs, cp, 1.0, variant="mapping", beta=beta).field
            if not np.array_equal(plain.values, u.values):
                moved_plain += 1
    return _report(LemmaCheck("deformation_mapping2_freeze", moved == 0.0 and count > 0, moved,
                              f"{count} samples in band, {moved_plain} moved under mapping"))


def lemma_suite(m: EnergyModel, cp: ConeParams, alpha: float,
                seed: int = 0) -> Tuple[List[LemmaCheck], ProbeReport]:
    """verify-lemmas 的全部检查"""
    checks = [
        check_lemma_a_identity(m, seed=seed),
        check_lemma_a_dual_norm(m, seed=seed + 1),
        check_gradient_fd(m, seed=seed + 2),
        check_max_principle(m, seed=seed + 3),
    ]
    contraction, probe = check_cone_contraction(m, cp)
    checks.append(contraction)
    checks.append(check_step_cone_invariance(m, cp, probe.eps, seed=seed + 8))
    checks.append(check_pseudo_gradient_suite(m, cp, seed=seed + 4))
    checks.append(check_flow_monotone(m, seed=seed + 5))
    checks.append(check_cutoff_lipschitz(m, demo_cutoff(alpha), seed=seed + 6))
    checks.extend(deformation_checks(m, cp, alpha, seed=seed + 9))
    return checks, probe

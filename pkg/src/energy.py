"""
能量泛函模块

I_h(u) = ½‖u‖²_H − h^d Σ F(u_i)
A(u) = L_h⁻¹ f(u)，H 梯度 ∇_H I_h(u) = u − A(u)
"""

import logging
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import EnergyOverflowError
from .grid_core import inner_h_rows, laplacian_rows, norm_h_rows, solve_poisson_rows
from .models import ArReport, EnergyModel, Field, Nonlinearity

logger = logging.getLogger(__name__)

# (f1) 的检查点与 |f(u)|/|u| 的上限
SMALL_AMPLITUDE = 1e-6
SMALL_RATIO = 1e-3


# ============ 非线性项 ============

def odd_power(p: float = 4.0, mu: Optional[float] = None) -> Nonlinearity:
    """f(u) = |u|^{p−2}u，F(u) = |u|^p/p，μ 默认取 p"""
    if not p > 2:
        raise ValueError("p: must be > 2")
    if mu is not None and not 2 < mu <= p:
        raise ValueError("mu: must satisfy 2 < mu ≤ p")
    return Nonlinearity(
        kind="odd_power",
        p=float(p),
        mu=float(p if mu is None else mu),
        f=lambda u: np.abs(u) ** (p - 2) * u,
        F=lambda u: np.abs(u) ** p / p,
        df=lambda u: (p - 1) * np.abs(u) ** (p - 2),
    )


def power_sum(p: float, q: float, coefficient: float = 1.0,
              mu: Optional[float] = None) -> Nonlinearity:
    """f(u) = a|u|^{q−2}u + |u|^{p−2}u（2 < q ≤ p, a ≥ 0），μ 默认取 q"""
    if not 2 < q <= p:
        raise ValueError("q: must satisfy 2 < q ≤ p")
    if mu is not None and not 2 < mu <= q:
        raise ValueError("mu: must satisfy 2 < mu ≤ q")
    if coefficient < 0:
        raise ValueError("coefficient: must be ≥ 0")
    a = float(coefficient)
    return Nonlinearity(
        kind="power_sum",
        p=float(p),
        mu=float(q if mu is None else mu),
        q=float(q),
        coefficient=a,
        f=lambda u: a * np.abs(u) ** (q - 2) * u + np.abs(u) ** (p - 2) * u,
        F=lambda u: a * np.abs(u) ** q / q + np.abs(u) ** p / p,
        df=lambda u: a * (q - 1) * np.abs(u) ** (q - 2) + (p - 1) * np.abs(u) ** (p - 2),
    )


def custom(f: Callable, F: Callable, p: float, mu: float,
           df: Optional[Callable] = None) -> Nonlinearity:
    """用户给定的 f、F；要求 f(0) = F(0) = 0"""
    if not mu > 2:
        raise ValueError("mu: must be > 2")
    if not p > 2:
        raise ValueError("p: must be > 2")
    zero = np.zeros(1)
    if np.any(np.asarray(f(zero), dtype=float) != 0) or np.any(np.asarray(F(zero), dtype=float) != 0):
        raise ValueError("f: must satisfy f(0) = F(0) = 0")
    return Nonlinearity(kind="custom", p=float(p), mu=float(mu), f=f, F=F, df=df)


def linear_hook(lam: float) -> Nonlinearity:
    """f(u) = λu，仅供测试使用，不参与 AR 检查"""
    return Nonlinearity(
        kind="custom",
        p=2.0,
        mu=2.0,
        f=lambda u: lam * u,
        F=lambda u: 0.5 * lam * u * u,
        df=lambda u: np.full_like(u, lam),
        ar_exempt=True,
    )


def validate_ar(nl: Nonlinearity, samples: int = 1000, value_range: float = 1e3,
                seed: int = 0) -> ArReport:
    """
    抽样检查 (f1)/(f2)：0 < μF(u) ≤ f(u)u（u ≠ 0），以及 |f(u)|/|u| 在 0 附近很小

    采样点：±[1e-6, value_range] 上的对数网格加对数均匀的随机点。
    """
    if samples < 100:
        raise ValueError("samples: must be ≥ 100")
    if nl.ar_exempt:
        return ArReport(passed=True, worst_ratio=float("inf"), worst_point=0.0,
                        samples=0, reason="exempt test hook")
    if not nl.mu > 2:
        return ArReport(passed=False, worst_ratio=float("nan"), worst_point=0.0,
                        samples=0, reason="mu must be > 2")

    rng = np.random.default_rng(seed)
    half = samples // 2
    lo = np.log(SMALL_AMPLITUDE)
    grid_pts = np.geomspace(SMALL_AMPLITUDE, value_range, half)
    rand_pts = np.exp(rng.uniform(lo, np.log(value_range), samples - half))
    mags = np.concatenate([grid_pts, rand_pts])
    u = np.concatenate([mags, -mags])

    with np.errstate(all="ignore"):
        fu = np.asarray(nl.f(u), dtype=float)
        Fu = np.asarray(nl.F(u), dtype=float)
        f_small = np.abs(np.asarray(nl.f(np.array([SMALL_AMPLITUDE, -SMALL_AMPLITUDE]))))
    if not (np.all(np.isfinite(fu)) and np.all(np.isfinite(Fu))):
        return ArReport(False, float("nan"), 0.0, u.size, "non-finite f or F")
    nonpositive = Fu <= 0
    if np.any(nonpositive):
        idx = int(np.argmax(nonpositive))
        return ArReport(False, float("-inf"), float(u[idx]), u.size, "F(u) ≤ 0 at u ≠ 0")
    if np.max(f_small) / SMALL_AMPLITUDE >= SMALL_RATIO:
        return ArReport(False, float("nan"), SMALL_AMPLITUDE, u.size,
                        "f(u)/u not small near 0")

    ratio = fu * u / Fu
    idx = int(np.argmin(ratio))
    worst = float(ratio[idx])
    passed = worst >= nl.mu * (1 - 1e-12)
    reason = "" if passed else f"f(u)u/F(u) = {worst:.6g} < mu = {nl.mu:g}"
    if passed:
        logger.debug("✓ AR 条件通过：min f(u)u/F(u) = %.6g ≥ μ = %g", worst, nl.mu)
    else:
        logger.warning("❌ AR 条件不满足：%s (u = %.6g)", reason, u[idx])
    return ArReport(passed, worst, float(u[idx]), u.size, reason)


# ============ 能量与梯度 ============

def _primitive_sum(m: EnergyModel, rows: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        total = m.grid.cell_volume * np.sum(m.nl.F(rows), axis=-1)
    return total


def energy_rows(m: EnergyModel, rows: np.ndarray, strict: bool = True) -> np.ndarray:
    """
    逐行能量 I_h，返回一维数组（单个场也按一行处理）

    strict=False 时溢出的行返回 +inf 而不抛异常（供线搜索拒绝候选步）
    """
    rows = np.atleast_2d(rows)
    with np.errstate(over="ignore", invalid="ignore"):
        values = 0.5 * inner_h_rows(m.grid, rows, rows) - _primitive_sum(m, rows)
    finite = np.isfinite(values)
    if not np.all(finite):
        if strict:
            raise EnergyOverflowError("energy overflow")
        values = np.where(finite, values, np.inf)
    return values


def energy(m: EnergyModel, u: Field) -> float:
    return float(energy_rows(m, u.values)[0])


def nonlinearity_rows(m: EnergyModel, rows: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        fu = m.nl.f(rows)
    if not np.all(np.isfinite(fu)):
        raise EnergyOverflowError("f(u) overflow")
    return fu


def operator_a_rows(m: EnergyModel, rows: np.ndarray) -> np.ndarray:
    """逐行 A(u) = L_h⁻¹ f(u)"""
    return solve_poisson_rows(m.grid, nonlinearity_rows(m, rows),
                              m.poisson_tol, m.poisson_method)


def operator_a(m: EnergyModel, u: Field) -> Field:
    return Field(m.grid, operator_a_rows(m, u.values))


def gradient_rows(m: EnergyModel, rows: np.ndarray) -> np.ndarray:
    return rows - operator_a_rows(m, rows)


def gradient_h(m: EnergyModel, u: Field) -> Field:
    return Field(m.grid, gradient_rows(m, u.values))


def residual(m: EnergyModel, u: Field) -> float:
    """‖u − A(u)‖_H"""
    return float(norm_h_rows(m.grid, gradient_rows(m, u.values)))


def derivative(m: EnergyModel, u: Field, phi: Field) -> float:
    """I_h'(u)φ = h^d[(L_h u)·φ − f(u)·φ]，不经过 Poisson 求解"""
    u.same_grid(phi)
    lu = laplacian_rows(m.grid, u.values)
    fu = nonlinearity_rows(m, u.values)
    return float(m.grid.cell_volume * np.dot(lu - fu, phi.values))


def lemma_a_identity(m: EnergyModel, u: Field) -> Tuple[float, float]:
    """返回 (I'(u)(u − A(u)), ‖u − A(u)‖²_H)，两者应相等"""
    w = gradient_h(m, u)
    lhs = derivative(m, u, w)
    rhs = float(inner_h_rows(m.grid, w.values, w.values))
    return lhs, rhs


def ray_energy(m: EnergyModel, direction: Field, t: np.ndarray) -> np.ndarray:
    """射线上的能量 I_h(t·v)，t 可为数组"""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return energy_rows(m, np.outer(t, direction.values))


def ray_maximum(m: EnergyModel, direction: Field) -> Tuple[float, float]:
    """
    沿射线 t ↦ I_h(t v) 的最大点与最大值

    对满足 AR 条件的 f，φ(t) = I'(tv)v/t 在 t>0 上由正变负且只变号一次，
    用倍增 + 二分求根。
    """
    v = direction.values
    h_sq = float(inner_h_rows(m.grid, v, v))
    if h_sq <= 0:
        raise ValueError("direction must be non-zero")

    def slope(t: float) -> float:
        with np.errstate(over="ignore", invalid="ignore"):
            return h_sq * t - m.grid.cell_volume * float(np.dot(m.nl.f(t * v), v))

    lo, hi = 0.0, 1.0
    while slope(hi) > 0:
        lo, hi = hi, hi * 2
        if hi > 1e12:
            raise EnergyOverflowError("ray energy has no maximum below 1e12")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if slope(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    t_star = 0.5 * (lo + hi)
    return t_star, float(ray_energy(m, direction, t_star)[0])

"""
独立参照解（与路径 / 曲面求解器不共享任何迭代逻辑）

- nehari_oracle：J(w) = max_t I(t·w) 在 Nehari 集上的 H 梯度下降，多起点取最低能级
- shooting_oracle：一维打靶法，u(0)=0, u'(0)=s，调 s 使第一个零点落在 1/k，
  得到 k−1 个内部零点的解及其连续能量
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .energy import energy_rows, gradient_rows, ray_maximum, residual
from .errors import SolverError
from .grid_core import inner_h_rows, random_rows
from .models import EnergyModel, Field, Nonlinearity

logger = logging.getLogger(__name__)


@dataclass
class OracleResult:
    level: float
    field: Optional[Field]
    residual: float
    iterations: int


def nehari_project(m: EnergyModel, w: np.ndarray) -> np.ndarray:
    """沿射线缩放到 Nehari 集（I'(t w) w = 0 的正根）"""
    t_star, _ = ray_maximum(m, Field(m.grid, w))
    return t_star * w


def nehari_oracle(m: EnergyModel, restarts: int = 4, seed: int = 0, tol: float = 1e-8,
                  step: float = 0.5, max_iter: int = 20_000) -> OracleResult:
    """
    基态能级：在 Nehari 集上做 w ← N(w − σ(w − A(w)))，σ 按 Armijo 回退

    起点为非负随机场，σ ≤ 1 时 (1−σ)w + σA(w) 保持非负。
    """
    grid = m.grid
    rng = np.random.default_rng(seed)
    best: Optional[OracleResult] = None
    for start in range(restarts):
        w = np.abs(random_rows(grid, rng, 1)[0])
        w = nehari_project(m, w)
        level = float(energy_rows(m, w)[0])
        it = 0
        for it in range(1, max_iter + 1):
            g = gradient_rows(m, w)
            g2 = float(inner_h_rows(grid, g, g))
            if np.sqrt(g2) <= tol:
                break
            sigma = step
            while sigma > 1e-12:
                cand = nehari_project(m, w - sigma * g)
                cand_level = float(energy_rows(m, cand)[0])
                if cand_level <= level - 0.25 * sigma * g2 + 1e-14 * (1 + abs(level)):
                    break
                sigma *= 0.5
            else:
                break
            w, level = cand, cand_level
        res = residual(m, Field(grid, w))
        logger.debug("Nehari 起点 %d：能级 %.12g，残差 %.3e，%d 步", start, level, res, it)
        if best is None or level < best.level:
            best = OracleResult(level=level, field=Field(grid, w), residual=res, iterations=it)
    logger.info("✓ Nehari 参照解：能级 %.12g，残差 %.3e", best.level, best.residual)
    return best


def _first_zero(nl: Nonlinearity, slope: float, horizon: float):
    """积分 u'' = −f(u)，u(0)=0, u'(0)=slope，直到 u 第一次下穿 0"""
    def rhs(_, y):
        u, v, _e = y
        return [v, -float(nl.f(np.array(u))), 0.5 * v * v - float(nl.F(np.array(u)))]

    def crossing(_, y):
        return y[0]
    crossing.terminal = True
    crossing.direction = -1

    sol = solve_ivp(rhs, (0.0, horizon), [0.0, slope, 0.0], events=crossing,
                    rtol=1e-12, atol=1e-14, dense_output=True)
    if sol.t_events[0].size == 0:
        return None
    t_zero = float(sol.t_events[0][0])
    return t_zero, float(sol.sol(t_zero)[2])


def _find_slope(nl: Nonlinearity, piece: float) -> float:
    """brentq 求 u'(0) = s 使第一个零点 T(s) = piece；超线性 f 下 T(s) 单调递减"""
    horizon = 100.0 * piece

    def mismatch(s):
        hit = _first_zero(nl, s, horizon)
        return (horizon if hit is None else hit[0]) - piece

    lo, hi = 1.0, 1.0
    while mismatch(lo) <= 0:
        lo /= 2
        if lo < 1e-8:
            raise SolverError("no slope gives a long enough first hump")
    while mismatch(hi) >= 0:
        hi *= 2
        if hi > 1e8:
            raise SolverError("no slope gives a short enough first hump")
    return brentq(mismatch, lo, hi, xtol=1e-14, rtol=1e-14, maxiter=200)


def shooting_oracle(nl: Nonlinearity, pieces: int = 1, length: float = 1.0) -> OracleResult:
    """
    −u'' = f(u) 在 [0, length] 上、恰好 pieces−1 个内部零点的解的连续能量

    奇的 f 下各段互为反射，能量 = pieces × 单段能量（单段长度 length/pieces）。
    """
    if pieces < 1:
        raise ValueError("pieces: must be ≥ 1")
    piece = length / pieces
    slope = _find_slope(nl, piece)
    _, piece_energy = _first_zero(nl, slope, 100.0 * piece)
    level = pieces * piece_energy
    logger.info("✓ 打靶参照解：%d 段，u'(0)=%.12g，能量 %.12g", pieces, slope, level)
    return OracleResult(level=level, field=None, residual=0.0, iterations=0)


def shooting_profile(nl: Nonlinearity, x: np.ndarray, pieces: int = 1,
                     length: float = 1.0) -> np.ndarray:
    """打靶解在坐标 x 上的取值，第 k 段为第一段的 (−1)^k 平移"""
    piece = length / pieces
    slope = _find_slope(nl, piece)

    def rhs(_, y):
        return [y[1], -float(nl.f(np.array(y[0])))]

    sol = solve_ivp(rhs, (0.0, piece), [0.0, slope], rtol=1e-12, atol=1e-14, dense_output=True)
    k = np.minimum((x // piece).astype(int), pieces - 1)
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    return sign * sol.sol(x - k * piece)[0]

"""
正负锥 P^± 及其邻域

到锥的距离有两种算法：
- surrogate：d(u, P⁺) ≤ ‖u⁻‖_H，d(u, P⁻) ≤ ‖u⁺‖_H（上界，O(n^d)）
- exact：H 范数下的投影（障碍问题），加速投影梯度，仅用于中小网格

W_ε = P⁺_ε ∪ P⁻_ε 是闭集：距离 == ε 算在 W 中。
"""

import logging
from typing import Optional, Tuple

import numpy as np

from .energy import operator_a_rows
from .errors import ConeProjectionError, SamplingError
from .grid_core import laplacian_rows, norm_h_rows, random_rows
from .models import ConeParams, EnergyModel, Field, Grid, ProbeReport

logger = logging.getLogger(__name__)

# exact 模式允许的最大网格
EXACT_MAX_SIZE = 64 ** 2
PROBE_HALF = 0.5


def positive_part(u: Field) -> Field:
    return Field(u.grid, np.maximum(u.values, 0.0))


def negative_part(u: Field) -> Field:
    """u⁻ = min(u, 0)，取值非正"""
    return Field(u.grid, np.minimum(u.values, 0.0))


def surrogate_distance_rows(grid: Grid, rows: np.ndarray, sign: str) -> np.ndarray:
    """逐行代理距离：到 P⁺ 用 ‖u⁻‖_H，到 P⁻ 用 ‖u⁺‖_H"""
    if sign == "plus":
        return norm_h_rows(grid, np.minimum(rows, 0.0))
    if sign == "minus":
        return norm_h_rows(grid, np.maximum(rows, 0.0))
    raise ValueError(f"sign: must be plus or minus, got {sign}")


def exact_cone_distance(u: Field, sign: str, tol: float = 1e-10,
                        max_iter: int = 50_000) -> float:
    """
    H 范数下到 P^± 的距离：min_{w≥0} ½‖w − u‖²_H（P⁻ 时对 −u 求解）

    带重启的 FISTA，步长 1/λ_max；保留最优迭代，返回值不超过代理距离。
    """
    grid = u.grid
    if grid.size > EXACT_MAX_SIZE:
        raise ValueError("exact cone distance supports at most 64^2 nodes")
    if sign not in ("plus", "minus"):
        raise ValueError(f"sign: must be plus or minus, got {sign}")
    target = u.values if sign == "plus" else -u.values
    surrogate = float(norm_h_rows(grid, np.minimum(target, 0.0)))
    if surrogate == 0.0:
        return 0.0

    vol = grid.cell_volume
    lip = vol * 4.0 * grid.dimension / grid.h ** 2
    step = 1.0 / lip

    def grad(w):
        return vol * laplacian_rows(grid, w - target)

    def phi(w):
        d = w - target
        return 0.5 * vol * float(np.dot(d, laplacian_rows(grid, d)))

    w = np.maximum(target, 0.0)
    y = w.copy()
    t = 1.0
    phi_w = phi(w)
    best_phi = phi_w
    scale = max(1.0, float(np.linalg.norm(grad(w))))

    for it in range(max_iter):
        w_new = np.maximum(y - step * grad(y), 0.0)
        phi_new = phi(w_new)
        if phi_new > phi_w:
            # 目标上升则重启动量
            y = w.copy()
            t = 1.0
            continue
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = w_new + ((t - 1.0) / t_new) * (w_new - w)
        w, phi_w, t = w_new, phi_new, t_new
        best_phi = min(best_phi, phi_w)
        if it % 10 == 0:
            mapping = lip * (w - np.maximum(w - step * grad(w), 0.0))
            if np.linalg.norm(mapping) <= tol * scale:
                break
    else:
        raise ConeProjectionError(
            f"cone projection did not converge in {max_iter} iterations"
        )

    return min(float(np.sqrt(max(2.0 * best_phi, 0.0))), surrogate)


def cone_distance(u: Field, sign: str, cp: ConeParams) -> float:
    if cp.distance_mode == "exact":
        return exact_cone_distance(u, sign)
    return float(surrogate_distance_rows(u.grid, u.values, sign))


def cone_distance_rows(grid: Grid, rows: np.ndarray, sign: str,
                       cp: ConeParams) -> np.ndarray:
    if cp.distance_mode == "exact":
        return np.array([exact_cone_distance(Field(grid, r), sign) for r in rows])
    return surrogate_distance_rows(grid, rows, sign)


def in_w_rows(grid: Grid, rows: np.ndarray, cp: ConeParams,
              eps: Optional[float] = None) -> np.ndarray:
    """逐行判断是否属于 W_ε（默认 ε = ε₂）"""
    eps = cp.eps2 if eps is None else eps
    plus = cone_distance_rows(grid, rows, "plus", cp) <= eps
    minus = cone_distance_rows(grid, rows, "minus", cp) <= eps
    return plus | minus


def in_w(u: Field, cp: ConeParams, eps: Optional[float] = None) -> bool:
    return bool(in_w_rows(u.grid, u.values[None, :], cp, eps)[0])


# ============ 锥收缩性探测 ============

def _probe_sample(grid: Grid, rng: np.random.Generator, eps: float,
                  norm_range: Tuple[float, float] = (0.1, 2.0)) -> np.ndarray:
    """
    构造 ‖u⁺‖_H ∈ (0, ε] 的样本：u = w + δv，w ≤ 0

    δ 由介值定理二分得到，使 ‖(w + δv)⁺‖_H 等于目标值。
    """
    for _ in range(20):
        z = random_rows(grid, rng, 1)[0]
        w = -np.abs(z)
        w *= rng.uniform(*norm_range) / norm_h_rows(grid, w)
        v = random_rows(grid, rng, 1)[0]
        v /= norm_h_rows(grid, v)
        target = eps * rng.uniform(0.05, 1.0)

        def dist(delta):
            return float(norm_h_rows(grid, np.maximum(w + delta * v, 0.0)))

        lo, hi = 0.0, target
        for _ in range(80):
            if dist(hi) >= target:
                break
            lo, hi = hi, hi * 2
        else:
            continue
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            d_mid = dist(mid)
            if abs(d_mid - target) <= 1e-3 * target:
                lo = hi = mid
                break
            if d_mid < target:
                lo = mid
            else:
                hi = mid
        return w + hi * v
    raise SamplingError(f"no sample with 0 < ‖u⁺‖_H ≤ {eps:g} after 20 attempts")


def cone_sample_rows(grid: Grid, count: int, seed: int, eps: float, sign: str = "minus",
                     norm_range: Tuple[float, float] = (0.1, 2.0)) -> np.ndarray:
    """P̄^±_ε 中的样本，第 i 个样本只依赖 (seed, i)"""
    rows = np.array([
        _probe_sample(grid, np.random.default_rng([seed, i]), eps, norm_range)
        for i in range(count)
    ]).reshape(-1, grid.size)
    return rows if sign == "minus" else -rows


def _probe_ratios(m: EnergyModel, samples: int, seed: int, eps: float):
    grid = m.grid
    rows = cone_sample_rows(grid, samples, seed, eps)
    pos = norm_h_rows(grid, np.maximum(rows, 0.0))
    a_pos = norm_h_rows(grid, np.maximum(operator_a_rows(m, rows), 0.0))
    ratios = np.where(pos > 0, a_pos / np.where(pos > 0, pos, 1.0), 0.0)
    return ratios, a_pos


def _empirical_eps0(m: EnergyModel, samples: int, seed: int) -> float:
    """最大的 ε 使得 max ratio ≤ ½：对数网格 [1e-4, 1e2] 扫描后二分细化"""
    def max_ratio(eps):
        return float(np.max(_probe_ratios(m, samples, seed, eps)[0]))

    exponents = np.linspace(-4.0, 2.0, 25)
    good = None
    bad = None
    for e in exponents:
        if max_ratio(10.0 ** e) <= PROBE_HALF:
            good = e
        else:
            bad = e
            break
    if good is None:
        return 0.0
    if bad is None:
        return 10.0 ** good
    for _ in range(10):
        mid = 0.5 * (good + bad)
        if max_ratio(10.0 ** mid) <= PROBE_HALF:
            good = mid
        else:
            bad = mid
    return float(10.0 ** good)


def contraction_probe(m: EnergyModel, cp: ConeParams, samples: int = 100,
                      seed: int = 7, eps: Optional[float] = None) -> ProbeReport:
    """
    抽样检查 ‖A(u)⁺‖_H ≤ ½‖u⁺‖_H（u ∈ P⁻_ε），并估计经验 ε₀

    P⁺ 一侧由 f 的奇对称性得到，不单独抽样。
    """
    if samples < 50:
        raise ValueError("samples: must be ≥ 50")
    eps = cp.eps if eps is None else float(eps)
    ratios, a_pos = _probe_ratios(m, samples, seed, eps)
    eps0 = _empirical_eps0(m, samples, seed)
    report = ProbeReport(
        eps=eps,
        samples=samples,
        seed=seed,
        max_ratio=float(np.max(ratios)),
        eps0_empirical=eps0,
        invariance_ok=bool(np.all(a_pos <= eps)),
        above_eps0=eps > eps0,
    )
    if report.above_eps0:
        logger.warning("❌ ε = %g 超过经验 ε₀ = %.4g，收缩比 %.4g",
                       eps, eps0, report.max_ratio)
    else:
        logger.info("✓ 锥收缩：max ratio = %.4g（ε = %g, ε₀ ≈ %.4g）",
                    report.max_ratio, eps, eps0)
    return report

"""
下降流模块

- descent_step / integrate_flow：沿 −(u − A(u)) 的显式 Euler + Armijo 回退
- cutoff_g：能量带与已知临界点邻域上的 Lipschitz 截断函数
- deformation_eta：归一化形变流 η(t,u)，时间尺度 16ε/β·t
- pseudo_gradient：伪梯度 B（离散模型中取 B ≡ A）
- newton_polish：残差足够小后用阻尼 Newton 收尾
"""

import logging
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .cones import cone_distance_rows, in_w_rows
from .energy import (energy, energy_rows, gradient_rows, nonlinearity_rows,
                        operator_a, ray_maximum, residual)
from .errors import EnergyOverflowError, NonFiniteFieldError
from .grid_core import (inner_h_rows, laplacian_matrix, laplacian_rows,
                           norm_h_rows, random_rows)
from .models import (ConeParams, CutoffSpec, EnergyModel, EtaResult, Field,
                        FlowParams, FlowResult, StepOutcome, TraceRow)

logger = logging.getLogger(__name__)

# 发散判据 ‖u‖_H > DIVERGENCE_NORM
DIVERGENCE_NORM = 1e6
# 回退的最小步长
MIN_STEP = 1e-12
# β 的下限
BETA_FLOOR = 1e-6


def _slack(values: np.ndarray) -> np.ndarray:
    # 能量比较的舍入余量
    return 1e-14 * (1.0 + np.abs(values))


def descent_step_rows(m: EnergyModel, rows: np.ndarray, dt: float, backtrack: float = 0.5,
                      energies: Optional[np.ndarray] = None,
                      grads: Optional[np.ndarray] = None):
    """
    逐行执行一步下降 u' = u − dt·(u − A(u))

    步长按 backtrack 因子缩小，直到 I(u') ≤ I(u) − (dt/4)·‖u − A(u)‖²_H；
    缩到 MIN_STEP 以下的行保持不变并标记停滞。

    返回 (新行, 接受的步长, 停滞标记, 新能量)
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    e0 = energy_rows(m, rows) if energies is None else np.asarray(energies, dtype=float)
    g = gradient_rows(m, rows) if grads is None else grads
    g2 = inner_h_rows(m.grid, g, g)

    count = rows.shape[0]
    out = rows.copy()
    new_e = e0.copy()
    steps = np.full(count, float(dt))
    accepted = np.zeros(count)
    stagnated = np.zeros(count, dtype=bool)
    pending = g2 > 0

    while np.any(pending):
        idx = np.flatnonzero(pending)
        cand = rows[idx] - steps[idx, None] * g[idx]
        e_cand = energy_rows(m, cand, strict=False)
        ok = e_cand <= e0[idx] - 0.25 * steps[idx] * g2[idx] + _slack(e0[idx])
        good = idx[ok]
        out[good] = cand[ok]
        new_e[good] = e_cand[ok]
        accepted[good] = steps[good]
        pending[good] = False

        bad = idx[~ok]
        steps[bad] *= backtrack
        tiny = bad[steps[bad] < MIN_STEP]
        stagnated[tiny] = True
        pending[tiny] = False

    return out, accepted, stagnated, new_e


def descent_step(m: EnergyModel, u: Field, fp: FlowParams,
                 dt: Optional[float] = None) -> StepOutcome:
    step = fp.dt if dt is None else dt
    if not 0.0 < step <= 1.0:
        raise ValueError("dt: must be in (0, 1]")
    out, accepted, stagnated, _ = descent_step_rows(m, u.values[None, :], step, fp.backtrack)
    return StepOutcome(field=Field(m.grid, out[0]), dt=float(accepted[0]),
                       stagnated=bool(stagnated[0]))


def integrate_flow(m: EnergyModel, u0: Field, fp: FlowParams) -> FlowResult:
    """反复 descent_step 直到残差 ≤ residual_tol；发散、停滞、预算耗尽作为状态返回"""
    u = u0.values.copy()
    trace = []
    dt_used = 0.0
    status = "budget"
    step = 0
    for step in range(fp.max_steps + 1):
        try:
            e = energy_rows(m, u[None, :])
            g = gradient_rows(m, u[None, :])
        except (EnergyOverflowError, NonFiniteFieldError):
            status = "diverged"
            break
        r = float(norm_h_rows(m.grid, g)[0])
        trace.append(TraceRow(step=step, energy=float(e[0]), residual=r, dt=dt_used))
        if r <= fp.residual_tol:
            status = "converged"
            break
        if step == fp.max_steps:
            break
        out, accepted, stagnated, _ = descent_step_rows(m, u[None, :], fp.dt, fp.backtrack,
                                                        energies=e, grads=g)
        if stagnated[0]:
            status = "stagnated"
            break
        u = out[0]
        dt_used = float(accepted[0])
        if float(norm_h_rows(m.grid, u)) > DIVERGENCE_NORM:
            status = "diverged"
            break
        if step % 1000 == 0 and step:
            logger.debug("下降流 第 %d 步: I=%.10g, 残差=%.3e", step, e[0], r)

    if status == "converged":
        logger.info("✓ 下降流收敛：%d 步，残差 %.3e", step, trace[-1].residual)
    else:
        logger.warning("❌ 下降流终止：%s（%d 步）", status, step)
    if not np.all(np.isfinite(u)):
        u = u0.values.copy()
    return FlowResult(field=Field(m.grid, u), status=status, steps=step, trace=trace)


# ============ 截断函数 ============

def _energy_ramp(value: float, cs: CutoffSpec) -> float:
    gap = abs(value - cs.c)
    if gap <= cs.eps:
        return 1.0
    if gap >= cs.eps_prime:
        return 0.0
    return (cs.eps_prime - gap) / (cs.eps_prime - cs.eps)


def _distance_ramp(u: Field, cs: CutoffSpec) -> float:
    if not cs.known_critical:
        return 1.0
    rows = np.array([u.values - z.values for z in cs.known_critical])
    dist = float(np.min(norm_h_rows(u.grid, rows)))
    quarter = cs.delta / 4
    return float(np.clip((dist - quarter) / quarter, 0.0, 1.0))


def cutoff_g(m: EnergyModel, u: Field, cs: CutoffSpec) -> float:
    """g(u) = 能量带斜坡 × 到 K_c 距离斜坡，取值 [0,1]"""
    psi = _energy_ramp(energy(m, u), cs)
    if psi == 0.0:
        return 0.0
    return psi * _distance_ramp(u, cs)


def cutoff_lipschitz(cs: CutoffSpec) -> float:
    """|g(u) − g(v)| ≤ K·(|I(u) − I(v)| + ‖u − v‖_H) 中的 K"""
    return max(1.0 / (cs.eps_prime - cs.eps), 4.0 / cs.delta)


def _freeze_ramp(u: Field, cp: ConeParams) -> float:
    """在 W_{ε₁} 上为 0，W_{ε₂} 之外为 1"""
    rows = u.values[None, :]
    dmin = min(float(cone_distance_rows(u.grid, rows, "plus", cp)[0]),
               float(cone_distance_rows(u.grid, rows, "minus", cp)[0]))
    return float(np.clip((dmin - cp.eps1) / (cp.eps2 - cp.eps1), 0.0, 1.0))


# ============ 残差下界 β ============

def band_samples(m: EnergyModel, cs: CutoffSpec, cp: ConeParams, count: int,
                 seed: int = 0, exclude_eps: Optional[float] = None,
                 low: Optional[float] = None, high: Optional[float] = None) -> np.ndarray:
    """
    在能量带 [low, high]（默认 [c−ε′, c+ε′]）中、W_{exclude_eps} 之外取样

    随机方向沿射线缩放到目标能级（射线上升段二分）。
    """
    low = cs.c - cs.eps_prime if low is None else low
    high = cs.c + cs.eps_prime if high is None else high
    exclude_eps = cp.eps1 if exclude_eps is None else exclude_eps
    rng = np.random.default_rng(seed)
    rows = []
    attempts = 0
    while len(rows) < count and attempts < 50 * count:
        attempts += 1
        v = random_rows(m.grid, rng, 1)[0]
        v /= norm_h_rows(m.grid, v)
        target = rng.uniform(low, high)
        direction = Field(m.grid, v)
        t_star, top = ray_maximum(m, direction)
        if top < target or target <= 0:
            continue
        lo, hi = 0.0, t_star
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if energy_rows(m, mid * v)[0] < target:
                lo = mid
            else:
                hi = mid
        candidate = hi * v
        if in_w_rows(m.grid, candidate[None, :], cp, exclude_eps)[0]:
            continue
        rows.append(candidate)
    return np.array(rows).reshape(-1, m.grid.size)


def estimate_beta(m: EnergyModel, cs: CutoffSpec, cp: ConeParams, samples: int = 200,
                  seed: int = 0) -> float:
    """能量带内、W_{ε₁} 之外样本残差的最小值（下限 BETA_FLOOR）"""
    rows = band_samples(m, cs, cp, samples, seed)
    if rows.shape[0] == 0:
        logger.warning("❌ 能量带内没有采到 W_{ε₁} 之外的样本，β 取下限 %g", BETA_FLOOR)
        return BETA_FLOOR
    res = norm_h_rows(m.grid, gradient_rows(m, rows))
    beta = max(float(np.min(res)), BETA_FLOOR)
    logger.info("β 估计：%d 个样本，最小残差 %.4g", rows.shape[0], beta)
    return beta


# ============ 形变流 ============

def deformation_eta(m: EnergyModel, u: Field, cs: CutoffSpec, cp: ConeParams, t: float,
                    variant: str = "mapping", beta: Optional[float] = None,
                    max_substeps: int = 20_000, max_horizon: float = 1e4) -> EtaResult:
    """
    η(t,u) = τ(16ε/β·t, u)，dτ/ds = −g(τ)·V(τ)，V = (τ − A(τ))/‖τ − A(τ)‖

    variant="mapping2" 时 g 再乘以在 W_{ε₁} 上为零的斜坡。
    子步长 hs ≤ ‖τ − A(τ)‖/g，使每个子步都是 τ 与 A(τ) 的凸组合；
    能量上升则子步减半，减到下限以下返回 partial。
    时间尺度超过 max_horizon 时改为积分到能量 ≤ c−ε 或预算耗尽。
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError("t: must be in [0, 1]")
    if variant not in ("mapping", "mapping2"):
        raise ValueError(f"variant: must be mapping or mapping2, got {variant}")
    if t == 0.0:
        return EtaResult(field=u.copy(), status="complete", time=0.0, horizon=0.0, substeps=0)

    beta = estimate_beta(m, cs, cp) if beta is None else beta
    horizon = 16.0 * cs.eps / beta * t
    fallback = horizon > max_horizon
    target_level = cs.c - cs.eps

    def weight(field: Field) -> float:
        g = cutoff_g(m, field, cs)
        if g > 0.0 and variant == "mapping2":
            g *= _freeze_ramp(field, cp)
        return g

    tau = u.copy()
    tau_energy = energy(m, tau)
    time = 0.0
    substeps = 0
    status = "complete"
    h_max = min(horizon, max_horizon) / 64

    while time < horizon:
        if fallback and tau_energy <= target_level:
            status = "target"
            break
        if substeps >= max_substeps:
            status = "partial"
            break
        g = weight(tau)
        if g == 0.0:
            status = "frozen"
            break
        grad = gradient_rows(m, tau.values[None, :])[0]
        r = float(norm_h_rows(m.grid, grad))
        if r == 0.0:
            status = "frozen"
            break
        hs = min(h_max, horizon - time, r / g)
        while True:
            cand = tau.values - (hs * g / r) * grad
            e_cand = float(energy_rows(m, cand, strict=False)[0])
            if e_cand <= tau_energy + float(_slack(np.array(tau_energy))):
                break
            hs *= 0.5
            if hs < MIN_STEP * max(horizon, 1.0):
                status = "partial"
                break
        if status == "partial":
            break
        tau = Field(m.grid, cand)
        tau_energy = e_cand
        time += hs
        substeps += 1

    if status == "frozen":
        # g = 0 之后不再运动，η 在剩余时间内保持不变
        time = horizon
    logger.debug("η: t=%.3g, 状态=%s, 子步=%d, I: %.6g → %.6g",
                 t, status, substeps, energy(m, u), tau_energy)
    return EtaResult(field=tau, status=status, time=time, horizon=horizon, substeps=substeps)


# ============ 伪梯度 ============

def pseudo_gradient(m: EnergyModel, u: Field,
                    b: Optional[Callable[[EnergyModel, Field], Field]] = None) -> Field:
    """B(u)；默认 B ≡ A，可传入替代映射做实验"""
    return operator_a(m, u) if b is None else b(m, u)


def check_pseudo_gradient(m: EnergyModel, u: Field, cp: ConeParams,
                          b: Optional[Callable[[EnergyModel, Field], Field]] = None
                          ) -> Dict[str, Tuple[float, bool]]:
    """
    检查伪梯度的三条性质，返回 {条款: (度量值, 是否通过)}

    - cone：u ∈ P̄_ε^± ⇒ B(u) ∈ P̄_ε^±（u 不在锥邻域时记为通过）
    - norm_equivalence：½‖u−B‖ ≤ ‖u−A‖ ≤ 2‖u−B‖
    - descent：I'(u)(u−B(u)) ≥ ½‖u−A(u)‖²
    """
    grid = m.grid
    bu = pseudo_gradient(m, u, b)
    au = operator_a(m, u)
    diff_b = u.values - bu.values
    diff_a = u.values - au.values
    nb = float(norm_h_rows(grid, diff_b))
    na = float(norm_h_rows(grid, diff_a))
    tol = 1e-10 * (1.0 + na)

    result: Dict[str, Tuple[float, bool]] = {}
    cone_ok = True
    worst = 0.0
    for sign in ("plus", "minus"):
        d_u = float(cone_distance_rows(grid, u.values[None, :], sign, cp)[0])
        if d_u <= cp.eps:
            d_b = float(cone_distance_rows(grid, bu.values[None, :], sign, cp)[0])
            worst = max(worst, d_b)
            cone_ok = cone_ok and d_b <= cp.eps
    result["cone"] = (worst, cone_ok)

    ratio = na / nb if nb > 0 else (1.0 if na == 0 else float("inf"))
    result["norm_equivalence"] = (ratio, 0.5 * nb <= na + tol and na <= 2 * nb + tol)

    # I'(u)φ 直接由 L_h u − f(u) 计算
    lu = laplacian_rows(grid, u.values)
    descent = float(grid.cell_volume * np.dot(lu - nonlinearity_rows(m, u.values), diff_b))
    result["descent"] = (descent, descent >= 0.5 * na * na - tol)
    return result


# ============ Newton 收尾 ============

def newton_polish(m: EnergyModel, u: Field, tol: float,
                  max_iter: int = 30) -> Tuple[Field, bool, int]:
    """
    阻尼 Newton：解 (L_h − diag f'(u)) δ = −(L_h u − f(u))，
    步长减半直到节点残差下降；H 残差 ≤ tol 即停止。

    返回 (场, 是否达到容差, 迭代次数)
    """
    if m.nl.df is None:
        return u.copy(), residual(m, u) <= tol, 0
    grid = m.grid
    L = laplacian_matrix(grid)
    x = u.values.copy()

    def nodal(vals):
        return laplacian_rows(grid, vals) - nonlinearity_rows(m, vals)

    iterations = 0
    for it in range(max_iter):
        if residual(m, Field(grid, x)) <= tol:
            return Field(grid, x), True, it
        iterations = it + 1
        fx = nodal(x)
        jac = (L - sp.diags(m.nl.df(x))).tocsc()
        delta = spsolve(jac, -fx)
        if not np.all(np.isfinite(delta)):
            break
        base = float(np.linalg.norm(fx))
        lam = 1.0
        accepted = False
        while lam >= 1.0 / 1024:
            cand = x + lam * delta
            try:
                if float(np.linalg.norm(nodal(cand))) <= (1 - 1e-4 * lam) * base:
                    accepted = True
                    break
            except EnergyOverflowError:
                pass
            lam *= 0.5
        if not accepted:
            break
        x = cand
        logger.debug("Newton 第 %d 步: λ=%.3g, 节点残差 %.3e", it + 1, lam, base)

    final = Field(grid, x)
    return final, residual(m, final) <= tol, iterations

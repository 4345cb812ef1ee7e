"""
极小极大求解器

- mountain_pass：锥内字符串法（正 / 负解），最高节点后期改为爬升更新
- sign_changing_solve：半圆盘（或四分之一圆盘）曲面的形变，最高顶点用节点 Nehari 缩放
- verify_linking：∂B_ρ 与曲面的交点中寻找 W 之外的见证点
- choose_r / estimate_alpha_rho / disjoint_bumps：构造所需的半径、能级与基函数

核心逻辑：
1. 初始路径 / 曲面由 e₁、e₂（或不相交支撑的 α₁、α₂）线性张成，端点与边界固定
2. 每次扫描对自由节点做一步下降，再施加变体要求的投影
3. 路径按 H 弧长重新参数化；曲面在最高顶点附近必要时局部加密
4. 最高点残差足够小后可用 Newton 收尾，能级在 50 次扫描内稳定即结束
"""

import logging
from collections import deque
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import Delaunay

from .cones import in_w_rows
from .energy import energy, energy_rows, gradient_rows, residual
from .errors import LinkingError, SolverError, SurfaceSwallowedError
from .flow import MIN_STEP, _slack, descent_step_rows, newton_polish
from .grid_core import eigenpairs, inner_h_rows, norm_h_rows, random_rows
from .models import (ConeParams, CriticalPointReport, EnergyModel, Field, FlowParams,
                        Grid, Path, Surface, SweepRow)

logger = logging.getLogger(__name__)

VARIANTS = ("gamma_s", "gamma_s_prime", "gamma_s_doubleprime")
# 能级稳定窗口（扫描数）与容差
STABLE_WINDOW = 50
STABLE_TOL = 1e-10
# 字符串法转入爬升阶段的判据
CLIMB_WINDOW = 20
CLIMB_TOL = 1e-8
# Newton 收尾
POLISH_SWITCH = 1e-4
POLISH_LEVEL_DRIFT = 0.05
POLISH_RETRY = 200
# 半径倍增上限
R_CAP = 2.0 ** 20
# 额外加密层数上限
REFINE_LEVELS = 2
# 只移动能级 ≥ BAND_FRACTION·当前最高能级的节点（截断形变只作用在能级带内）
BAND_FRACTION = 0.5
# 字符串扫描步长上限；下降阶段最高能级上升超过 SWEEP_RISE_TOL（相对）时拒绝该次扫描并缩小步长
STRING_DT = 0.1
SWEEP_RISE_TOL = 1e-12


def classify(u: Field) -> str:
    """按节点符号分类"""
    lo, hi = float(np.min(u.values)), float(np.max(u.values))
    if lo > 0:
        return "positive"
    if hi < 0:
        return "negative"
    if lo < 0 < hi:
        return "sign_changing"
    if lo == 0 and hi == 0:
        return "trivial"
    # 非负（非正）但有零节点
    return "weakly_signed"


def sign_changes(u: Field) -> np.ndarray:
    """一维场的变号位置（相邻节点线性插值的零点坐标）"""
    if u.grid.dimension != 1:
        raise ValueError("sign changes are only defined for d=1")
    x = u.grid.coordinates()[0]
    v = u.values
    idx = np.flatnonzero(v[:-1] * v[1:] < 0)
    zeros = [x[i] - v[i] * (x[i + 1] - x[i]) / (v[i + 1] - v[i]) for i in idx]
    # 恰好落在节点上的零点
    exact = [x[i] for i in range(1, len(v) - 1) if v[i] == 0 and v[i - 1] * v[i + 1] < 0]
    return np.sort(np.array(zeros + exact, dtype=float))


# ============ 半径与能级估计 ============

def choose_r(m: EnergyModel, direction: Field, second: Optional[Field] = None,
             arc_points: int = 64, quarter: bool = False) -> float:
    """
    R 从 1 开始倍增直到 I(R·v) < 0，再多倍增一次

    给出 second 时改为检查圆弧 R(cos θ·v + sin θ·second) 上的 arc_points 个点，
    θ ∈ [0, π]（quarter=True 时 [0, π/2]）。
    """
    if second is None:
        rows = direction.values[None, :]
    else:
        span = np.pi / 2 if quarter else np.pi
        theta = np.linspace(0.0, span, arc_points)
        rows = np.outer(np.cos(theta), direction.values) + np.outer(np.sin(theta), second.values)

    R = 1.0
    while True:
        values = energy_rows(m, R * rows, strict=False)
        if np.all(values < 0):
            break
        R *= 2
        if R > R_CAP:
            raise SolverError("R cap 2^20 exceeded: nonlinearity not superlinear on this grid")
    logger.debug("choose_r: I < 0 at R=%g, returning %g", R, 2 * R)
    return 2 * R


def estimate_alpha_rho(m: EnergyModel, samples: int = 500, seed: int = 0) -> Tuple[float, float]:
    """
    球面下界：bound(ρ) = ρ²/2 − max_k h^dΣF(ρ u_k)，u_k 为随机单位场

    odd_power 时 ΣF(ρu) = ρ^p ΣF(u)，bound(ρ) = ρ²/2 − C_emb ρ^p。
    返回 (ρ, α)，ρ 为对数网格上的最大点，α 为最大值的一半。
    """
    rng = np.random.default_rng(seed)
    rows = random_rows(m.grid, rng, samples)
    rows /= norm_h_rows(m.grid, rows)[:, None]
    vol = m.grid.cell_volume

    if m.nl.kind == "odd_power":
        c_emb = float(np.max(vol * np.sum(m.nl.F(rows), axis=1)))
        if c_emb <= 0:
            raise SolverError("embedding constant is not positive")
        rhos = np.geomspace(1e-4, 1e4, 1601)
        with np.errstate(over="ignore"):
            bound = rhos ** 2 / 2 - c_emb * rhos ** m.nl.p
    else:
        rhos = np.geomspace(1e-3, 1e3, 241)
        bound = np.empty_like(rhos)
        with np.errstate(over="ignore", invalid="ignore"):
            for i, rho in enumerate(rhos):
                bound[i] = rho ** 2 / 2 - float(np.max(vol * np.sum(m.nl.F(rho * rows), axis=1)))
    bound = np.where(np.isfinite(bound), bound, -np.inf)
    best = int(np.argmax(bound))
    rho, alpha = float(rhos[best]), float(bound[best]) / 2
    if not alpha > 0:
        raise SolverError("alpha ≤ 0: grid and nonlinearity are inconsistent")
    logger.info("球面下界：ρ = %.6g, α = %.6g", rho, alpha)
    return rho, alpha


def disjoint_bumps(grid: Grid) -> Tuple[Field, Field]:
    """左 40% 上的非负鼓包 α₁ 与右 40% 上的非正鼓包 α₂（二次帽函数的乘积），H 范数为 1"""
    if grid.n < 7:
        raise ValueError("n: must be ≥ 7 for disjoint bumps")
    coords = grid.coordinates()
    x = coords[0]
    left = np.clip(x * (0.4 - x), 0.0, None)
    right = np.clip((x - 0.6) * (1.0 - x), 0.0, None)
    if grid.dimension == 2:
        y = coords[1]
        left = left * y * (1.0 - y)
        right = right * y * (1.0 - y)
    a1 = left / norm_h_rows(grid, left)
    a2 = -right / norm_h_rows(grid, right)
    return Field(grid, a1), Field(grid, a2)


# ============ 山路（锥内字符串法） ============

def _band_members(energies: np.ndarray, top_level: float) -> np.ndarray:
    """能级不低于 BAND_FRACTION·最高能级的节点下标；带外节点不动"""
    threshold = BAND_FRACTION * top_level if top_level > 0 else -np.inf
    return np.flatnonzero(energies >= threshold)


def _project(rows: np.ndarray, sign: str) -> np.ndarray:
    return np.maximum(rows, 0.0) if sign == "plus" else np.minimum(rows, 0.0)


def reparametrize(grid: Grid, images: np.ndarray, keep: Optional[int] = None) -> np.ndarray:
    """
    按 H 弧长把节点重新均匀分布（线性插值），端点不动；
    keep 给出时该节点也不动，两侧分别均匀化。
    """
    K = images.shape[0]
    seg = norm_h_rows(grid, images[1:] - images[:-1])
    s = np.concatenate([[0.0], np.cumsum(seg)])
    out = images.copy()
    cuts = [0, K - 1] if keep is None else [0, keep, K - 1]
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        count = hi - lo
        if count < 2:
            continue
        targets = s[lo] + (s[hi] - s[lo]) * np.arange(1, count) / count
        j = np.clip(np.searchsorted(s, targets, side="right") - 1, lo, hi - 1)
        w = np.where(seg[j] > 0, (targets - s[j]) / np.where(seg[j] > 0, seg[j], 1.0), 0.0)
        out[lo + 1:hi] = images[j] + w[:, None] * (images[j + 1] - images[j])
    return out


def _try_polish(m: EnergyModel, row: np.ndarray, level: float, tol: float,
                expected: Optional[str]) -> Optional[np.ndarray]:
    """Newton 收尾；符号类别改变或能级偏离超过 5% 时拒绝"""
    cand, ok, its = newton_polish(m, Field(m.grid, row), tol)
    if not ok:
        logger.debug("Newton 收尾未达到容差（%d 次迭代）", its)
        return None
    new_level = energy(m, cand)
    cls = classify(cand)
    if expected is not None and cls != expected:
        logger.debug("Newton 收尾被拒绝：类别 %s ≠ %s", cls, expected)
        return None
    if abs(new_level - level) > POLISH_LEVEL_DRIFT * abs(level):
        logger.debug("Newton 收尾被拒绝：能级 %.6g 偏离 %.6g", new_level, level)
        return None
    return cand.values


def mountain_pass(m: EnergyModel, sign: str, fp: FlowParams, cp: ConeParams, K: int = 33,
                  max_sweeps: int = 20_000, polish: bool = True,
                  polish_switch: float = POLISH_SWITCH) -> CriticalPointReport:
    """
    c₊（sign="plus"）或 c₋（sign="minus"）的路径求解

    每次扫描：内部节点各做一步下降（爬升阶段的最高节点改为翻转切向分量的更新），
    取正（负）部投影，按 H 弧长重新参数化，找出最高节点。
    步长取 min(dt, STRING_DT)；下降阶段使最高能级上升的扫描被拒绝并减半步长，
    接受后步长按 backtrack 因子逐步恢复。
    最高节点残差 ≤ residual_tol 且最高能级在 50 次扫描内稳定到 1e-10 时结束。
    """
    if K < 17:
        raise ValueError("K: must be ≥ 17")
    if sign not in ("plus", "minus"):
        raise ValueError(f"sign: must be plus or minus, got {sign}")
    grid = m.grid
    name = "positive" if sign == "plus" else "negative"
    e1 = eigenpairs(grid, 1)[0][1]
    direction = e1 if sign == "plus" else -e1
    R = choose_r(m, direction)
    images = np.outer(np.linspace(0.0, 1.0, K) * R, direction.values)
    images[0] = 0.0
    images[-1] = R * direction.values
    start, end = images[0].copy(), images[-1].copy()
    energies = energy_rows(m, images)
    logger.info("🏔️ 山路求解 %s：d=%d n=%d, R=%g, K=%d", name, grid.dimension, grid.n, R, K)

    trace = []
    history = deque(maxlen=STABLE_WINDOW + 1)
    phase = "descent"
    polished = False
    last_polish = -POLISH_RETRY
    status = "budget"
    top = 1 + int(np.argmax(energies[1:-1]))
    level = float(energies[top])
    res = float("inf")
    sweep = 0
    cap = min(fp.dt, STRING_DT)
    step = cap
    rejected = 0

    for sweep in range(1, max_sweeps + 1):
        inner = images[1:-1]
        e_inner = energies[1:-1]
        climber = int(np.argmax(e_inner))
        movable = _band_members(e_inner, e_inner[climber])
        grads = gradient_rows(m, inner[movable])
        new_inner = inner.copy()
        new_inner[movable], _, _, _ = descent_step_rows(m, inner[movable], step, fp.backtrack,
                                                        e_inner[movable], grads)
        if phase == "climb":
            tangent = images[climber + 2] - images[climber]
            tangent = tangent / norm_h_rows(grid, tangent)
            g = grads[int(np.flatnonzero(movable == climber)[0])]
            flipped = g - 2.0 * float(inner_h_rows(grid, g, tangent)) * tangent
            new_inner[climber] = inner[climber] - step * flipped
        candidate = images.copy()
        candidate[1:-1] = _project(new_inner, sign)
        candidate = reparametrize(grid, candidate, keep=climber + 1 if phase == "climb" else None)
        candidate[0], candidate[-1] = start, end
        cand_energies = energy_rows(m, candidate)

        if phase == "descent" and (float(np.max(cand_energies[1:-1]))
                                   > level + SWEEP_RISE_TOL * (1 + abs(level))):
            # 最高能级上升：拒绝本次扫描并按 backtrack 缩小步长
            step *= fp.backtrack
            rejected += 1
            if step < MIN_STEP:
                status = "stagnated"
                logger.warning("❌ 字符串步长缩到 %.1e 以下仍无法降低最高能级", MIN_STEP)
                break
            continue
        images, energies = candidate, cand_energies
        step = min(cap, step / fp.backtrack)

        top = 1 + int(np.argmax(energies[1:-1]))
        level = float(energies[top])
        res = float(norm_h_rows(grid, gradient_rows(m, images[top])))

        if polish and fp.residual_tol < res <= polish_switch and sweep - last_polish >= POLISH_RETRY:
            last_polish = sweep
            cand = _try_polish(m, images[top], level, fp.residual_tol, name)
            if cand is not None:
                images[top] = cand
                energies[top] = energy_rows(m, cand)[0]
                level = float(energies[top])
                res = residual(m, Field(grid, cand))
                polished = True
                phase = "climb"
                logger.info("✓ Newton 收尾：第 %d 次扫描，残差 %.3e", sweep, res)

        trace.append(SweepRow(sweep=sweep, sup_level=level, maximizer_residual=res,
                              excluded_count=0, phase=phase))
        history.append(level)

        if level <= fp.residual_tol:
            status = "trivial"
            logger.warning("❌ 路径塌缩到平凡解（最高能级 %.3e）", level)
            break
        if phase == "descent" and len(trace) > CLIMB_WINDOW:
            if abs(level - trace[-1 - CLIMB_WINDOW].sup_level) <= CLIMB_TOL * (1 + abs(level)):
                phase = "climb"
                logger.debug("第 %d 次扫描转入爬升阶段，能级 %.10g", sweep, level)
        if (res <= fp.residual_tol and len(history) == history.maxlen
                and abs(history[-1] - history[0]) <= STABLE_TOL * (1 + abs(level))):
            status = "converged"
            break
        if sweep % 500 == 0:
            logger.info("扫描 %d：能级 %.10g，残差 %.3e（%s）", sweep, level, res, phase)

    field = Field(grid, images[top])
    cls = "trivial" if status == "trivial" else classify(field)
    if status == "converged":
        logger.info("✓ %s：能级 %.10g，残差 %.3e，%d 次扫描", name, level, res, sweep)
    else:
        logger.warning("❌ %s 未收敛：%s（能级 %.10g，残差 %.3e）", name, status, level, res)
    if rejected:
        logger.debug("%s：%d 次扫描因最高能级上升被拒绝", name, rejected)
    return CriticalPointReport(
        name=name, level=level, field=field, residual=res, classification=cls,
        iterations=sweep, status=status, polished=polished, trace=trace,
        path=Path(grid=grid, images=images, sign=sign, R=R),
    )


# ============ 节点 Nehari 缩放 ============

def nodal_rescale(m: EnergyModel, u: np.ndarray) -> Optional[np.ndarray]:
    """
    (s,t) = argmax I(s·u⁺ + t·u⁻)，返回 s·u⁺ + t·u⁻

    2×2 Newton，失败时改用 L-BFGS-B；u 只有一种符号时返回 None。
    """
    a = np.maximum(u, 0.0)
    b = np.minimum(u, 0.0)
    if not (np.any(a) and np.any(b)):
        return None
    grid = m.grid
    vol = grid.cell_volume
    A = float(inner_h_rows(grid, a, a))
    B = float(inner_h_rows(grid, b, b))
    C = float(inner_h_rows(grid, a, b))
    F, f, df = m.nl.F, m.nl.f, m.nl.df

    def phi(st):
        s, t = st
        return 0.5 * (s * s * A + 2 * s * t * C + t * t * B) \
            - vol * float(np.sum(F(s * a))) - vol * float(np.sum(F(t * b)))

    def grad(st):
        s, t = st
        return np.array([s * A + t * C - vol * float(np.dot(f(s * a), a)),
                         t * B + s * C - vol * float(np.dot(f(t * b), b))])

    st = np.array([1.0, 1.0])
    scale = max(A, B, 1.0)
    converged = False
    if df is not None:
        for _ in range(100):
            g = grad(st)
            if np.linalg.norm(g) <= 1e-13 * scale * max(st.max(), 1.0):
                converged = True
                break
            s, t = st
            hess = np.array([[A - vol * float(np.dot(df(s * a), a * a)), C],
                             [C, B - vol * float(np.dot(df(t * b), b * b))]])
            try:
                step = np.linalg.solve(hess, -g)
            except np.linalg.LinAlgError:
                break
            lam = 1.0
            while lam > 1e-6:
                cand = st + lam * step
                if np.all(cand > 0) and np.linalg.norm(grad(cand)) < np.linalg.norm(g):
                    break
                lam *= 0.5
            else:
                break
            st = cand
    if not converged:
        opt = minimize(lambda v: -phi(v), st, jac=lambda v: -grad(v), method="L-BFGS-B",
                       bounds=[(1e-8, None), (1e-8, None)])
        if not opt.success:
            return None
        st = opt.x
    return st[0] * a + st[1] * b


def _nodal_climb(m: EnergyModel, row: np.ndarray, fp: FlowParams) -> np.ndarray:
    """最高顶点的更新：先缩放到节点 Nehari 集，再做一步带回退的下降并重新缩放"""
    x = nodal_rescale(m, row)
    if x is None:
        out, _, _, _ = descent_step_rows(m, row[None, :], fp.dt, fp.backtrack)
        return out[0]
    e_x = float(energy_rows(m, x)[0])
    g = gradient_rows(m, x)
    g2 = float(inner_h_rows(m.grid, g, g))
    dt = fp.dt
    while dt >= 1e-12:
        v = nodal_rescale(m, x - dt * g)
        if v is not None:
            e_v = float(energy_rows(m, v, strict=False)[0])
            if e_v <= e_x - 0.25 * dt * g2 + float(_slack(np.array(e_x))):
                return v
        dt *= fp.backtrack
    return x


# ============ 曲面 ============

def build_surface(m: EnergyModel, variant: str, mesh_level: int,
                  R: Optional[float] = None) -> Surface:
    """
    参数区域：半圆盘（gamma_s / gamma_s_prime）或四分之一圆盘（gamma_s_doubleprime），
    极坐标环 N_r = 2^level − 1，第 i 环在半圆盘上 2i+1 个点（四分之一圆盘 i+1 个），
    Delaunay 三角化。圆弧顶点的参数半径精确等于 R。
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant: must be one of {', '.join(VARIANTS)}")
    if not 3 <= mesh_level <= 7:
        raise ValueError("mesh_level: must be in [3, 7]")
    grid = m.grid
    quarter = variant == "gamma_s_doubleprime"
    if quarter:
        first, second = disjoint_bumps(grid)
    else:
        pairs = eigenpairs(grid, 2)
        first, second = pairs[0][1], pairs[1][1]
    if R is None:
        R = choose_r(m, first, second, quarter=quarter)

    rings = 2 ** mesh_level - 1
    span = np.pi / 2 if quarter else np.pi
    xy = [(0.0, 0.0)]
    radius = [0.0]
    on_arc, leg1, leg2, origin = [False], [False], [False], [True]
    for i in range(1, rings + 1):
        r = R if i == rings else R * i / rings
        count = i + 1 if quarter else 2 * i + 1
        for j in range(count):
            theta = span * j / (count - 1)
            if j == 0:
                point = (r, 0.0)
            elif j == count - 1:
                point = (0.0, r) if quarter else (-r, 0.0)
            else:
                point = (r * np.cos(theta), r * np.sin(theta))
            xy.append(point)
            radius.append(r)
            on_arc.append(i == rings)
            leg1.append(j == 0)
            leg2.append(j == count - 1)
            origin.append(False)
    xy = np.array(xy)

    tri = Delaunay(xy).simplices
    p0, p1, p2 = xy[tri[:, 0]], xy[tri[:, 1]], xy[tri[:, 2]]
    area = 0.5 * np.abs((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                        - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0]))
    tri = tri[area > 1e-12 * R * R]
    tri = tri[np.lexsort(tri.T[::-1])]

    images = np.outer(xy[:, 0], first.values) + np.outer(xy[:, 1], second.values)
    surface = Surface(
        grid=grid, variant=variant, R=float(R), xy=xy, radius=np.array(radius),
        triangles=tri.astype(int), images=images,
        on_arc=np.array(on_arc), on_leg1=np.array(leg1), on_leg2=np.array(leg2),
        is_origin=np.array(origin), levels=np.full(len(radius), mesh_level),
        base_level=mesh_level,
    )
    logger.info("曲面 %s：%d 个顶点，%d 个三角形，R=%g",
                variant, surface.vertex_count, tri.shape[0], R)
    return surface


def frozen_mask(s: Surface) -> np.ndarray:
    """gamma_s 冻结整个边界；两个变体只冻结圆弧（和原点）"""
    if s.variant == "gamma_s":
        return s.on_arc | s.on_leg1 | s.on_leg2 | s.is_origin
    return s.on_arc | s.is_origin


def _apply_leg_projection(s: Surface) -> np.ndarray:
    """变体的腿部投影：∂₁ 取正部，∂₂ 取负部；返回被改动的顶点"""
    if s.variant == "gamma_s":
        return np.zeros(0, dtype=int)
    free = ~frozen_mask(s)
    first = np.flatnonzero(s.on_leg1 & free)
    second = np.flatnonzero(s.on_leg2 & free)
    s.images[first] = np.maximum(s.images[first], 0.0)
    s.images[second] = np.minimum(s.images[second], 0.0)
    return np.concatenate([first, second])


def boundary_admissible(s: Surface, reference: Surface) -> bool:
    """冻结顶点与初始曲面逐位相同，投影的腿部满足符号约束"""
    frozen = frozen_mask(s)
    n0 = reference.vertex_count
    if not np.array_equal(s.images[:n0][frozen[:n0]], reference.images[frozen[:n0]]):
        return False
    if s.variant != "gamma_s":
        if np.any(s.images[s.on_leg1] < 0) or np.any(s.images[s.on_leg2] > 0):
            return False
    return True


def _refine_around(m: EnergyModel, s: Surface, vertex: int, energies: np.ndarray) -> np.ndarray:
    """
    顶点 vertex 的每个关联三角形 (v,a,b) 拆成
    (v,m_a,m_b)、(m_a,a,b)、(m_a,b,m_b)，m_a、m_b 为边中点
    """
    tri = s.triangles
    incident = np.any(tri == vertex, axis=1)
    kept = [tuple(t) for t in tri[~incident]]
    new_xy, new_img, new_lvl = [], [], []
    mids = {}
    base = s.vertex_count

    def midpoint(a: int) -> int:
        if a not in mids:
            mids[a] = base + len(new_xy)
            new_xy.append(0.5 * (s.xy[vertex] + s.xy[a]))
            new_img.append(0.5 * (s.images[vertex] + s.images[a]))
            new_lvl.append(max(s.levels[vertex], s.levels[a]) + 1)
        return mids[a]

    for t in tri[incident]:
        k = int(np.flatnonzero(t == vertex)[0])
        a, b = int(t[(k + 1) % 3]), int(t[(k + 2) % 3])
        ma, mb = midpoint(a), midpoint(b)
        kept.extend([(vertex, ma, mb), (ma, a, b), (ma, b, mb)])

    count = len(new_xy)
    xy = np.array(new_xy)
    s.xy = np.vstack([s.xy, xy])
    s.radius = np.concatenate([s.radius, np.hypot(xy[:, 0], xy[:, 1])])
    s.images = np.vstack([s.images, np.array(new_img)])
    s.levels = np.concatenate([s.levels, np.array(new_lvl)])
    s.levels[vertex] += 1
    for name in ("on_arc", "on_leg1", "on_leg2", "is_origin"):
        setattr(s, name, np.concatenate([getattr(s, name), np.zeros(count, dtype=bool)]))
    s.triangles = np.array(kept, dtype=int)
    logger.debug("顶点 %d 附近加密：新增 %d 个顶点", vertex, count)
    return np.concatenate([energies, energy_rows(m, s.images[base:])])


def _neighbours(s: Surface, vertex: int) -> np.ndarray:
    tri = s.triangles[np.any(s.triangles == vertex, axis=1)]
    return np.setdiff1d(np.unique(tri), [vertex])


def _surface_sweep(m: EnergyModel, s: Surface, fp: FlowParams, cp: ConeParams,
                   energies: np.ndarray, sweep: int) -> Tuple[SweepRow, int, np.ndarray]:
    grid = m.grid
    outside = ~in_w_rows(grid, s.images, cp)
    if not np.any(outside):
        raise SurfaceSwallowedError()
    top = int(np.argmax(np.where(outside, energies, -np.inf)))

    # 能级带内的自由顶点下降（读旧值写新值）
    free = ~frozen_mask(s)
    free[top] = False
    idx = np.intersect1d(np.flatnonzero(free), _band_members(energies, energies[top]))
    if idx.size:
        new, _, _, new_e = descent_step_rows(m, s.images[idx], fp.dt, fp.backtrack, energies[idx])
        s.images[idx] = new
        energies[idx] = new_e
    s.images[top] = _nodal_climb(m, s.images[top], fp)
    energies[top] = energy_rows(m, s.images[top])[0]
    touched = _apply_leg_projection(s)
    if touched.size:
        energies[touched] = energy_rows(m, s.images[touched])

    # 最高顶点的邻居全部落入 W 时局部加密
    neighbours = _neighbours(s, top)
    if (s.levels[top] < s.base_level + REFINE_LEVELS and neighbours.size
            and np.all(in_w_rows(grid, s.images[neighbours], cp))):
        energies = _refine_around(m, s, top, energies)

    outside = ~in_w_rows(grid, s.images, cp)
    if not np.any(outside):
        raise SurfaceSwallowedError()
    top = int(np.argmax(np.where(outside, energies, -np.inf)))
    res = float(norm_h_rows(grid, gradient_rows(m, s.images[top])))
    row = SweepRow(sweep=sweep, sup_level=float(energies[top]), maximizer_residual=res,
                   excluded_count=int(np.count_nonzero(~outside)))
    return row, top, energies


def deform_surface(m: EnergyModel, s: Surface, fp: FlowParams, cp: ConeParams,
                   sweeps: int) -> list:
    """对曲面连续执行 sweeps 次扫描（不做收敛判断），返回每次扫描的记录"""
    energies = energy_rows(m, s.images)
    rows = []
    for sweep in range(1, sweeps + 1):
        row, _, energies = _surface_sweep(m, s, fp, cp, energies, sweep)
        rows.append(row)
    return rows


def sign_changing_solve(m: EnergyModel, variant: str, fp: FlowParams, cp: ConeParams,
                        mesh_level: int = 4, max_sweeps: int = 20_000, polish: bool = True,
                        polish_switch: float = POLISH_SWITCH, rho: Optional[float] = None,
                        linking_every: int = 100) -> CriticalPointReport:
    """
    c_s（及两个变体）的曲面求解

    W_{ε₂} 之外顶点能级的上确界作为当前估计；最高顶点残差 ≤ residual_tol、
    变号且上确界在 50 次扫描内稳定时结束。每 linking_every 次扫描重新验证交点见证。
    """
    grid = m.grid
    s = build_surface(m, variant, mesh_level)
    if rho is None:
        rho = estimate_alpha_rho(m)[0]
    if not rho < s.R:
        raise LinkingError(f"sphere radius rho = {rho:.6g} is not below R = {s.R:.6g}")
    verify_linking(s, rho, cp, m)

    name = "sign_changing" if variant == "gamma_s" else f"sign_changing_{variant[len('gamma_s_'):]}"
    energies = energy_rows(m, s.images)
    trace = []
    history = deque(maxlen=STABLE_WINDOW + 1)
    polished = False
    last_polish = -POLISH_RETRY
    status = "budget"
    top = 0
    row = None
    sweep = 0
    logger.info("🔀 变号解求解 %s：d=%d n=%d, level=%d", variant, grid.dimension, grid.n, mesh_level)

    for sweep in range(1, max_sweeps + 1):
        row, top, energies = _surface_sweep(m, s, fp, cp, energies, sweep)
        if (polish and fp.residual_tol < row.maximizer_residual <= polish_switch
                and sweep - last_polish >= POLISH_RETRY):
            last_polish = sweep
            cand = _try_polish(m, s.images[top], row.sup_level, fp.residual_tol, "sign_changing")
            if cand is not None:
                s.images[top] = cand
                energies[top] = energy_rows(m, cand)[0]
                row.sup_level = float(energies[top])
                row.maximizer_residual = residual(m, Field(grid, cand))
                polished = True
                logger.info("✓ Newton 收尾：第 %d 次扫描，残差 %.3e", sweep, row.maximizer_residual)
        trace.append(row)
        history.append(row.sup_level)

        if sweep % linking_every == 0:
            verify_linking(s, rho, cp, m)
        if (row.maximizer_residual <= fp.residual_tol
                and classify(s.vertex(top)) == "sign_changing"
                and len(history) == history.maxlen
                and abs(history[-1] - history[0]) <= STABLE_TOL * (1 + abs(row.sup_level))):
            status = "converged"
            break
        if sweep % 500 == 0:
            logger.info("扫描 %d：sup %.10g，残差 %.3e，W 中顶点 %d",
                        sweep, row.sup_level, row.maximizer_residual, row.excluded_count)

    field = s.vertex(top)
    level = row.sup_level if row is not None else energy(m, field)
    res = row.maximizer_residual if row is not None else residual(m, field)
    if status == "converged":
        logger.info("✓ %s：能级 %.10g，残差 %.3e，%d 次扫描", name, level, res, sweep)
    else:
        logger.warning("❌ %s 未收敛：能级 %.10g，残差 %.3e", name, level, res)
    return CriticalPointReport(
        name=name, level=level, field=field, residual=res, classification=classify(field),
        iterations=sweep, status=status, polished=polished, trace=trace, surface=s,
    )


# ============ 交点见证 ============

def verify_linking(s: Surface, rho: float, cp: ConeParams, m: EnergyModel) -> Field:
    """
    按字典序扫描网格边，寻找 ‖image‖_H − ρ 变号的边，沿边二分到 |‖·‖ − ρ| ≤ 1e-6，
    返回第一个不在 W 中的交点；全部在 W 中（或无交点）时抛 LinkingError
    """
    if not rho < s.R:
        raise ValueError("rho: must be < R")
    grid = s.grid
    norms = norm_h_rows(grid, s.images) - rho
    crossings = []
    for a, b in s.edges():
        fa, fb = norms[a], norms[b]
        if fa * fb > 0:
            continue
        ua, ub = s.images[a], s.images[b]
        lo, hi = 0.0, 1.0
        point = ua if fa == 0 else ub if fb == 0 else None
        for _ in range(200):
            if point is not None:
                break
            mid = 0.5 * (lo + hi)
            cand = (1 - mid) * ua + mid * ub
            fm = float(norm_h_rows(grid, cand)) - rho
            if abs(fm) <= 1e-6:
                point = cand
                break
            if (fm < 0) == (fa < 0):
                lo = mid
            else:
                hi = mid
        if point is None:
            continue
        inside = bool(in_w_rows(grid, point[None, :], cp)[0])
        crossings.append((int(a), int(b), float(norm_h_rows(grid, point)), inside))
        if not inside:
            logger.debug("交点见证：边 (%d, %d)", a, b)
            return Field(grid, point)
    logger.error("❌ 没有找到 W 之外的交点（%d 个交点）", len(crossings))
    raise LinkingError("no sphere crossing outside W", crossings)

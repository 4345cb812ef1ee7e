"""
网格核心：离散拉普拉斯、Poisson 求解、内积与范数、特征对

所有批量接口都接受形如 (K, n^d) 的数组，每一行是一个网格函数；
单场接口接受 / 返回 Field。
"""

import logging
from functools import lru_cache
from typing import List, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.fft import dstn, idstn
from scipy.sparse.linalg import cg, splu

from .errors import EigenSolverError, GridMismatchError, PoissonConvergenceError
from .models import Field, Grid

logger = logging.getLogger(__name__)

# 特征向量残差（H 归一化后、l2 范数）的目标与接受上限
EIGEN_TARGET = 1e-10
EIGEN_ACCEPT = 1e-8
# 判定简并簇的相对间距
CLUSTER_GAP = 1e-8


@lru_cache(maxsize=16)
def laplacian_matrix(grid: Grid) -> sp.csr_matrix:
    """五点（一维三点）差分矩阵 L_h，对称正定"""
    n, h = grid.n, grid.h
    main = np.full(n, 2.0)
    off = np.full(n - 1, -1.0)
    one_d = sp.diags([off, main, off], [-1, 0, 1], format="csr") / (h * h)
    if grid.dimension == 1:
        return one_d.tocsr()
    eye = sp.identity(n, format="csr")
    return (sp.kron(one_d, eye) + sp.kron(eye, one_d)).tocsr()


def _as_rows(grid: Grid, rows: np.ndarray) -> np.ndarray:
    arr = np.asarray(rows, dtype=float)
    if arr.shape[-1] != grid.size:
        raise GridMismatchError(
            f"rows have length {arr.shape[-1]}, grid needs {grid.size}"
        )
    return arr


def laplacian_rows(grid: Grid, rows: np.ndarray) -> np.ndarray:
    """对每一行施加 L_h（模板直接作用，零边界）"""
    arr = _as_rows(grid, rows)
    lead = arr.shape[:-1]
    u = arr.reshape(lead + grid.shape)
    d = grid.dimension
    out = 2.0 * d * u
    for axis in range(u.ndim - d, u.ndim):
        lower = [slice(None)] * u.ndim
        upper = [slice(None)] * u.ndim
        lower[axis] = slice(1, None)
        upper[axis] = slice(None, -1)
        # u_{i-1} 与 u_{i+1}
        out[tuple(lower)] -= u[tuple(upper)]
        out[tuple(upper)] -= u[tuple(lower)]
    return (out / (grid.h * grid.h)).reshape(arr.shape)


def laplacian_apply(grid: Grid, u: Field) -> Field:
    if u.grid != grid:
        raise GridMismatchError("field is not on this grid")
    return Field(grid, laplacian_rows(grid, u.values))


@lru_cache(maxsize=16)
def _dst_symbol(grid: Grid) -> np.ndarray:
    """L_h 在 DST-I 基下的对角元"""
    k = np.arange(1, grid.n + 1)
    mu = 4.0 / grid.h ** 2 * np.sin(k * np.pi * grid.h / 2) ** 2
    if grid.dimension == 1:
        return mu
    return mu[:, None] + mu[None, :]


def _dst_solve(grid: Grid, rhs: np.ndarray) -> np.ndarray:
    lead = rhs.shape[:-1]
    u = rhs.reshape(lead + grid.shape)
    axes = tuple(range(len(lead), len(lead) + grid.dimension))
    coef = dstn(u, type=1, axes=axes) / _dst_symbol(grid)
    return idstn(coef, type=1, axes=axes).reshape(rhs.shape)


def _relative_residuals(grid: Grid, sol: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    diff = laplacian_rows(grid, sol) - rhs
    num = np.linalg.norm(diff, axis=-1)
    den = np.linalg.norm(rhs, axis=-1)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), num)


def solve_poisson_rows(grid: Grid, rhs: np.ndarray, tol: float = 1e-10,
                       method: str = "dst") -> np.ndarray:
    """逐行求解 L_h v = f，保证 ‖L_h v − f‖₂ ≤ tol·‖f‖₂"""
    rhs = _as_rows(grid, rhs)
    flat = rhs.reshape(-1, grid.size)
    if method == "dst":
        sol = _dst_solve(grid, flat)
        res = _relative_residuals(grid, sol, flat)
        bad = res > tol
        if np.any(bad):
            # 一步迭代修正
            sol[bad] += _dst_solve(grid, flat[bad] - laplacian_rows(grid, sol[bad]))
            res = _relative_residuals(grid, sol, flat)
    elif method == "cg":
        L = laplacian_matrix(grid)
        sol = np.zeros_like(flat)
        for i, b in enumerate(flat):
            if not np.any(b):
                continue
            x, info = cg(L, b, rtol=0.5 * tol, atol=0.0, maxiter=10 * grid.size)
            if info != 0:
                raise PoissonConvergenceError(
                    f"cg did not reach tol {tol:g} within {10 * grid.size} iterations"
                )
            sol[i] = x
        res = _relative_residuals(grid, sol, flat)
    else:
        raise ValueError(f"unknown poisson method: {method}")

    worst = float(np.max(res)) if res.size else 0.0
    if worst > tol:
        raise PoissonConvergenceError(
            f"poisson residual {worst:.3e} exceeds tol {tol:g} ({method})"
        )
    return sol.reshape(rhs.shape)


def solve_poisson(grid: Grid, f: Field, tol: float = 1e-10, method: str = "dst") -> Field:
    if f.grid != grid:
        raise GridMismatchError("field is not on this grid")
    return Field(grid, solve_poisson_rows(grid, f.values, tol, method))


# ============ 内积与范数 ============

def inner_h_rows(grid: Grid, rows_u: np.ndarray, rows_v: np.ndarray) -> np.ndarray:
    """逐行 H 内积 h^d·uᵀL_h v"""
    lv = laplacian_rows(grid, rows_v)
    return grid.cell_volume * np.sum(_as_rows(grid, rows_u) * lv, axis=-1)


def norm_h_rows(grid: Grid, rows: np.ndarray) -> np.ndarray:
    return np.sqrt(np.maximum(inner_h_rows(grid, rows, rows), 0.0))


def inner_h(u: Field, v: Field) -> float:
    u.same_grid(v)
    return float(inner_h_rows(u.grid, u.values, v.values))


def inner_l2(u: Field, v: Field) -> float:
    u.same_grid(v)
    return float(u.grid.cell_volume * np.dot(u.values, v.values))


def norm_h(u: Field) -> float:
    return float(np.sqrt(max(inner_h(u, u), 0.0)))


def norm_lp(u: Field, p: float) -> float:
    if p < 1:
        raise ValueError("p: must be ≥ 1")
    return float((u.grid.cell_volume * np.sum(np.abs(u.values) ** p)) ** (1.0 / p))


# ============ 特征对 ============

def _orthogonalize(x: np.ndarray, basis: List[np.ndarray]) -> np.ndarray:
    # 两遍 Gram–Schmidt
    for _ in range(2):
        for b in basis:
            x = x - np.dot(b, x) * b
    return x


def _leading_sign(values: np.ndarray) -> float:
    """第一个 |v| ≥ ½max|v| 的节点的符号"""
    mag = np.abs(values)
    idx = int(np.argmax(mag >= 0.5 * mag.max()))
    return 1.0 if values[idx] >= 0 else -1.0


def _inverse_iteration(grid: Grid, lu, L, found: List[np.ndarray],
                       rng: np.random.Generator, max_iter: int) -> Tuple[float, np.ndarray, float]:
    x = _orthogonalize(rng.standard_normal(grid.size), found)
    x /= np.linalg.norm(x)
    best = (np.inf, 0.0, x)
    stall = 0
    for _ in range(max_iter):
        y = _orthogonalize(lu.solve(x), found)
        x = y / np.linalg.norm(y)
        lx = L @ x
        theta = float(np.dot(x, lx))
        # H 归一化向量上的 l2 残差
        res = float(np.linalg.norm(lx - theta * x) / np.sqrt(grid.cell_volume * theta))
        if res < best[0] * 0.999:
            best = (res, theta, x.copy())
            stall = 0
        else:
            stall += 1
        if res <= EIGEN_TARGET or stall >= 50:
            break
    res, theta, x = best
    return theta, x, res


def _rotate_cluster(grid: Grid, vecs: List[np.ndarray]) -> List[np.ndarray]:
    """二重简并簇：取模板 sin(2πx)sin(πy) 的投影作为第一个，正交补作为第二个"""
    x, y = grid.coordinates()
    template = np.sin(2 * np.pi * x) * np.sin(np.pi * y)
    first = sum(np.dot(v, template) * v for v in vecs)
    first /= np.linalg.norm(first)
    # 正交补：取与 first 最不平行的那个基向量
    candidates = [v - np.dot(v, first) * first for v in vecs]
    second = max(candidates, key=np.linalg.norm)
    second /= np.linalg.norm(second)
    if first[grid.nearest_node((0.25, 0.5))] < 0:
        first = -first
    if second[grid.nearest_node((0.5, 0.25))] < 0:
        second = -second
    return [first, second]


def eigenpairs(grid: Grid, k: int, shift: float = 0.0,
               max_iter: int = 5000) -> List[Tuple[float, Field]]:
    """
    L_h 的前 k 个特征对（升序），特征向量按 H 范数归一化

    带收缩的移位逆迭代；多算两个特征对以识别简并簇。
    符号约定：e₁ 为正；二维的 (λ₂, λ₃) 简并簇按模板规则旋转；其余向量
    让第一个 |v| ≥ ½max|v| 的节点为正。
    """
    if not 1 <= k <= 4:
        raise ValueError("k: must be in [1, 4]")
    count = min(k + 2, grid.size)
    L = laplacian_matrix(grid)
    lu = splu((L - shift * sp.identity(grid.size)).tocsc())
    rng = np.random.default_rng(0)

    thetas: List[float] = []
    vecs: List[np.ndarray] = []
    for j in range(count):
        theta, x, res = _inverse_iteration(grid, lu, L, vecs, rng, max_iter)
        logger.debug("特征对 %d: λ=%.12g, 残差=%.3e", j + 1, theta, res)
        thetas.append(theta)
        vecs.append(x)

    order = np.argsort(thetas, kind="stable")
    thetas = [thetas[i] for i in order]
    vecs = [vecs[i] for i in order]

    # 按特征值分簇
    i = 0
    while i < count:
        j = i + 1
        while j < count and abs(thetas[j] - thetas[i]) <= CLUSTER_GAP * thetas[i]:
            j += 1
        if j - i == 2 and grid.dimension == 2:
            vecs[i:j] = _rotate_cluster(grid, vecs[i:j])
        else:
            for t in range(i, j):
                if t == 0:
                    vecs[t] = vecs[t] if vecs[t].sum() > 0 else -vecs[t]
                else:
                    vecs[t] = _leading_sign(vecs[t]) * vecs[t]
        i = j

    pairs: List[Tuple[float, Field]] = []
    for t in range(k):
        v = vecs[t]
        lv = L @ v
        lam = float(np.dot(v, lv) / np.dot(v, v))
        e = v / np.sqrt(grid.cell_volume * np.dot(v, lv))
        res = float(np.linalg.norm(L @ e - lam * e))
        if res > EIGEN_ACCEPT:
            raise EigenSolverError(
                f"eigenpair {t + 1}: residual {res:.3e} exceeds {EIGEN_ACCEPT:g}"
            )
        pairs.append((lam, Field(grid, e)))
    logger.info("✓ 特征对 d=%d n=%d: %s", grid.dimension, grid.n,
                ", ".join(f"{lam:.6g}" for lam, _ in pairs))
    return pairs


# ============ 随机场 ============

def random_rows(grid: Grid, rng: np.random.Generator, count: int,
                modes: int = 6) -> np.ndarray:
    """低频正弦模态的随机组合，权重按 1/|k|² 衰减"""
    k = np.arange(1, modes + 1)
    coords = grid.coordinates()
    if grid.dimension == 1:
        basis = np.sin(np.pi * np.outer(coords[0], k))
        coef = rng.standard_normal((count, modes)) / k ** 2
        return coef @ basis.T
    sx = np.sin(np.pi * np.outer(coords[0], k))
    sy = np.sin(np.pi * np.outer(coords[1], k))
    weight = 1.0 / (k[:, None] ** 2 + k[None, :] ** 2)
    coef = rng.standard_normal((count, modes, modes)) * weight
    return np.einsum("ia,cab,ib->ci", sx, coef, sy)


def random_field(grid: Grid, rng: np.random.Generator, modes: int = 6) -> Field:
    return Field(grid, random_rows(grid, rng, 1, modes)[0])

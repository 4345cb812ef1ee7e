from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, List, Optional, Tuple

import numpy as np

from .errors import GridMismatchError, NonFiniteFieldError


@dataclass(frozen=True)
class Grid:
    """单位区间 / 单位正方形上的均匀内部网格（Dirichlet 边界）"""
    dimension: int  # 1 或 2
    n: int  # 每个方向的内部节点数

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError("dimension: must be 1 or 2")
        if self.n < 3:
            raise ValueError("n: must be ≥ 3")

    @property
    def spacing(self) -> Fraction:
        """精确步长，h·(n+1) == 1"""
        return Fraction(1, self.n + 1)

    @property
    def h(self) -> float:
        return 1.0 / (self.n + 1)

    @property
    def cell_volume(self) -> float:
        """h^d，离散积分权重"""
        return self.h ** self.dimension

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.n,) * self.dimension

    @property
    def size(self) -> int:
        return self.n ** self.dimension

    def coordinates(self) -> Tuple[np.ndarray, ...]:
        """节点坐标，按 C 顺序展平；二维时 x 对应第一个下标"""
        axis = np.arange(1, self.n + 1) * self.h
        if self.dimension == 1:
            return (axis.copy(),)
        x, y = np.meshgrid(axis, axis, indexing="ij")
        return (x.ravel(), y.ravel())

    def nearest_node(self, point: Tuple[float, ...]) -> int:
        coords = self.coordinates()
        dist = sum((c - p) ** 2 for c, p in zip(coords, point))
        return int(np.argmin(dist))


@dataclass(eq=False)
class Field:
    """网格函数：长度为 n^d 的实数向量"""
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if values.size != self.grid.size:
            raise GridMismatchError(
                f"field has {values.size} values, grid d={self.grid.dimension} "
                f"n={self.grid.n} needs {self.grid.size}"
            )
        if not np.all(np.isfinite(values)):
            raise NonFiniteFieldError("field contains non-finite values")
        self.values = values

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.size))

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())

    def same_grid(self, other: "Field") -> None:
        if self.grid != other.grid:
            raise GridMismatchError(
                f"grid mismatch: d={self.grid.dimension} n={self.grid.n} vs "
                f"d={other.grid.dimension} n={other.grid.n}"
            )

    def __add__(self, other: "Field") -> "Field":
        self.same_grid(other)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        self.same_grid(other)
        return Field(self.grid, self.values - other.values)

    def __mul__(self, scalar: float) -> "Field":
        return Field(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return Field(self.grid, -self.values)

    def as_grid_array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)


@dataclass(frozen=True)
class Nonlinearity:
    """非线性项 f 及其原函数 F（F(0)=0）"""
    kind: str  # "odd_power" | "power_sum" | "custom"
    p: float  # 增长指数
    mu: float  # Ambrosetti–Rabinowitz 常数
    f: Callable[[np.ndarray], np.ndarray]
    F: Callable[[np.ndarray], np.ndarray]
    df: Optional[Callable[[np.ndarray], np.ndarray]] = None  # f'，Newton 与节点缩放用
    q: Optional[float] = None  # power_sum 的次幂
    coefficient: float = 1.0  # power_sum 的 a
    ar_exempt: bool = False  # 仅测试用的线性钩子


@dataclass(frozen=True)
class EnergyModel:
    """网格 + 非线性项 + Poisson 求解设置"""
    grid: Grid
    nl: Nonlinearity
    poisson_tol: float = 1e-10
    poisson_method: str = "dst"  # "dst" | "cg"

    def __post_init__(self):
        if not (0.0 < self.poisson_tol <= 1e-6):
            raise ValueError("poisson_tol: must be in (0, 1e-6]")
        if self.poisson_method not in ("dst", "cg"):
            raise ValueError("poisson_method: must be dst or cg")


@dataclass
class ArReport:
    """Ambrosetti–Rabinowitz 条件的抽样检查"""
    passed: bool
    worst_ratio: float  # min f(u)u / F(u)，应 ≥ μ
    worst_point: float
    samples: int
    reason: str = ""


@dataclass(frozen=True)
class ConeParams:
    """锥邻域参数"""
    eps: float = 1e-2
    distance_mode: str = "surrogate"  # "surrogate" | "exact"

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps: must be > 0")
        if self.distance_mode not in ("surrogate", "exact"):
            raise ValueError("distance_mode: must be surrogate or exact")

    @property
    def eps1(self) -> float:
        return self.eps / 2

    @property
    def eps2(self) -> float:
        return self.eps


@dataclass
class ProbeReport:
    """锥收缩性探测结果"""
    eps: float
    samples: int
    seed: int
    max_ratio: float  # max ‖A(u)⁺‖/‖u⁺‖
    eps0_empirical: float
    invariance_ok: bool  # 所有样本 A(u) ∈ P̄⁻_ε
    above_eps0: bool  # eps 超出经验 ε₀

    def rows(self) -> List[Tuple[str, str]]:
        return [
            ("eps", repr(self.eps)),
            ("samples", str(self.samples)),
            ("seed", str(self.seed)),
            ("max_ratio", repr(self.max_ratio)),
            ("eps0_empirical", repr(self.eps0_empirical)),
            ("invariance_ok", str(self.invariance_ok).lower()),
            ("above_eps0", str(self.above_eps0).lower()),
        ]

    def to_text(self) -> str:
        return "".join(f"{k}: {v}\n" for k, v in self.rows())


@dataclass(frozen=True)
class FlowParams:
    """下降流参数"""
    dt: float = 0.5
    backtrack: float = 0.5
    residual_tol: float = 1e-8
    max_steps: int = 200_000

    def __post_init__(self):
        if not (0.0 < self.dt <= 1.0):
            raise ValueError("dt: must be in (0, 1]")
        if not (0.0 < self.backtrack < 1.0):
            raise ValueError("backtrack: must be in (0, 1)")
        if not self.residual_tol > 0:
            raise ValueError("residual_tol: must be > 0")
        if self.max_steps < 1:
            raise ValueError("max_steps: must be ≥ 1")


@dataclass
class StepOutcome:
    """单步下降结果"""
    field: Field
    dt: float  # 实际接受的步长
    stagnated: bool  # 回退到最小步长仍未下降


@dataclass
class TraceRow:
    step: int
    energy: float
    residual: float
    dt: float


@dataclass
class FlowResult:
    field: Field
    status: str  # "converged" | "diverged" | "stagnated" | "budget"
    steps: int
    trace: List[TraceRow] = field(default_factory=list)


@dataclass
class CutoffSpec:
    """截断函数 g 的参数"""
    c: float
    eps: float
    eps_prime: float
    delta: float
    known_critical: Tuple[Field, ...] = ()

    def __post_init__(self):
        if not (0.0 < self.eps < self.eps_prime):
            raise ValueError("eps_prime: must satisfy 0 < eps < eps_prime")
        if not self.delta > 0:
            raise ValueError("delta: must be > 0")


@dataclass
class EtaResult:
    """形变流 η(t,u) 的结果"""
    field: Field
    status: str  # "complete" | "frozen" | "partial" | "target"
    time: float  # 实际积分到的流时间
    horizon: float  # T = 16ε/β·t
    substeps: int


@dataclass
class Path:
    """连接 0 与 ±R e₁ 的折线路径，节点按行存储"""
    grid: Grid
    images: np.ndarray  # (K, n^d)
    sign: str  # "plus" | "minus"
    R: float

    @property
    def nodes(self) -> List[Field]:
        return [Field(self.grid, row) for row in self.images]


@dataclass
class Surface:
    """参数区域（半圆盘或四分之一圆盘）三角剖分上的分片线性曲面"""
    grid: Grid
    variant: str  # "gamma_s" | "gamma_s_prime" | "gamma_s_doubleprime"
    R: float
    xy: np.ndarray  # (M, 2) 参数平面坐标
    radius: np.ndarray  # (M,) 参数半径，圆弧上精确等于 R
    triangles: np.ndarray  # (T, 3)
    images: np.ndarray  # (M, n^d)
    on_arc: np.ndarray  # (M,) bool，∂₀
    on_leg1: np.ndarray  # (M,) bool，∂₁（θ=0）
    on_leg2: np.ndarray  # (M,) bool，∂₂（θ=π 或 π/2）
    is_origin: np.ndarray  # (M,) bool
    levels: np.ndarray  # (M,) 顶点的加密层数
    base_level: int = 3

    @property
    def vertex_count(self) -> int:
        return int(self.images.shape[0])

    def vertex(self, index: int) -> Field:
        return Field(self.grid, self.images[index])

    def edges(self) -> np.ndarray:
        """去重并按字典序排序的边 (E, 2)"""
        tri = self.triangles
        pairs = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [0, 2]]])
        pairs = np.sort(pairs, axis=1)
        return np.unique(pairs, axis=0)


@dataclass
class SweepRow:
    sweep: int
    sup_level: float
    maximizer_residual: float
    excluded_count: int
    phase: str = "descent"


@dataclass
class CriticalPointReport:
    """临界点求解报告：level 是 minimax 估计（平稳上界）"""
    name: str
    level: float
    field: Field
    residual: float
    classification: str  # "positive" | "negative" | "sign_changing" | "trivial"
    iterations: int
    status: str  # "converged" | "budget" | "trivial" | "stagnated"
    polished: bool = False
    trace_path: Optional[str] = None
    trace: List[SweepRow] = field(default_factory=list)
    surface: Optional[Surface] = None
    path: Optional[Path] = None
    note: str = "minimax estimate (upper bound, stationary)"


@dataclass
class LemmaCheck:
    """单项引理检查的结果"""
    name: str
    passed: bool
    worst: float  # 最差的度量值
    detail: str = ""


@dataclass
class RunConfig:
    """一次运行的全部参数"""
    # 网格
    dimension: int = 1
    n: int = 255

    # 非线性项
    nonlinearity: str = "odd_power"  # "odd_power" | "power_sum"
    p: float = 4.0
    q: float = 3.0  # 仅 power_sum
    coefficient: float = 1.0  # 仅 power_sum
    mu: Optional[float] = None  # 默认取 p（power_sum 取 q）

    # 锥与容差
    eps: float = 1e-2
    residual_tol: float = 1e-8
    poisson_tol: float = 1e-10

    # 求解器
    seed: int = 1
    mesh_level: int = 4
    variants: Tuple[str, ...] = ("gamma_s",)
    path_nodes: int = 33
    dt: float = 0.5
    max_sweeps: int = 20_000

    # 输出
    output_dir: str = "output"
    export_excel: bool = False


@dataclass
class RunSummary:
    """summary.txt 的内容（不含墙钟时间）"""
    command: str
    config: RunConfig
    reports: List[CriticalPointReport] = field(default_factory=list)
    checks: List[LemmaCheck] = field(default_factory=list)
    probe: Optional[ProbeReport] = None
    alpha: Optional[float] = None
    rho: Optional[float] = None
    observations: List[Tuple[str, str]] = field(default_factory=list)  # 只报告不判定的量
    failures: List[str] = field(default_factory=list)
    timings: List[Tuple[str, float]] = field(default_factory=list)

"""求解器异常层级

报告型结果（发散、停滞、预算耗尽、平凡解塌缩）不走异常，由结果对象的 status 字段携带。
"""


class SolverError(Exception):
    """所有数值失败的根异常"""


class GridMismatchError(SolverError):
    """两个场不在同一网格上"""


class NonFiniteFieldError(SolverError):
    """场中出现 NaN / inf"""


class PoissonConvergenceError(SolverError):
    """Poisson 求解在迭代上限内未达到容差"""


class EigenSolverError(SolverError):
    """逆迭代未收敛或特征残差超限"""


class EnergyOverflowError(SolverError):
    """能量计算溢出"""


class ConeProjectionError(SolverError):
    """精确锥投影（障碍问题）未收敛"""


class SamplingError(SolverError):
    """在尝试次数上限内抽不到满足约束的样本"""


class SurfaceSwallowedError(SolverError):
    """曲面所有顶点都落入 W_ε"""

    def __init__(self, message: str = "exclusion set swallowed surface"):
        super().__init__(message)


class LinkingError(SolverError):
    """球面 ∂B_ρ 与曲面的交点全部落在 W 中（或根本没有交点）"""

    def __init__(self, message: str, crossings=None):
        super().__init__(message)
        # [(顶点a, 顶点b, 交点范数, 是否在W中), ...]
        self.crossings = list(crossings or [])


class FieldFormatError(SolverError):
    """场文件格式错误或维度不符"""


class ConfigError(Exception):
    """配置错误，消息以出错的键名开头"""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key

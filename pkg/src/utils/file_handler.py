"""
文件读写：场 CSV、PGM 热图、轨迹 CSV、汇总文本、可选 Excel

所有文本输出都用 "\n" 换行、浮点用可往返的全精度十进制，保证同样的输入得到逐字节相同的文件。
"""

import logging
import re
from dataclasses import fields
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..errors import FieldFormatError
from ..models import (CriticalPointReport, Field, Grid, RunConfig, RunSummary, SweepRow,
                      TraceRow)

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
PGM_MAX = 65535
_HEADER = re.compile(r"^#\s*grid\s+d=(\d+)\s+n=(\d+)\s*$")

# 汇总与 Excel 里不写入的配置项（换输出目录不应改变汇总内容）
_VOLATILE_KEYS = ("output_dir",)

PARAM_DESCRIPTIONS = {
    "dimension": "空间维数（1 = 单位区间，2 = 单位正方形）",
    "n": "每个方向的内部节点数",
    "nonlinearity": "非线性项类型（odd_power / power_sum）",
    "p": "增长指数 p > 2",
    "q": "power_sum 的低次幂 q（2 < q ≤ p）",
    "coefficient": "power_sum 低次项系数 a ≥ 0",
    "mu": "AR 常数 μ（空 = 取默认）",
    "eps": "锥邻域半径 ε（ε₁ = ε/2, ε₂ = ε）",
    "residual_tol": "临界点残差容差",
    "poisson_tol": "Poisson 求解相对容差",
    "seed": "随机种子",
    "mesh_level": "参数半圆盘的三角网层数",
    "variants": "变号解的构造变体",
    "path_nodes": "山路路径的节点数",
    "dt": "下降流初始步长",
    "max_sweeps": "扫描次数上限",
    "export_excel": "是否额外导出 summary.xlsx",
}


def format_value(value) -> str:
    """汇总里的值：浮点用 repr（最短可往返），布尔小写，元组逗号分隔"""
    if value is None:
        return "none"
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(v) for v in value)
    return str(value)


# ============ 场 ============

def write_field(path: Union[str, Path], u: Field):
    """写场 CSV：首行 "# grid d=<d> n=<n>"，随后 n 行（一维为 1 行），二维第 i 行对应 x_i"""
    path = Path(path)
    grid = u.grid
    table = u.values.reshape(1, -1) if grid.dimension == 1 else u.as_grid_array()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# grid d={grid.dimension} n={grid.n}\n")
        pd.DataFrame(table).to_csv(fh, header=False, index=False,
                                   float_format=FLOAT_FORMAT, lineterminator="\n")


def read_field(path: Union[str, Path], grid: Grid = None) -> Field:
    """读场 CSV；给定 grid 时额外核对维数与 n"""
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n")
    except OSError as e:
        raise FieldFormatError(f"{path}: cannot read ({e})") from e
    match = _HEADER.match(header)
    if not match:
        raise FieldFormatError(f"{path}: missing or malformed grid header")
    try:
        file_grid = Grid(int(match.group(1)), int(match.group(2)))
    except ValueError as e:
        raise FieldFormatError(f"{path}: {e}") from e
    if grid is not None and grid != file_grid:
        raise FieldFormatError(
            f"{path}: grid d={file_grid.dimension} n={file_grid.n} does not match "
            f"d={grid.dimension} n={grid.n}"
        )

    try:
        table = pd.read_csv(path, skiprows=1, header=None, dtype=float,
                            float_precision="round_trip")
    except (ValueError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise FieldFormatError(f"{path}: malformed data ({e})") from e
    expected_rows = 1 if file_grid.dimension == 1 else file_grid.n
    if table.shape != (expected_rows, file_grid.n):
        raise FieldFormatError(
            f"{path}: expected {expected_rows}×{file_grid.n} values, got "
            f"{table.shape[0]}×{table.shape[1]}"
        )
    values = table.to_numpy().reshape(-1)
    if not np.all(np.isfinite(values)):
        raise FieldFormatError(f"{path}: non-finite value")
    return Field(file_grid, values)


def write_profile_csv(path: Union[str, Path], u: Field):
    """一维解的两列 (x, u) 表"""
    if u.grid.dimension != 1:
        raise ValueError("profile CSV is for 1D fields")
    df = pd.DataFrame({"x": u.grid.coordinates()[0], "u": u.values})
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def pgm_levels(u: Field) -> np.ndarray:
    """[min, max] 线性映射到 [0, 65535]；常数场取中灰 32768"""
    lo, hi = float(np.min(u.values)), float(np.max(u.values))
    if hi <= lo:
        return np.full(u.grid.shape, (PGM_MAX + 1) // 2, dtype=np.int64)
    scaled = np.rint((u.as_grid_array() - lo) / (hi - lo) * PGM_MAX)
    return np.clip(scaled, 0, PGM_MAX).astype(np.int64)


def write_pgm(path: Union[str, Path], u: Field):
    """P2 灰度图，仅二维；图像第一行是 y 最大的一行"""
    if u.grid.dimension != 2:
        raise ValueError("PGM heatmap is for 2D fields")
    image = pgm_levels(u).T[::-1]
    n = u.grid.n
    lines = ["P2", f"{n} {n}", str(PGM_MAX)]
    lines += [" ".join(str(v) for v in row) for row in image]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


# ============ 轨迹 ============

def write_flow_trace(path: Union[str, Path], trace: Sequence[TraceRow]):
    df = pd.DataFrame([{
        "step": r.step,
        "energy": r.energy,
        "residual": r.residual,
        "dt": r.dt,
    } for r in trace], columns=["step", "energy", "residual", "dt"])
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_sweep_trace(path: Union[str, Path], trace: Sequence[SweepRow]):
    df = pd.DataFrame([{
        "sweep": r.sweep,
        "sup_level": r.sup_level,
        "maximizer_residual": r.maximizer_residual,
        "excluded_count": r.excluded_count,
    } for r in trace], columns=["sweep", "sup_level", "maximizer_residual", "excluded_count"])
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_trace(path: Union[str, Path], trace: Sequence):
    if trace and isinstance(trace[0], TraceRow):
        write_flow_trace(path, trace)
    else:
        write_sweep_trace(path, trace)


def write_solution_files(output_dir: Union[str, Path], report: CriticalPointReport) -> List[str]:
    """写一个解的全部文件，返回文件名列表；report.trace_path 指向轨迹文件"""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [f"{report.name}.csv", f"{report.name}.trace.csv"]
    write_field(out / written[0], report.field)
    write_trace(out / written[1], report.trace)
    if report.field.grid.dimension == 2:
        written.append(f"{report.name}.pgm")
        write_pgm(out / written[-1], report.field)
    else:
        written.append(f"{report.name}.profile.csv")
        write_profile_csv(out / written[-1], report.field)
    report.trace_path = written[1]
    logger.debug("写出 %s", ", ".join(written))
    return written


# ============ 汇总 ============

def config_rows(config: RunConfig) -> List[Tuple[str, str]]:
    return [(f.name, format_value(getattr(config, f.name)))
            for f in fields(config) if f.name not in _VOLATILE_KEYS]


def summary_rows(summary: RunSummary) -> List[Tuple[str, str]]:
    """summary.txt 的 (键, 值) 行，不含墙钟时间"""
    rows = [("command", summary.command)]
    rows += [(f"config.{k}", v) for k, v in config_rows(summary.config)]
    if summary.alpha is not None:
        rows.append(("alpha", format_value(summary.alpha)))
    if summary.rho is not None:
        rows.append(("rho", format_value(summary.rho)))
    for r in summary.reports:
        key = f"solution.{r.name}"
        rows += [
            (f"{key}.level", format_value(r.level)),
            (f"{key}.residual", format_value(r.residual)),
            (f"{key}.classification", r.classification),
            (f"{key}.iterations", str(r.iterations)),
            (f"{key}.status", r.status),
            (f"{key}.polished", format_value(r.polished)),
            (f"{key}.field_file", f"{r.name}.csv"),
            (f"{key}.note", r.note),
        ]
    for c in summary.checks:
        key = f"check.{c.name}"
        rows += [(f"{key}.passed", format_value(c.passed)),
                 (f"{key}.worst", format_value(c.worst))]
        if c.detail:
            rows.append((f"{key}.detail", c.detail))
    if summary.probe is not None:
        rows += [(f"probe.{k}", v) for k, v in summary.probe.rows()]
    rows += [(f"observed.{k}", v) for k, v in summary.observations]
    rows += [("failure", msg) for msg in summary.failures]
    rows.append(("status", "failed" if summary.failures else "ok"))
    return rows


def write_summary(path: Union[str, Path], summary: RunSummary):
    text = "".join(f"{k}: {v}\n" for k, v in summary_rows(summary))
    Path(path).write_text(text, encoding="utf-8")


def read_summary(path: Union[str, Path]) -> Dict[str, List[str]]:
    """读回 summary.txt；同名键（如 failure）按出现顺序收集"""
    result: Dict[str, List[str]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        key, sep, value = line.partition(": ")
        if sep:
            result.setdefault(key, []).append(value)
    return result


def write_timings(path: Union[str, Path], timings: Sequence[Tuple[str, float]]):
    """各阶段墙钟时间，单独成文件"""
    df = pd.DataFrame(list(timings), columns=["stage", "seconds"])
    df.to_csv(path, index=False, float_format="%.3f", lineterminator="\n")


# ============ Excel ============

def export_summary_excel(summary: RunSummary, output_path: Union[str, Path]):
    """导出汇总到 Excel：参数配置 / 解 / 引理检查"""
    with pd.ExcelWriter(output_path, engine="xlsxwriter") as writer:
        params_df = pd.DataFrame([{
            "参数名称": key,
            "参数值": value,
            "说明": PARAM_DESCRIPTIONS.get(key, ""),
        } for key, value in config_rows(summary.config)])
        params_df.to_excel(writer, sheet_name="参数配置", index=False)

        solutions_df = pd.DataFrame([{
            "名称": r.name,
            "能级": r.level,
            "残差": r.residual,
            "符号类别": r.classification,
            "迭代次数": r.iterations,
            "状态": r.status,
            "Newton 抛光": "是" if r.polished else "否",
            "场文件": f"{r.name}.csv",
        } for r in summary.reports],
            columns=["名称", "能级", "残差", "符号类别", "迭代次数", "状态", "Newton 抛光", "场文件"])
        solutions_df.to_excel(writer, sheet_name="解", index=False)

        checks_df = pd.DataFrame([{
            "检查项": c.name,
            "通过": "是" if c.passed else "否",
            "最差值": c.worst,
            "说明": c.detail,
        } for c in summary.checks], columns=["检查项", "通过", "最差值", "说明"])
        checks_df.to_excel(writer, sheet_name="引理检查", index=False)


def import_summary_excel(file_path: Union[str, Path]) -> Dict[str, pd.DataFrame]:
    """读回 summary.xlsx 的全部工作表"""
    return pd.read_excel(file_path, sheet_name=None, engine="openpyxl")

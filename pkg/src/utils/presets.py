"""
预设与运行配置

配置文件为扁平的 key = value 文本，每行一个，# 开头为注释。
--preset 先载入预设，配置文件中的键再覆盖预设。
"""

from dataclasses import fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Union

from ..errors import ConfigError
from ..minimax import VARIANTS
from ..models import RunConfig

# 默认预设（只读）
DEFAULT_PRESETS = {
    "quick-1d": {
        "description": "一维快速配置，n=127",
        "params": {
            "dimension": 1,
            "n": 127,
            "p": 4.0,
            "residual_tol": 1e-8,
            "seed": 1,
        }
    },
    "acceptance-1d": {
        "description": "一维验收配置，n=255，用于山路与变号解的能级对比",
        "params": {
            "dimension": 1,
            "n": 255,
            "p": 4.0,
            "residual_tol": 1e-8,
            "seed": 1,
        }
    },
    "variants-1d": {
        "description": "一维三种变号构造对比，n=127",
        "params": {
            "dimension": 1,
            "n": 127,
            "p": 4.0,
            "variants": ("gamma_s", "gamma_s_prime", "gamma_s_doubleprime"),
            "seed": 1,
        }
    },
    "theorem-2d": {
        "description": "单位正方形上的三解求解，n=63",
        "params": {
            "dimension": 2,
            "n": 63,
            "p": 4.0,
            "residual_tol": 1e-6,
            "mesh_level": 3,
            "seed": 1,
        }
    },
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_INT_KEYS = ("dimension", "n", "seed", "mesh_level", "path_nodes", "max_sweeps")
_FLOAT_KEYS = ("p", "q", "coefficient", "eps", "residual_tol", "poisson_tol", "dt")


def load_presets() -> Dict[str, Any]:
    return dict(DEFAULT_PRESETS)


def get_preset(name: str) -> Dict[str, Any]:
    """获取指定预设，不存在时报配置错误"""
    presets = load_presets()
    if name not in presets:
        raise ConfigError("preset", f"unknown preset {name!r} (available: {', '.join(presets)})")
    return presets[name]


def _convert(key: str, value: Any) -> Any:
    """把配置文件里的字符串（或预设里的原生值）转换成 RunConfig 字段类型"""
    try:
        if key in _INT_KEYS:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value) if not isinstance(value, str) else int(value.strip())
        if key in _FLOAT_KEYS:
            return float(value)
        if key == "mu":
            if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none")):
                return None
            return float(value)
        if key == "variants":
            items = value.split(",") if isinstance(value, str) else list(value)
            return tuple(str(v).strip() for v in items if str(v).strip())
        if key == "export_excel":
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("true", "yes", "1"):
                return True
            if text in ("false", "no", "0"):
                return False
            raise ValueError
        return str(value).strip()
    except (TypeError, ValueError):
        raise ConfigError(key, f"cannot parse value {value!r}") from None


def validate_config(config: RunConfig) -> RunConfig:
    """数值范围校验，失败时抛 ConfigError（消息以键名开头）"""
    if config.dimension not in (1, 2):
        raise ConfigError("dimension", "must be 1 or 2")
    if config.n < 3:
        raise ConfigError("n", "must be ≥ 3")
    if config.nonlinearity not in ("odd_power", "power_sum"):
        raise ConfigError("nonlinearity", "must be odd_power or power_sum")
    if not config.p > 2:
        raise ConfigError("p", "must be > 2")
    if config.nonlinearity == "power_sum":
        if not 2 < config.q <= config.p:
            raise ConfigError("q", "must satisfy 2 < q ≤ p")
        if config.coefficient < 0:
            raise ConfigError("coefficient", "must be ≥ 0")
    if config.mu is not None:
        upper = config.q if config.nonlinearity == "power_sum" else config.p
        if not 2 < config.mu <= upper:
            raise ConfigError("mu", f"must satisfy 2 < mu ≤ {upper:g}")
    if not config.eps > 0:
        raise ConfigError("eps", "must be > 0")
    if not config.residual_tol > 0:
        raise ConfigError("residual_tol", "must be > 0")
    if not 0 < config.poisson_tol <= 1e-6:
        raise ConfigError("poisson_tol", "must be in (0, 1e-6]")
    if config.seed < 0:
        raise ConfigError("seed", "must be ≥ 0")
    if not 3 <= config.mesh_level <= 7:
        raise ConfigError("mesh_level", "must be in [3, 7]")
    if not config.variants:
        raise ConfigError("variants", "must name at least one variant")
    for v in config.variants:
        if v not in VARIANTS:
            raise ConfigError("variants", f"unknown variant {v!r}")
    if config.path_nodes < 17:
        raise ConfigError("path_nodes", "must be ≥ 17")
    if not 0 < config.dt <= 1:
        raise ConfigError("dt", "must be in (0, 1]")
    if config.max_sweeps < 1:
        raise ConfigError("max_sweeps", "must be ≥ 1")
    return config


def params_from_dict(params_dict: Dict[str, Any], base: Optional[RunConfig] = None) -> RunConfig:
    """从字典创建运行配置；缺少的键取 base（默认 RunConfig()）中的值，未知键拒绝"""
    base = RunConfig() if base is None else base
    updates = {}
    for key, value in params_dict.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(key, "unknown key")
        updates[key] = _convert(key, value)
    return validate_config(replace(base, **updates))


def parse_config_text(text: str) -> Dict[str, str]:
    """解析 key = value 文本，返回原始字符串字典"""
    result: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}", "expected 'key = value'")
        if key in result:
            raise ConfigError(key, "duplicate key")
        result[key] = value.split("#", 1)[0].strip()
    return result


def load_config_file(path: Union[str, Path], base: Optional[RunConfig] = None) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError("config", f"cannot read {path} ({e.strerror})") from None
    return params_from_dict(parse_config_text(text), base)


def resolve_config(preset: Optional[str] = None,
                   config_path: Optional[Union[str, Path]] = None,
                   overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """预设 → 配置文件 → 命令行覆盖，依次叠加"""
    config = RunConfig()
    if preset:
        config = params_from_dict(get_preset(preset)["params"], config)
    if config_path:
        config = load_config_file(config_path, config)
    if overrides:
        config = params_from_dict(overrides, config)
    return validate_config(config)

#!/usr/bin/env python3
"""
全面测试求解器的端到端功能：三解求解、结果可复现、变号构造变体
"""

import ast
import sys
import os
import tempfile
from pathlib import Path

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from app import exit_code, run
from src.minimax import classify
from src.utils.file_handler import read_field, read_summary
from src.utils.presets import resolve_config


def test_basic_imports():
    """测试基础导入"""
    print("📦 测试基础导入...")
    import src.checks  # noqa: F401
    import src.oracles  # noqa: F401
    from src.utils.file_handler import export_summary_excel  # noqa: F401
    print("✅ 所有模块导入成功")


def test_theorem_2d():
    """单位正方形 n=63：正解、负解、变号解三者齐全"""
    print("\n🔀 测试二维三解求解...")
    config = resolve_config("theorem-2d")
    with tempfile.TemporaryDirectory() as tmp:
        summary = run("solve-all", config, tmp)
        assert exit_code(summary) == 0, summary.failures
        by_name = {r.name: r for r in summary.reports}
        assert set(by_name) == {"positive", "negative", "sign_changing"}
        for name, report in by_name.items():
            assert report.status == "converged", (name, report.status)
            assert report.residual <= 1e-6, (name, report.residual)
            assert report.level > summary.alpha, (name, report.level)
            stored = read_field(Path(tmp) / f"{name}.csv", report.field.grid)
            assert classify(stored) == name
            assert (Path(tmp) / f"{name}.pgm").exists()
            print(f"   - {name}: 能级 {report.level:.6g}, 残差 {report.residual:.2e}")
        rows = read_summary(Path(tmp) / "summary.txt")
        assert rows["status"] == ["ok"]
        assert "observed.sign_changing_over_positive" in rows
    print("✅ 二维三解求解通过")


def test_repeatable_output():
    """单位正方形预设运行两次 solve-all，除 timings.txt 外所有文件逐字节相同"""
    print("\n🔁 测试结果可复现...")
    config = resolve_config("theorem-2d")
    with tempfile.TemporaryDirectory() as tmp:
        first, second = Path(tmp) / "first", Path(tmp) / "second"
        run("solve-all", config, str(first))
        run("solve-all", config, str(second))
        names = sorted(p.name for p in first.iterdir() if p.name != "timings.txt")
        assert names == sorted(p.name for p in second.iterdir() if p.name != "timings.txt")
        assert "summary.txt" in names and "sign_changing.pgm" in names
        for name in names:
            assert (first / name).read_bytes() == (second / name).read_bytes(), name
        print(f"   - {len(names)} 个文件逐字节相同")
    print("✅ 结果可复现")


def test_variant_agreement():
    """三种变号构造得到的能级相差不超过 5%"""
    print("\n📐 测试变号构造变体...")
    config = resolve_config("variants-1d")
    with tempfile.TemporaryDirectory() as tmp:
        summary = run("solve-sign-changing", config, tmp)
        assert exit_code(summary) == 0, summary.failures
    levels = {r.name: r.level for r in summary.reports}
    assert set(levels) == {"sign_changing", "sign_changing_prime", "sign_changing_doubleprime"}
    for report in summary.reports:
        assert report.classification == "sign_changing", report.name
    low, high = min(levels.values()), max(levels.values())
    assert (high - low) / low <= 0.05, levels
    spread = dict(summary.observations)["variant_level_spread"]
    assert float(spread) <= 0.05
    for name, level in levels.items():
        print(f"   - {name}: {level:.8g}")
    print("✅ 变体能级一致")


def test_app_syntax():
    """测试 app.py 语法"""
    print("\n🔍 测试 app.py 语法...")
    source = Path(__file__).with_name("app.py").read_text(encoding="utf-8")
    ast.parse(source)
    print("✅ app.py 语法正确")


TESTS = [
    ("基础导入", test_basic_imports),
    ("二维三解", test_theorem_2d),
    ("结果可复现", test_repeatable_output),
    ("变号构造变体", test_variant_agreement),
    ("app.py 语法", test_app_syntax),
]


def main():
    """运行所有测试"""
    print("=" * 60)
    print("🧪 超线性 Dirichlet 求解器 - 全面功能测试")
    print("=" * 60)

    results = []
    for name, test in TESTS:
        try:
            test()
            results.append((name, True))
        except Exception as e:
            print(f"❌ {name} 失败: {e!r}")
            import traceback
            traceback.print_exc()
            results.append((name, False))

    print("\n" + "=" * 60)
    print("📊 测试结果汇总")
    print("=" * 60)

    passed = sum(1 for _, ok in results if ok)
    failed = len(results) - passed
    for name, ok in results:
        print(f"{'✅' if ok else '❌'} {name}: {'通过' if ok else '失败'}")

    print(f"\n总计: {passed} 通过, {failed} 失败")
    if failed == 0:
        print("\n🎉 所有测试通过!")
        return 0
    print(f"\n⚠️  有 {failed} 个测试失败,请检查")
    return 1


if __name__ == "__main__":
    sys.exit(main())

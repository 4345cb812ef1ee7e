"""
超线性 Dirichlet 问题三解求解器：批处理入口

用法：
    python app.py solve-all --preset acceptance-1d --output output
    python app.py verify-lemmas --config run.cfg
退出码：0 成功，2 配置错误，3 求解失败，4 验证失败
"""

import argparse
import logging
import sys
import time
from contextlib import contextmanager
from pathlib import Path
from typing import List, Optional

from src.checks import deformation_checks, demo_cutoff, lemma_suite
from src.cones import contraction_probe
from src.energy import odd_power, power_sum, validate_ar
from src.errors import ConfigError, LinkingError, SolverError
from src.flow import band_samples, estimate_beta, integrate_flow
from src.minimax import classify, estimate_alpha_rho, mountain_pass, sign_changing_solve
from src.models import (ConeParams, CriticalPointReport, EnergyModel, Field, FlowParams, Grid,
                        RunConfig, RunSummary)
from src.utils.file_handler import (export_summary_excel, write_flow_trace, write_solution_files,
                                    write_summary, write_timings)
from src.utils.presets import resolve_config

logger = logging.getLogger("app")

COMMANDS = ("solve-positive", "solve-negative", "solve-sign-changing", "solve-all",
            "verify-lemmas", "deform-demo", "probe-cones")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_VERIFY = 4

# failures 条目的前缀决定退出码
SOLVER_FAILURE = "solver"
VERIFY_FAILURE = "verify"


def build_model(config: RunConfig) -> EnergyModel:
    """由运行配置构造能量模型；AR 条件不满足视为配置错误"""
    if config.nonlinearity == "power_sum":
        nl = power_sum(config.p, config.q, config.coefficient, config.mu)
    else:
        nl = odd_power(config.p, config.mu)
    report = validate_ar(nl)
    if not report.passed:
        raise ConfigError("mu", report.reason)
    return EnergyModel(Grid(config.dimension, config.n), nl, poisson_tol=config.poisson_tol)


def flow_params(config: RunConfig) -> FlowParams:
    return FlowParams(dt=config.dt, residual_tol=config.residual_tol)


class Runner:
    """按子命令依次执行各阶段，收集结果到 RunSummary"""

    def __init__(self, command: str, config: RunConfig, output_dir: Path):
        self.command = command
        self.config = config
        self.output_dir = output_dir
        self.summary = RunSummary(command=command, config=config)
        self.model = build_model(config)
        self.cones = ConeParams(eps=config.eps)
        self.fp = flow_params(config)

    @contextmanager
    def stage(self, name: str):
        """计时；数值失败记入汇总而不中断后续阶段"""
        start = time.perf_counter()
        logger.info("▶ 阶段 %s", name)
        try:
            yield
        except LinkingError as e:
            detail = f"{e} ({len(e.crossings)} crossings, all in W)" if e.crossings else str(e)
            self.fail(SOLVER_FAILURE, f"{name}: {detail}")
        except SolverError as e:
            self.fail(SOLVER_FAILURE, f"{name}: {e}")
        except ConfigError:
            raise
        except Exception as e:
            # 非预期异常同样记为求解失败，汇总照常写出
            logger.exception("❌ 阶段 %s 出现未预期的异常", name)
            self.fail(SOLVER_FAILURE, f"{name}: unexpected {type(e).__name__}: {e}")
        finally:
            self.summary.timings.append((name, time.perf_counter() - start))

    def fail(self, kind: str, message: str):
        logger.error("❌ %s", message)
        self.summary.failures.append(f"{kind}: {message}")

    def observe(self, key: str, value: str):
        self.summary.observations.append((key, value))

    # ---------- 各阶段 ----------

    def alpha_rho(self):
        if self.summary.alpha is None:
            with self.stage("alpha_rho"):
                rho, alpha = estimate_alpha_rho(self.model, seed=self.config.seed)
                self.summary.rho, self.summary.alpha = rho, alpha
        return self.summary.alpha, self.summary.rho

    def record(self, report: CriticalPointReport, expected: str):
        write_solution_files(self.output_dir, report)
        self.summary.reports.append(report)
        if report.status != "converged":
            self.fail(SOLVER_FAILURE, f"{report.name}: {report.status} "
                                      f"(residual {report.residual:.3e})")
        elif report.classification != expected:
            self.fail(SOLVER_FAILURE, f"{report.name}: classified {report.classification}, "
                                      f"expected {expected}")

    def solve_cone(self, sign: str) -> Optional[CriticalPointReport]:
        name = "positive" if sign == "plus" else "negative"
        report = None
        with self.stage(f"solve_{name}"):
            report = mountain_pass(self.model, sign, self.fp, self.cones,
                                   K=self.config.path_nodes, max_sweeps=self.config.max_sweeps)
            self.record(report, name)
        return report

    def solve_sign_changing(self) -> List[CriticalPointReport]:
        _, rho = self.alpha_rho()
        reports = []
        if rho is None:
            return reports
        for variant in self.config.variants:
            with self.stage(f"solve_{variant}"):
                report = sign_changing_solve(
                    self.model, variant, self.fp, self.cones,
                    mesh_level=self.config.mesh_level, max_sweeps=self.config.max_sweeps,
                    rho=rho,
                )
                self.record(report, "sign_changing")
                reports.append(report)
        if len(reports) > 1:
            levels = [r.level for r in reports]
            spread = (max(levels) - min(levels)) / max(abs(min(levels)), 1e-300)
            self.observe("variant_level_spread", repr(spread))
        return reports

    def solve_all(self):
        alpha, _ = self.alpha_rho()
        found = [self.solve_cone("plus"), self.solve_cone("minus")]
        found += self.solve_sign_changing()
        if alpha is None:
            return
        for report in found:
            if report is None:
                continue
            if not report.level > alpha or classify(report.field) == "trivial":
                self.fail(SOLVER_FAILURE, f"{report.name}: trivial collapse "
                                          f"(level {report.level:.6g} ≤ alpha {alpha:.6g})")
        plus = found[0]
        signed = [r for r in found[2:] if r is not None]
        if plus is not None and signed:
            # 只报告 c_s 与 c₊ 的大小关系，不作判定
            ratio = signed[0].level / plus.level
            self.observe("sign_changing_over_positive", repr(ratio))
            self.observe("sign_changing_above_positive", str(ratio > 1.0).lower())

    def verify_lemmas(self):
        alpha, _ = self.alpha_rho()
        if alpha is None:
            return
        with self.stage("verify_lemmas"):
            checks, probe = lemma_suite(self.model, self.cones, alpha, seed=self.config.seed)
            self.summary.checks.extend(checks)
            self.summary.probe = probe
            for check in checks:
                if not check.passed:
                    self.fail(VERIFY_FAILURE, f"{check.name}: worst {check.worst:.6g}")

    def deform_demo(self):
        alpha, _ = self.alpha_rho()
        if alpha is None:
            return
        with self.stage("deform_demo"):
            cs = demo_cutoff(alpha)
            beta = estimate_beta(self.model, cs, self.cones, seed=self.config.seed)
            self.observe("band_c", repr(cs.c))
            self.observe("band_eps", repr(cs.eps))
            self.observe("band_eps_prime", repr(cs.eps_prime))
            self.observe("beta", repr(beta))
            start = band_samples(self.model, cs, self.cones, 1, seed=self.config.seed)
            if start.shape[0]:
                flow = integrate_flow(self.model, Field(self.model.grid, start[0]), self.fp)
                write_flow_trace(self.output_dir / "deform.flow.csv", flow.trace)
                self.observe("flow_status", flow.status)
                self.observe("flow_steps", str(flow.steps))
            checks = deformation_checks(self.model, self.cones, alpha,
                                        seed=self.config.seed, beta=beta)
            self.summary.checks.extend(checks)
            for check in checks:
                if not check.passed:
                    self.fail(VERIFY_FAILURE, f"{check.name}: worst {check.worst:.6g}")

    def probe_cones(self):
        with self.stage("probe_cones"):
            probe = contraction_probe(self.model, self.cones, seed=self.config.seed)
            self.summary.probe = probe
            (self.output_dir / "probe.txt").write_text(probe.to_text(), encoding="utf-8")
            if probe.max_ratio > 0.5 or not probe.invariance_ok:
                self.fail(VERIFY_FAILURE, f"cone contraction: max ratio {probe.max_ratio:.6g} "
                                          f"at eps {probe.eps:g}")

    def execute(self) -> RunSummary:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        if self.command == "solve-positive":
            self.solve_cone("plus")
        elif self.command == "solve-negative":
            self.solve_cone("minus")
        elif self.command == "solve-sign-changing":
            self.solve_sign_changing()
        elif self.command == "solve-all":
            self.solve_all()
        elif self.command == "verify-lemmas":
            self.verify_lemmas()
        elif self.command == "deform-demo":
            self.deform_demo()
        elif self.command == "probe-cones":
            self.probe_cones()
        else:
            raise ConfigError("command", f"unknown command {self.command!r}")

        write_summary(self.output_dir / "summary.txt", self.summary)
        write_timings(self.output_dir / "timings.txt", self.summary.timings)
        if self.config.export_excel:
            export_summary_excel(self.summary, self.output_dir / "summary.xlsx")
        return self.summary


def run(command: str, config: RunConfig, output_dir: Optional[str] = None) -> RunSummary:
    """执行一个子命令并写出全部文件"""
    out = Path(output_dir or config.output_dir)
    return Runner(command, config, out).execute()


def exit_code(summary: RunSummary) -> int:
    kinds = {msg.split(":", 1)[0] for msg in summary.failures}
    if SOLVER_FAILURE in kinds:
        return EXIT_SOLVER
    if VERIFY_FAILURE in kinds:
        return EXIT_VERIFY
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="app.py",
        description="超线性 Dirichlet 问题 −Δu = f(u) 的正解、负解与变号解求解器",
    )
    parser.add_argument("command", choices=COMMANDS, help="子命令")
    parser.add_argument("--config", help="key = value 配置文件")
    parser.add_argument("--preset", help="内置预设名（配置文件中的键会覆盖预设）")
    parser.add_argument("--output", help="输出目录（默认取配置中的 output_dir）")
    parser.add_argument("--seed", type=int, help="覆盖配置中的随机种子")
    parser.add_argument("--verbose", "-v", action="store_true", help="输出 DEBUG 日志")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    overrides = {"seed": args.seed} if args.seed is not None else None
    try:
        config = resolve_config(args.preset, args.config, overrides)
        summary = run(args.command, config, args.output)
    except ConfigError as e:
        print(f"❌ 配置错误：{e}", file=sys.stderr)
        return EXIT_CONFIG

    code = exit_code(summary)
    if code == EXIT_OK:
        print(f"✓ {args.command} 完成，结果写入 {args.output or config.output_dir}")
    else:
        for msg in summary.failures:
            print(f"❌ {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())

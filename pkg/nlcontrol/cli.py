"""コマンドライン.

実験設定ファイルを読み込み、種類に応じて求解・スイープ・自己診断を
実行し、結果を出力ディレクトリに書き出す。

使用法:
    nlcontrol <kind> --config <path> [--out <dir>] [--seed <u64>]
        [--threads <k>]
    nlcontrol validate --config <path>

出力:
    results.csv / summary.json / manifest.json / run.log / fields/*.bin

終了コード:
    0 成功、2 設定の検証失敗、3 ソルバーの失敗と予期しない例外
    (未収束や判定の不合格も 3)
"""

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from nlcontrol.config.experiment import (
    EXPERIMENT_KINDS,
    ExperimentConfig,
    config_hash,
    read_config,
    validate_config,
    validate_file,
)
from nlcontrol.config.settings import (
    DATABASE_URL,
    FIELD_DIR_NAME,
    LOG_LEVEL,
    OUTPUT_DIR,
)
from nlcontrol.constants.numerics import EXIT_CODES
from nlcontrol.core.database import RunRecorder
from nlcontrol.core.exceptions import (
    ConfigValidationError,
    NLControlError,
    Violation,
)
from nlcontrol.discretization.grid import Field, Grid, lp_norm
from nlcontrol.discretization.operators import (
    NonlocalGradientOp,
    assemble_nl_gradient,
    dump_operator,
)
from nlcontrol.services.checks import run_checks
from nlcontrol.services.control import (
    nonconvex_control_scan,
    solve_control,
)
from nlcontrol.services.energy import eval_energy
from nlcontrol.services.localization import (
    constant_spread,
    estimate_poincare,
    gamma_proxy,
    nonconvex_sweep,
    operator_localization_probe,
    poincare_sweep,
    spread_passed,
    sweep,
    sweep_verdicts,
    write_sweep_outputs,
)
from nlcontrol.services.setup import (
    build_control_problem,
    build_energy_params,
    make_field,
)
from nlcontrol.services.state import multistart_state, solve_state_auto
from nlcontrol.utils.io import (
    save_field,
    write_json,
    write_manifest,
    write_table,
)
from nlcontrol.utils.logger import setup_logger

logger = logging.getLogger(__name__)

COMMANDS = EXPERIMENT_KINDS + ("validate",)


@dataclass
class RunOutcome:
    """1 回の実行の結果.

    ランナーは実行中にこのオブジェクトを埋めていくため、途中で例外が
    起きてもそれまでに書き出したファイルはマニフェストに残る。

    Attributes:
        artifacts (Dict[str, Path]): 書き出したファイル
        records (List[Any]): 結果データベースに記録するスイープ記録
        failed (bool): ソルバーの失敗 (未収束を含む) があるか
        summary (Dict[str, Any]): マニフェストに加える要約
        verdicts (Dict[str, bool]): 合否判定 (一つでも False なら失敗)
    """

    artifacts: Dict[str, Path] = field(default_factory=dict)
    records: List[Any] = field(default_factory=list)
    failed: bool = False
    summary: Dict[str, Any] = field(default_factory=dict)
    verdicts: Dict[str, bool] = field(default_factory=dict)

    def verdict(self, name: str, passed: bool) -> None:
        """判定を記録する (不合格はエラーとしてログに残す)."""
        self.verdicts[name] = bool(passed)
        if not passed:
            logger.error(f"判定に不合格: {name}")

    @property
    def passed(self) -> bool:
        """ソルバーの失敗がなく、全ての判定に合格したか."""
        return not self.failed and all(self.verdicts.values())


@dataclass
class _Problem:
    """格子上に具体化した状態問題."""

    grid: Grid
    op: NonlocalGradientOp
    config: ExperimentConfig

    @classmethod
    def build(cls, config: ExperimentConfig) -> "_Problem":
        grid = config.build_grid()
        op = assemble_nl_gradient(grid, config.kernel_spec())
        return cls(grid=grid, op=op, config=config)

    @property
    def params(self):
        return build_energy_params(self.grid, self.config.problem)

    @property
    def nonconvex(self) -> bool:
        return self.config.problem.density != "plaplacian"


def _save_fields(
    out_dir: Path, config: ExperimentConfig, fields: Dict[str, Field]
) -> Dict[str, Path]:
    if not config.write_fields:
        return {}
    folder = out_dir / FIELD_DIR_NAME
    return {
        f"field:{name}": save_field(folder / f"{name}.bin", f)
        for name, f in fields.items()
    }


def _maybe_dump(out_dir: Path, problem: _Problem) -> Dict[str, Path]:
    if not problem.config.dump_operator:
        return {}
    return {"operator": dump_operator(problem.op, out_dir / "operator.txt")}


def run_check(
    config: ExperimentConfig, out_dir: Path, outcome: RunOutcome
) -> None:
    """自己診断の全項目を実行する."""
    results = run_checks(config.seed)
    rows = [r.to_dict() for r in results]
    passed = all(r.passed for r in results)
    outcome.artifacts["results"] = write_table(
        out_dir / "results.csv", rows, ["name", "passed", "value", "threshold"]
    )
    outcome.artifacts["summary"] = write_json(
        out_dir / "summary.json", {"passed": passed, "checks": rows}
    )
    for r in results:
        level = logging.INFO if r.passed else logging.ERROR
        logger.log(level, f"{r.name}: {r.value:.3e} (<= {r.threshold:g})")
    outcome.summary["passed"] = passed
    outcome.verdict("checks", passed)


def run_solve_state(
    config: ExperimentConfig, out_dir: Path, outcome: RunOutcome
) -> None:
    """荷重を固定して状態方程式を解く.

    エネルギーの丸め誤差で止まった "stalled" は失敗としない。
    """
    problem = _Problem.build(config)
    params = problem.params
    g = make_field(problem.grid, config.problem.load)
    summary: Dict[str, Any] = {}
    if problem.nonconvex:
        result = multistart_state(
            g,
            problem.op,
            params,
            k=config.multistart,
            seed=config.seed,
            options=config.state,
            threads=config.threads,
        )
        u, report = result.best, result.reports[result.best_index]
        summary.update(
            best_index=result.best_index,
            energies=result.energies,
            energy_spread=result.spread,
        )
    else:
        u, report = solve_state_auto(
            g, problem.op, params, options=config.state
        )
    energy = eval_energy(u, g, problem.op, params)
    summary.update(
        report.to_dict(),
        energy=energy.total,
        density_energy=energy.density,
        load_energy=energy.load,
        state_norm=lp_norm(u, config.problem.p),
    )
    outcome.artifacts["results"] = report.write_history_csv(
        out_dir / "results.csv"
    )
    outcome.artifacts["summary"] = write_json(
        out_dir / "summary.json", summary
    )
    outcome.summary.update(status=report.status, energy=energy.total)
    outcome.failed = report.status == "max_iter"
    outcome.artifacts.update(_save_fields(out_dir, config, {"u": u, "g": g}))
    outcome.artifacts.update(_maybe_dump(out_dir, problem))


def run_solve_control(
    config: ExperimentConfig, out_dir: Path, outcome: RunOutcome
) -> None:
    """箱制約付き最適制御問題を解く.

    非凸密度では候補 (荷重とゼロ) の走査だけを行う。凸な密度では
    停留性の許容値に届かなかった終了 (max_iter / stalled) を失敗とする。
    """
    problem = _Problem.build(config)
    params = problem.params
    control = build_control_problem(problem.grid, config.problem)
    control.check_growth(config.kernel.s)
    if problem.nonconvex:
        candidates = [make_field(problem.grid, config.problem.load)]
        candidates.append(problem.grid.zeros())
        scan = nonconvex_control_scan(
            control,
            problem.op,
            params,
            candidates,
            k=config.multistart,
            seed=config.seed,
            options=config.state,
            threads=config.threads,
        )
        u, g = scan.best_state, scan.best_control
        rows = [
            {"candidate": i, "cost": c, "energy_spread": s}
            for i, (c, s) in enumerate(zip(scan.costs, scan.spreads))
        ]
        summary: Dict[str, Any] = {
            "best_index": scan.best_index,
            "best_cost": scan.costs[scan.best_index],
        }
        outcome.artifacts["results"] = write_table(
            out_dir / "results.csv", rows, list(rows[0])
        )
    else:
        u, g, report = solve_control(
            control, problem.op, params, config.control
        )
        summary = report.to_dict()
        outcome.artifacts["results"] = report.write_history_csv(
            out_dir / "results.csv"
        )
        outcome.failed = not report.converged
    outcome.artifacts["summary"] = write_json(
        out_dir / "summary.json", summary
    )
    outcome.summary.update(summary)
    outcome.artifacts.update(
        _save_fields(
            out_dir, config, {"u": u, "g": g, "u_des": control.u_des}
        )
    )
    outcome.artifacts.update(_maybe_dump(out_dir, problem))


def _recovery_bounds(records: Sequence[Any]) -> bool:
    """局所最小化元でのエネルギーが非局所最小値の上界か."""
    return all(
        r.recovery >= r.nonlocal_min - 1e-12 * max(1.0, abs(r.nonlocal_min))
        for r in records
        if r.ok
    )


def _loglog_slope(records: Sequence[Any], name: str) -> float:
    """log(指標) の log(値) に対する最小二乗の傾き."""
    pairs = [
        (r.value, r.metrics()[name])
        for r in records
        if r.ok and r.metrics()[name] > 0.0
    ]
    if len(pairs) < 2:
        return math.nan
    x, y = np.log(np.array(pairs)).T
    return float(np.polyfit(x, y, 1)[0])


def _prefixed(prefix: str, artifacts: Dict[str, Path]) -> Dict[str, Path]:
    return {f"{prefix}:{k}": v for k, v in artifacts.items()}


def run_sweep(
    config: ExperimentConfig, out_dir: Path, outcome: RunOutcome
) -> None:
    """s または δ の梯子に沿って局所化を調べる.

    凸な密度では、梯子点の失敗・未収束、傾向判定の不合格、回復方向の
    上界の破れ、Poincaré 定数の広がりの超過をいずれも失敗とする。
    """
    sweep_config = config.sweep_config()
    variable = sweep_config.variable
    if config.problem.density != "plaplacian":
        records = nonconvex_sweep(sweep_config)
        outcome.records.extend(records)
        outcome.artifacts.update(
            write_sweep_outputs(records, out_dir, variable, trends=False)
        )
        outcome.failed = any(not r.ok for r in records)
    else:
        records = sweep(sweep_config)
        outcome.records.extend(records)
        gate = records[0].gated_metrics() if records else None
        outcome.artifacts.update(
            write_sweep_outputs(records, out_dir, variable, gate=gate)
        )
        outcome.failed = any(not (r.ok and r.converged) for r in records)
        outcome.verdict("trends", sweep_verdicts(records, gate)[1])
    outcome.summary["points"] = len(records)

    if config.gamma:
        gamma = gamma_proxy(sweep_config)
        bounds = _recovery_bounds(gamma)
        outcome.artifacts.update(
            _prefixed(
                "gamma",
                write_sweep_outputs(
                    gamma,
                    out_dir / "gamma",
                    variable,
                    extra={"recovery_bounds": bounds},
                    gate=("gap",),
                ),
            )
        )
        outcome.summary["recovery_bounds"] = bounds
        outcome.failed = outcome.failed or any(not r.ok for r in gamma)
        outcome.verdict("recovery_bounds", bounds)
        outcome.verdict("gamma_trends", sweep_verdicts(gamma, ("gap",))[1])
    if config.poincare_ladder:
        estimates = poincare_sweep(sweep_config)
        spread = constant_spread(estimates)
        within = spread_passed(estimates)
        outcome.artifacts.update(
            _prefixed(
                "poincare",
                write_sweep_outputs(
                    estimates,
                    out_dir / "poincare",
                    variable,
                    trends=False,
                    extra={"spread": spread, "spread_passed": within},
                ),
            )
        )
        outcome.summary["poincare_spread"] = spread
        outcome.failed = outcome.failed or any(not r.ok for r in estimates)
        outcome.verdict("poincare_spread", within)


def run_poincare(
    config: ExperimentConfig, out_dir: Path, outcome: RunOutcome
) -> None:
    """Poincaré 定数を推定する (梯子があれば梯子点ごと)."""
    if config.ladder:
        sweep_config = config.sweep_config()
        records = poincare_sweep(sweep_config)
        outcome.records.extend(records)
        spread = constant_spread(records)
        within = spread_passed(records)
        outcome.artifacts.update(
            write_sweep_outputs(
                records,
                out_dir,
                sweep_config.variable,
                trends=False,
                extra={"spread": spread, "spread_passed": within},
            )
        )
        outcome.summary["spread"] = spread
        outcome.failed = any(not r.ok for r in records)
        outcome.verdict("poincare_spread", within)
        return
    problem = _Problem.build(config)
    estimate = estimate_poincare(
        problem.op, config.problem.p, seed=config.seed
    )
    row = {
        "constant": estimate.constant,
        "p": estimate.p,
        "method": estimate.method,
        "iterations": estimate.iterations,
        "lower_bound": estimate.lower_bound,
    }
    outcome.artifacts["results"] = write_table(
        out_dir / "results.csv", [row], list(row)
    )
    outcome.artifacts["summary"] = write_json(out_dir / "summary.json", row)
    outcome.artifacts.update(_maybe_dump(out_dir, problem))
    outcome.summary.update(row)


def run_operator_probe(
    config: ExperimentConfig, out_dir: Path, outcome: RunOutcome
) -> None:
    """滑らかな試験関数で作用素だけの収束を調べる.

    誤差が梯子に沿って狭義に減少すること、δ スイープでは log-log の
    傾きが 1 の 3 倍以内であることを判定する。
    """
    sweep_config = config.sweep_config()
    records = operator_localization_probe(
        sweep_config,
        u_test=config.probe_field,
        mass_normalized=config.mass_normalized,
    )
    outcome.records.extend(records)
    errors = [r.operator_error for r in records]
    decreasing = all(b < a for a, b in zip(errors, errors[1:]))
    extra: Dict[str, Any] = {"strictly_decreasing": decreasing}
    if sweep_config.variable == "delta":
        slope = _loglog_slope(records, "operator_error")
        extra["loglog_slope"] = slope
        outcome.verdict("loglog_slope", 1.0 / 3.0 <= slope <= 3.0)
    outcome.artifacts.update(
        write_sweep_outputs(
            records, out_dir, sweep_config.variable, extra=extra
        )
    )
    outcome.summary.update(extra)
    outcome.failed = any(not r.ok for r in records)
    outcome.verdict("strictly_decreasing", decreasing)


Runner = Callable[[ExperimentConfig, Path, RunOutcome], None]

RUNNERS: Dict[str, Runner] = {
    "check": run_check,
    "solve-state": run_solve_state,
    "solve-control": run_solve_control,
    "sweep-s": run_sweep,
    "sweep-delta": run_sweep,
    "poincare": run_poincare,
    "operator-probe": run_operator_probe,
}


def _parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="nlcontrol",
        description="Nonlocal-gradient optimal control experiments.",
    )
    parser.add_argument("kind", choices=COMMANDS)
    parser.add_argument("--config", type=Path, help="experiment YAML file")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--seed", type=int, help="override the seed")
    parser.add_argument("--threads", type=int, help="override threads")
    parser.add_argument("--log-level", default=LOG_LEVEL)
    parser.add_argument(
        "--database-url",
        default=DATABASE_URL,
        help="results database (empty string disables recording)",
    )
    return parser.parse_args(argv)


def _report_violations(violations: Sequence[Violation]) -> None:
    for v in violations:
        logger.error(f"設定の違反: {v.path or '<root>'}: {v.message}")


def validate(path: Path) -> List[Violation]:
    """設定ファイルの違反を全て列挙する (何も実行しない)."""
    violations = validate_file(path)
    report = [{"path": v.path, "message": v.message} for v in violations]
    sys.stdout.write(json.dumps(report, ensure_ascii=False, indent=2) + "\n")
    return violations


def _load(args: argparse.Namespace) -> ExperimentConfig:
    """CLI の引数を反映した設定を読み込み、検証する.

    Raises:
        ConfigValidationError: 設定に違反がある場合
    """
    if args.config is None:
        if args.kind != "check":
            raise ConfigValidationError(
                [Violation("--config", f"{args.kind} needs a config file")]
            )
        config = ExperimentConfig(kind="check")
    else:
        config = read_config(args.config)
    overrides: Dict[str, Any] = {"kind": args.kind}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    config = replace(config, **overrides)
    violations = validate_config(config)
    if violations:
        raise ConfigValidationError(violations)
    return config


def _output_dir(args: argparse.Namespace, config: ExperimentConfig) -> Path:
    if args.out is not None:
        return Path(args.out)
    if config.output_dir:
        return Path(config.output_dir)
    return OUTPUT_DIR / f"{config.kind}-{config_hash(config)[:8]}"


def run(args: argparse.Namespace) -> int:
    """設定を読み込んで実行し、終了コードを返す.

    どの例外で終わってもマニフェストを書き、実行記録を閉じる。
    """
    setup_logger("nlcontrol", args.log_level)
    try:
        config = _load(args)
    except ConfigValidationError as e:
        _report_violations(e.violations)
        return EXIT_CODES["validation"]

    out_dir = _output_dir(args, config)
    out_dir.mkdir(parents=True, exist_ok=True)
    setup_logger("nlcontrol", args.log_level, out_dir / "run.log")
    digest = config_hash(config)
    recorder = RunRecorder(args.database_url)
    recorder.start(config.kind, config.seed, digest, config.raw, str(out_dir))

    started = time.perf_counter()
    status, code = "solver", EXIT_CODES["solver"]
    outcome = RunOutcome()
    try:
        RUNNERS[config.kind](config, out_dir, outcome)
        if outcome.passed:
            status, code = "success", EXIT_CODES["success"]
    except ConfigValidationError as e:
        _report_violations(e.violations)
        status, code = "validation", EXIT_CODES["validation"]
    except NLControlError as e:
        logger.error(f"実行に失敗: {e}", exc_info=True)
    except Exception as e:
        logger.error(f"予期しないエラーで実行に失敗: {e}", exc_info=True)
    wall_time = time.perf_counter() - started

    write_manifest(
        out_dir,
        config.raw,
        {"total": wall_time},
        sorted(
            str(p.relative_to(out_dir)) for p in outcome.artifacts.values()
        ),
        extra={
            "kind": config.kind,
            "seed": config.seed,
            "threads": config.threads,
            "config_hash": digest,
            "status": status,
            "exit_code": code,
            "verdicts": outcome.verdicts,
            "summary": outcome.summary,
        },
    )
    recorder.add_points(outcome.records)
    recorder.finish(status, code, wall_time)
    logger.info(f"{config.kind} 完了: status={status}, out={out_dir}")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    """エントリポイント."""
    args = _parse_args(argv)
    if args.kind == "validate":
        setup_logger("nlcontrol", args.log_level)
        if args.config is None:
            logger.error("validate needs --config")
            return EXIT_CODES["validation"]
        violations = validate(args.config)
        return EXIT_CODES["validation"] if violations else 0
    return run(args)


if __name__ == "__main__":
    sys.exit(main())

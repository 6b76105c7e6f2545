"""局所化スイープ.

梯子点ごとに非局所の制御問題を解き、固定した局所参照問題の解と
共通の節点集合上で比較するモジュール。

主な機能:
    - sweep: 状態・勾配・制御・コスト・エネルギーの誤差
    - gamma_proxy: 固定荷重でのエネルギー最小値の差と回復方向の評価
    - nonconvex_sweep: 非凸密度での最良コストと状態の広がり (観察のみ)
"""

import logging
from dataclasses import dataclass, field
from typing import ClassVar, Dict, List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from nlcontrol.constants.numerics import REDUCED_STATE_TOL
from nlcontrol.core.exceptions import (
    ControlSolverError,
    NLControlError,
    StateSolverError,
)
from nlcontrol.discretization.grid import (
    Field,
    apply_collar_zero,
    transfer_nodes,
)
from nlcontrol.services.control import (
    ControlProblem,
    nonconvex_control_scan,
    project_box,
    solve_control,
    solve_control_local,
)
from nlcontrol.services.energy import EnergyParams, eval_energy
from nlcontrol.services.localization.config import (
    LadderPoint,
    LocalReference,
    SweepConfig,
    map_ladder,
)
from nlcontrol.services.setup import (
    build_control_problem,
    build_energy_params,
    make_field,
)
from nlcontrol.services.state import (
    SolveOptions,
    admissible_state_bound,
)
from nlcontrol.services.state.solver import (
    solve_state_auto,
    solve_state_local,
)

logger = logging.getLogger(__name__)

NAN = float("nan")


def weighted_lp(values: NDArray, weights: NDArray, p: float) -> float:
    """(Σ w |v|^p)^{1/p} (点ごとのノルムはユークリッド / フロベニウス)."""
    if values.shape[0] == 0:
        return 0.0
    pointwise = np.linalg.norm(values.reshape(values.shape[0], -1), axis=1)
    if np.isinf(p):
        return float(np.max(pointwise))
    return float(np.sum(weights * pointwise**p)) ** (1.0 / p)


@dataclass
class SweepRecord:
    """梯子点 1 つ分の誤差.

    失敗した点では指標は NaN で、error に診断が入る。

    Attributes:
        value (float): スイープ変数の値
        state_error (float): ‖u - u_loc‖_{L^p}
        gradient_error (float): ‖Du - ∇u_loc‖_{L^p}
        control_error (float): ‖g - g_loc‖_{L^{p'}}
        control_errors_r (Dict[float, float]): ‖g - g_loc‖_{L^r}
        cost (float): 非局所問題の最終コスト
        cost_gap (float): |𝓕(u, g) - 𝓕(u_loc, g_loc)|
        energy_gap (float): |𝒲_g(u) - 𝒲^loc_{g_loc}(u_loc)|
        status (str): 制御ソルバーの状態 ("failed" は例外)
        iterations (int): 制御ソルバーの反復回数
        error (Optional[str]): 失敗時の診断
    """

    METRICS: ClassVar[Tuple[str, ...]] = (
        "state_error",
        "gradient_error",
        "control_error",
        "cost_gap",
        "energy_gap",
    )

    value: float
    r_list: Tuple[float, ...] = ()
    state_error: float = NAN
    gradient_error: float = NAN
    control_error: float = NAN
    control_errors_r: Dict[float, float] = field(default_factory=dict)
    cost: float = NAN
    cost_gap: float = NAN
    energy_gap: float = NAN
    status: str = "failed"
    iterations: int = 0
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        """指標が揃っているか."""
        return self.error is None

    @property
    def converged(self) -> bool:
        """制御ソルバーが停留性の許容値以下で終了したか."""
        return self.status == "converged"

    def metrics(self) -> Dict[str, float]:
        """指標名と値 (L^r 誤差は control_error_L{r})."""
        out = {name: getattr(self, name) for name in self.METRICS}
        for r in self.r_list:
            out[f"control_error_L{r:g}"] = self.control_errors_r.get(r, NAN)
        return out

    def gated_metrics(self) -> Tuple[str, ...]:
        """傾向判定の合否に使う指標 (energy_gap は記録のみ)."""
        return tuple(name for name in self.metrics() if name != "energy_gap")

    def as_row(self) -> Dict[str, object]:
        """CSV の 1 行."""
        return {
            "value": self.value,
            **self.metrics(),
            "cost": self.cost,
            "status": self.status,
            "iterations": self.iterations,
            "error": self.error or "",
        }


@dataclass(frozen=True)
class _LocalSolution:
    """局所参照問題の解."""

    u: Field
    g: Field
    cost: float
    energy: float


@dataclass(frozen=True)
class _Comparison:
    """局所参照格子の節点で非局所解を比較する."""

    reference: LocalReference
    variable: str
    p: float

    @property
    def omega_nodes(self) -> NDArray[np.int64]:
        """参照格子の Ω 節点."""
        return self.reference.grid.omega_indices

    def nodal_error(
        self, point: LadderPoint, a: Field, b: Field, p: float
    ) -> float:
        """Ω 節点上の ‖a - b‖_{L^p} (a は梯子点、b は参照格子の場)."""
        mapped = transfer_nodes(
            self.reference.grid, point.grid, self.omega_nodes
        )
        diff = a.values[mapped] - b.values[self.omega_nodes]
        weights = np.full(mapped.shape[0], point.grid.cell_volume)
        return weighted_lp(diff, weights, p)

    def gradient_error(
        self, point: LadderPoint, u: Field, u_loc: Field
    ) -> float:
        """局所作用素の評価節点上の ‖Du - ∇u_loc‖_{L^p}.

        δ スイープでは Du に χ_{Ω_{-δ}} を掛ける。
        """
        grid = point.grid
        full = np.zeros((grid.num_nodes, grid.n, grid.n))
        full[point.op.eval_nodes] = point.op.apply(u.values)
        if self.variable == "delta":
            full[~grid.free_mask] = 0.0
        local = self.reference.op
        mapped = transfer_nodes(self.reference.grid, grid, local.eval_nodes)
        diff = full[mapped] - local.apply(u_loc.values)
        return weighted_lp(diff, local.quad_weights, self.p)


def _solve_reference(
    config: SweepConfig, reference: LocalReference
) -> _LocalSolution:
    """局所参照問題を一度だけ解く."""
    problem = build_control_problem(reference.grid, config.problem)
    params = build_energy_params(reference.grid, config.problem)
    u, g, report = solve_control_local(
        problem, reference.op, params, reference.domain, config.control
    )
    energy = eval_energy(u, g, reference.op, params).total
    logger.info(
        f"局所参照問題を求解: status={report.status}, cost={report.cost:.15g}"
    )
    if not report.converged:
        raise ControlSolverError(
            f"local reference control did not converge "
            f"(status={report.status}, "
            f"stationarity={report.stationarity:.3e})"
        )
    return _LocalSolution(u=u, g=g, cost=report.cost, energy=energy)


def _sweep_point(
    config: SweepConfig,
    comparison: _Comparison,
    local: _LocalSolution,
    value: float,
) -> SweepRecord:
    """梯子点 1 つ分の求解と比較."""
    spec = config.problem
    record = SweepRecord(value=value, r_list=tuple(spec.r_list))
    try:
        point = config.point(value)
        problem = build_control_problem(point.grid, spec)
        problem.check_growth(point.kernel.s)
        params = build_energy_params(point.grid, spec)
        u, g, report = solve_control(problem, point.op, params, config.control)
    except NLControlError as exc:
        logger.error(f"梯子点 {value:g} の求解に失敗: {exc}", exc_info=True)
        record.error = f"{type(exc).__name__}: {exc}"
        return record

    record.status = report.status
    record.iterations = report.iterations
    record.cost = report.cost
    record.state_error = comparison.nodal_error(point, u, local.u, spec.p)
    record.gradient_error = comparison.gradient_error(point, u, local.u)
    record.control_error = comparison.nodal_error(
        point, g, local.g, problem.penalty_exponent
    )
    record.control_errors_r = {
        r: comparison.nodal_error(point, g, local.g, r) for r in spec.r_list
    }
    record.cost_gap = abs(report.cost - local.cost)
    energy = eval_energy(u, g, point.op, params).total
    record.energy_gap = abs(energy - local.energy)
    logger.info(
        f"梯子点 {value:g}: state={record.state_error:.3e}, "
        f"grad={record.gradient_error:.3e}, "
        f"control={record.control_error:.3e}, "
        f"cost_gap={record.cost_gap:.3e}"
    )
    return record


def sweep(config: SweepConfig) -> List[SweepRecord]:
    """スイープを実行し、梯子の順に記録を返す.

    局所参照問題は一度だけ解き、各梯子点の非局所解は参照格子の
    節点集合に制限して比較する。梯子点の失敗はその記録に残し、
    スイープは続行する。

    Args:
        config (SweepConfig): スイープの設定 (凸な p-Laplacian 密度)

    Returns:
        List[SweepRecord]: 梯子点ごとの記録

    Raises:
        NLControlError: 局所参照問題の求解に失敗した場合 (未収束を含む)
    """
    reference = config.reference()
    local = _solve_reference(config, reference)
    comparison = _Comparison(reference, config.variable, config.problem.p)
    records = map_ladder(
        lambda value: _sweep_point(config, comparison, local, value),
        config.ladder,
        config.threads,
    )
    failed = sum(1 for r in records if not r.ok)
    logger.info(
        f"{config.variable} スイープ完了: points={len(records)}, "
        f"failed={failed}"
    )
    return records


@dataclass
class GammaRecord:
    """固定荷重でのエネルギー最小値の比較.

    Attributes:
        value (float): スイープ変数の値
        nonlocal_min (float): min 𝒲^{δ,s}_g
        local_min (float): min 𝒲^loc_g
        gap (float): |nonlocal_min - local_min|
        recovery (float): 局所最小化元での 𝒲^{δ,s}_g
        recovery_gap (float): |recovery - local_min|
        error (Optional[str]): 失敗時の診断
    """

    METRICS: ClassVar[Tuple[str, ...]] = ("gap", "recovery_gap")

    value: float
    nonlocal_min: float = NAN
    local_min: float = NAN
    gap: float = NAN
    recovery: float = NAN
    recovery_gap: float = NAN
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        """指標が揃っているか."""
        return self.error is None

    def metrics(self) -> Dict[str, float]:
        """指標名と値."""
        return {name: getattr(self, name) for name in self.METRICS}

    def as_row(self) -> Dict[str, object]:
        """CSV の 1 行."""
        return {
            "value": self.value,
            "nonlocal_min": self.nonlocal_min,
            "local_min": self.local_min,
            "recovery": self.recovery,
            **self.metrics(),
            "error": self.error or "",
        }


def _exact_state_options() -> SolveOptions:
    """最小値比較に使う状態ソルバーのオプション."""
    return SolveOptions(tol=REDUCED_STATE_TOL, method="newton")


def _box_load(problem: ControlProblem, config: SweepConfig) -> Field:
    """設定の荷重を箱へ射影した g ∈ Z_ad."""
    g = make_field(problem.grid, config.problem.load)
    return project_box(g, problem.lower, problem.upper)


def _gamma_point(
    config: SweepConfig,
    reference: LocalReference,
    u_loc: Field,
    local_min: float,
    value: float,
) -> GammaRecord:
    """梯子点 1 つ分のエネルギー比較."""
    record = GammaRecord(value=value, local_min=local_min)
    try:
        point = config.point(value)
        params = build_energy_params(point.grid, config.problem)
        problem = build_control_problem(point.grid, config.problem)
        g = _box_load(problem, config)
        u, _ = solve_state_auto(
            g,
            point.op,
            params,
            options=_exact_state_options(),
            rtol=REDUCED_STATE_TOL,
        )
        record.nonlocal_min = eval_energy(u, g, point.op, params).total

        nodes = reference.grid.omega_indices
        mapped = transfer_nodes(reference.grid, point.grid, nodes)
        recovered = point.grid.zeros()
        recovered.values[mapped] = u_loc.values[nodes]
        recovered = apply_collar_zero(recovered)
        record.recovery = eval_energy(recovered, g, point.op, params).total
    except NLControlError as exc:
        logger.error(f"梯子点 {value:g} の求解に失敗: {exc}", exc_info=True)
        record.error = f"{type(exc).__name__}: {exc}"
        return record

    record.gap = abs(record.nonlocal_min - local_min)
    record.recovery_gap = abs(record.recovery - local_min)
    logger.info(
        f"梯子点 {value:g}: min={record.nonlocal_min:.15g}, "
        f"gap={record.gap:.3e}, recovery={record.recovery:.15g}"
    )
    return record


def gamma_proxy(config: SweepConfig) -> List[GammaRecord]:
    """固定荷重 g でのエネルギー最小値の収束を調べる.

    各梯子点で min 𝒲^{δ,s}_g と min 𝒲^loc_g の差を記録し、局所最小化元
    (カラーをゼロにしたもの) での非局所エネルギーも評価する。後者は
    常に非局所最小値以上となる。

    Args:
        config (SweepConfig): スイープの設定 (problem.load が荷重)

    Returns:
        List[GammaRecord]: 梯子点ごとの記録

    Raises:
        StateSolverError: 密度が p-Laplacian でない場合
    """
    if config.problem.density != "plaplacian":
        raise StateSolverError(
            "gamma_proxy compares exact minima and requires the "
            "p-Laplacian density"
        )
    reference = config.reference()
    params = build_energy_params(reference.grid, config.problem)
    problem = build_control_problem(reference.grid, config.problem)
    g = _box_load(problem, config)
    u_loc, _ = solve_state_local(
        g,
        reference.op,
        params,
        reference.domain,
        options=_exact_state_options(),
    )
    local_min = eval_energy(u_loc, g, reference.op, params).total
    logger.info(f"局所エネルギー最小値: {local_min:.15g}")
    return map_ladder(
        lambda value: _gamma_point(config, reference, u_loc, local_min, value),
        config.ladder,
        config.threads,
    )


@dataclass
class NonconvexRecord:
    """非凸密度での観察記録.

    Attributes:
        value (float): スイープ変数の値
        best_cost (float): 候補中の最良コスト
        energy_spread (float): 最良候補の多始点状態のエネルギーの広がり
        best_index (int): 最良候補の番号
        admissible (bool): 全状態がゼロ場のエネルギー以下か
        error (Optional[str]): 失敗時の診断
    """

    METRICS: ClassVar[Tuple[str, ...]] = ("best_cost", "energy_spread")

    value: float
    best_cost: float = NAN
    energy_spread: float = NAN
    best_index: int = -1
    admissible: bool = False
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        """指標が揃っているか."""
        return self.error is None

    def metrics(self) -> Dict[str, float]:
        """指標名と値."""
        return {name: getattr(self, name) for name in self.METRICS}

    def as_row(self) -> Dict[str, object]:
        """CSV の 1 行."""
        return {
            "value": self.value,
            **self.metrics(),
            "best_index": self.best_index,
            "admissible": self.admissible,
            "error": self.error or "",
        }


def _nonconvex_point(config: SweepConfig, value: float) -> NonconvexRecord:
    """梯子点 1 つ分の候補走査."""
    record = NonconvexRecord(value=value)
    try:
        point = config.point(value)
        params: EnergyParams = build_energy_params(point.grid, config.problem)
        problem = build_control_problem(point.grid, config.problem)
        candidates = [make_field(point.grid, config.problem.load)]
        candidates.append(point.grid.zeros())
        scan = nonconvex_control_scan(
            problem,
            point.op,
            params,
            candidates,
            k=config.multistart,
            seed=config.seed,
        )
        bound = admissible_state_bound(
            scan.best_run, scan.best_control, point.op, params
        )
    except NLControlError as exc:
        logger.error(f"梯子点 {value:g} の走査に失敗: {exc}", exc_info=True)
        record.error = f"{type(exc).__name__}: {exc}"
        return record
    record.best_cost = scan.costs[scan.best_index]
    record.energy_spread = scan.spreads[scan.best_index]
    record.best_index = scan.best_index
    record.admissible = bound.holds
    return record


def nonconvex_sweep(config: SweepConfig) -> List[NonconvexRecord]:
    """非凸密度の梯子で、最良コストと状態の広がりを記録する.

    大域最適性も収束も主張しない観察用の出力。
    """
    records = map_ladder(
        lambda value: _nonconvex_point(config, value),
        config.ladder,
        config.threads,
    )
    inadmissible = [r.value for r in records if r.ok and not r.admissible]
    if inadmissible:
        logger.warning(
            f"ゼロ場より高いエネルギーの状態を含む梯子点: {inadmissible}"
        )
    return records

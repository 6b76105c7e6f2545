"""非局所 Poincaré 定数の推定.

主な機能:
    - estimate_poincare: Ĉ = max ‖u‖_{L^p} / ‖Du‖_{L^p} の推定
    - poincare_sweep: 梯子点ごとの Ĉ と max/min 比
    - spread_passed: max/min 比が上限以下かの判定
"""

import logging
from dataclasses import dataclass
from typing import ClassVar, Dict, List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy import optimize
from scipy.sparse import linalg as splinalg

from nlcontrol.constants.numerics import (
    P_REGULARIZATION,
    POINCARE_ASCENT_STARTS,
    POINCARE_EIG_TOL,
    POINCARE_MAX_ITER,
    POINCARE_SPREAD_LIMIT,
)
from nlcontrol.core.exceptions import EstimationError, NLControlError
from nlcontrol.discretization.operators import AnyGradientOp
from nlcontrol.services.energy import (
    EnergyParams,
    constant_coefficient,
    eval_hessian_matrix,
    free_dofs,
)
from nlcontrol.services.localization.config import SweepConfig, map_ladder
from nlcontrol.services.localization.sweep import NAN

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PoincareEstimate:
    """Poincaré 定数の推定結果.

    Attributes:
        constant (float): Ĉ
        p (float): 指数
        method (str): "inverse-power" / "ascent"
        iterations (int): 反復回数 (上昇法では全始点の合計)
        lower_bound (bool): 真の定数の下界としてのみ有効か
    """

    constant: float
    p: float
    method: str
    iterations: int
    lower_bound: bool


def _normal_operator(op: AnyGradientOp):
    """自由度上の Gᵀ diag(w) G / h^n."""
    grid = op.grid
    params = EnergyParams(p=2.0, coefficient=constant_coefficient(grid, 1.0))
    K = eval_hessian_matrix(grid.zeros(), op, params)
    return (K / grid.cell_volume).tocsc()


def _smallest_eigenpair(
    op: AnyGradientOp, tol: float, max_iter: int
) -> Tuple[float, NDArray, int]:
    """逆べき乗法で正規作用素の最小固有対を求める.

    Raises:
        EstimationError: 反復上限に達した場合
    """
    K = _normal_operator(op)
    lu = splinalg.splu(K)
    # 左右対称な始点では反対称な固有ベクトルに届かない
    x = np.linspace(1.0, 2.0, K.shape[0])
    x /= np.linalg.norm(x)
    eig = float(x @ (K @ x))
    for iteration in range(1, max_iter + 1):
        y = lu.solve(x)
        x = y / np.linalg.norm(y)
        new = float(x @ (K @ x))
        if abs(new - eig) <= tol * abs(new):
            return new, x, iteration
        eig = new
    raise EstimationError(
        f"inverse power iteration did not reach tol={tol:g} "
        f"in {max_iter} iterations (eigenvalue {eig:.12g})"
    )


def _log_ratio(op: AnyGradientOp, p: float, eps: float):
    """自由度ベクトル x ↦ (-log(‖u‖_p/‖Du‖_p), 勾配)."""
    grid = op.grid
    dofs = free_dofs(op)
    weights = op.quad_weights
    size = grid.num_nodes * grid.n

    def objective(x: NDArray) -> Tuple[float, NDArray]:
        flat = np.zeros(size)
        flat[dofs] = x
        values = flat.reshape(grid.num_nodes, grid.n)
        Du = op.apply(values)
        ru = np.sqrt(np.sum(values * values, axis=1) + eps**2)
        rD = np.sqrt(np.sum(Du * Du, axis=(1, 2)) + eps**2)
        Su = float(np.sum(ru**p)) * grid.cell_volume
        SD = float(np.sum(weights * rD**p))
        value = (np.log(Su) - np.log(SD)) / p
        gu = grid.cell_volume * ru[:, None] ** (p - 2.0) * values / Su
        gD = op.adjoint((weights * rD ** (p - 2.0))[:, None, None] * Du) / SD
        grad = (gu - gD).reshape(-1)[dofs]
        return -value, -grad

    return objective


def estimate_poincare(
    op: AnyGradientOp,
    p: float = 2.0,
    seed: int = 0,
    starts: int = POINCARE_ASCENT_STARTS,
    tol: float = POINCARE_EIG_TOL,
    max_iter: int = POINCARE_MAX_ITER,
) -> PoincareEstimate:
    """自由度空間上の Ĉ = max ‖u‖_{L^p} / ‖Du‖_{L^p} を推定する.

    p = 2 では正規作用素 Gᵀ diag(w) G / h^n の最小固有値 λ から
    Ĉ = λ^{-1/2} を求める。p ≠ 2 では固有対は求めず、定数場 (カラーは
    ゼロ) と seed から作った乱数始点で比の対数を L-BFGS-B で最大化し、
    最大値を下界として返す。

    Args:
        op (AnyGradientOp): 勾配作用素 (格子は op.grid)
        p (float): 指数
        seed (int): 上昇法の乱数シード
        starts (int): 上昇法の始点数
        tol (float): 固有値の相対許容値
        max_iter (int): 反復上限

    Returns:
        PoincareEstimate: 推定結果

    Raises:
        EstimationError: 逆べき乗法が上限に達した場合
    """
    if p == 2.0:
        eig, _, iterations = _smallest_eigenpair(op, tol, max_iter)
        constant = float(1.0 / np.sqrt(eig))
        logger.info(f"Poincaré 定数 (p=2): C={constant:.12g}, iter={iterations}")
        return PoincareEstimate(
            constant=constant,
            p=p,
            method="inverse-power",
            iterations=iterations,
            lower_bound=False,
        )

    objective = _log_ratio(op, p, P_REGULARIZATION)
    rng = np.random.default_rng(seed)
    size = free_dofs(op).shape[0]
    inits = [np.ones(size)] + [
        rng.standard_normal(size) for _ in range(max(starts - 1, 0))
    ]
    best = -np.inf
    total = 0
    for index, x0 in enumerate(inits):
        result = optimize.minimize(
            objective,
            x0,
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": max_iter},
        )
        total += int(result.nit)
        if not result.success:
            logger.warning(f"上昇法の始点 {index} が未収束: {result.message}")
        best = max(best, float(-result.fun))
    constant = float(np.exp(best))
    logger.info(
        f"Poincaré 定数の下界 (p={p:g}): C>={constant:.12g}, "
        f"starts={len(inits)}"
    )
    return PoincareEstimate(
        constant=constant,
        p=p,
        method="ascent",
        iterations=total,
        lower_bound=True,
    )


@dataclass
class PoincareRecord:
    """梯子点 1 つ分の Poincaré 定数.

    Attributes:
        value (float): スイープ変数の値
        constant (float): Ĉ
        lower_bound (bool): 下界としてのみ有効か
        iterations (int): 反復回数
        error (Optional[str]): 失敗時の診断
    """

    METRICS: ClassVar[Tuple[str, ...]] = ("constant",)

    value: float
    constant: float = NAN
    lower_bound: bool = False
    iterations: int = 0
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        """指標が揃っているか."""
        return self.error is None

    def metrics(self) -> Dict[str, float]:
        """指標名と値."""
        return {"constant": self.constant}

    def as_row(self) -> Dict[str, object]:
        """CSV の 1 行."""
        return {
            "value": self.value,
            **self.metrics(),
            "lower_bound": self.lower_bound,
            "iterations": self.iterations,
            "error": self.error or "",
        }


def poincare_sweep(config: SweepConfig) -> List[PoincareRecord]:
    """梯子点ごとに Ĉ を推定する."""

    def _run(value: float) -> PoincareRecord:
        try:
            point = config.point(value)
            estimate = estimate_poincare(
                point.op, config.problem.p, seed=config.seed
            )
        except NLControlError as exc:
            logger.error(f"梯子点 {value:g} の推定に失敗: {exc}", exc_info=True)
            return PoincareRecord(
                value=value, error=f"{type(exc).__name__}: {exc}"
            )
        return PoincareRecord(
            value=value,
            constant=estimate.constant,
            lower_bound=estimate.lower_bound,
            iterations=estimate.iterations,
        )

    return map_ladder(_run, config.ladder, config.threads)


def constant_spread(records: List[PoincareRecord]) -> float:
    """max(Ĉ) / min(Ĉ) (有効な記録のみ、無ければ NaN)."""
    values = [r.constant for r in records if r.ok]
    if not values:
        return NAN
    return max(values) / min(values)


def spread_passed(
    records: List[PoincareRecord], limit: float = POINCARE_SPREAD_LIMIT
) -> bool:
    """全梯子点で推定でき、max(Ĉ) / min(Ĉ) ≤ limit か."""
    if not records or not all(r.ok for r in records):
        return False
    return constant_spread(records) <= limit

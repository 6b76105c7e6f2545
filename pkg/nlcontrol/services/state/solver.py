"""状態方程式ソルバー.

エネルギー W_g を自由度上で最小化し、解写像 g ↦ S(g) を実現する。

主な機能:
    - solve_state_p2: p = 2 の対称正定値系を共役勾配法で解く
    - FactorizedP2Solver: p = 2 の系を一度分解して繰り返し直接解く
    - solve_state: L-BFGS (または Newton 仕上げ) と Armijo バックトラック
    - solve_state_local: 局所参照問題 (Ω_{-δ} または Ω 上の Dirichlet 問題)
    - solve_state_auto: p に応じて上記を選択する
"""

import logging
import time
from collections import deque
from enum import Enum
from typing import Deque, Optional, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.sparse import linalg as splinalg

from nlcontrol.constants.numerics import (
    CG_RTOL,
    ENERGY_NOISE_FLOOR,
    NEWTON_MAX_ITER,
    NEWTON_SWITCH_TOL,
)
from nlcontrol.core.exceptions import (
    CGStagnationError,
    DensityError,
    GridError,
    LineSearchError,
    StateSolverError,
)
from nlcontrol.discretization.grid import Field, lp_norm
from nlcontrol.discretization.operators import AnyGradientOp, LocalGradientOp
from nlcontrol.services.energy import (
    EnergyParams,
    energy_and_gradient,
    eval_hessian_matrix,
    free_dofs,
)
from nlcontrol.services.state.report import SolveOptions, SolveReport

logger = logging.getLogger(__name__)

Pair = Tuple[NDArray, NDArray, float]


class LocalDomain(str, Enum):
    """局所参照問題の領域."""

    DEFLATED = "omega-minus-delta"  # s スイープ
    FULL = "omega"  # δ スイープ


class _FreeDofProblem:
    """自由度ベクトルと全節点の場を相互に変換する最小化問題."""

    def __init__(
        self, g: Field, op: AnyGradientOp, params: EnergyParams
    ) -> None:
        """初期化."""
        self.op = op
        self.params = params
        self.grid = op.grid
        self.g_values = g.values
        self.dofs = free_dofs(op)
        self.sqrt_cell = np.sqrt(op.grid.cell_volume)

    @property
    def size(self) -> int:
        """自由度の数."""
        return int(self.dofs.shape[0])

    def to_values(self, x: NDArray) -> NDArray:
        """自由度ベクトルを (N, n) の節点値にゼロ拡張する."""
        flat = np.zeros(self.grid.num_nodes * self.grid.n)
        flat[self.dofs] = x
        return flat.reshape(self.grid.num_nodes, self.grid.n)

    def from_values(self, values: NDArray) -> NDArray:
        """節点値から自由度ベクトルを取り出す."""
        return np.asarray(values, dtype=float).reshape(-1)[self.dofs].copy()

    def to_field(self, x: NDArray) -> Field:
        """自由度ベクトルを場に変換する."""
        return Field(self.grid, self.to_values(x))

    def evaluate(self, x: NDArray) -> Tuple[float, NDArray]:
        """エネルギーと自由度上のユークリッド勾配."""
        energy, grad = energy_and_gradient(
            self.to_values(x), self.g_values, self.op, self.params
        )
        return energy, grad.reshape(-1)[self.dofs]

    def variation_norm(self, grad: NDArray) -> float:
        """ユークリッド勾配から第一変分の L² ノルムを求める."""
        return float(np.linalg.norm(grad)) / self.sqrt_cell


def _line_search(
    problem: _FreeDofProblem,
    x: NDArray,
    f: float,
    grad: NDArray,
    direction: NDArray,
    options: SolveOptions,
) -> Tuple[NDArray, float, NDArray, int, bool]:
    """Armijo バックトラック.

    予測減少量がエネルギーの丸め誤差 (1e-13·max(1, |f|)) を下回ったら
    非増加な点を受理し、それも無ければ停滞として現在点を返す。

    Returns:
        Tuple: (x, f, grad, バックトラック回数, 停滞したか)

    Raises:
        LineSearchError: 最大回数のバックトラックで受理できない場合
    """
    slope = float(grad @ direction)
    floor = ENERGY_NOISE_FLOOR * max(1.0, abs(f))
    alpha = 1.0
    for count in range(options.max_backtracks + 1):
        x_new = x + alpha * direction
        try:
            f_new, g_new = problem.evaluate(x_new)
        except DensityError:
            f_new, g_new = np.inf, grad
        if f_new <= f + options.c1 * alpha * slope:
            return x_new, f_new, g_new, count, False
        if -alpha * slope < floor:
            if f_new <= f:
                return x_new, f_new, g_new, count, False
            return x, f, grad, count, True
        alpha *= options.backtrack
    raise LineSearchError(
        f"Armijo search failed after {options.max_backtracks} backtracks "
        f"(energy {f:.12g}, slope {slope:.3e})"
    )


def _two_loop(grad: NDArray, pairs: Deque[Pair]) -> NDArray:
    """L-BFGS の二重ループで探索方向 -H grad を求める."""
    q = -grad.copy()
    if not pairs:
        return q / max(float(np.linalg.norm(grad)), 1e-300)
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    s, y, _ = pairs[-1]
    r = q * (float(s @ y) / float(y @ y))
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * float(y @ r)
        r += s * (a - b)
    return r


def _lbfgs(
    problem: _FreeDofProblem,
    x: NDArray,
    options: SolveOptions,
    report: SolveReport,
    tol: float,
    max_iter: int,
) -> NDArray:
    """L-BFGS で tol まで反復し最終点を返す (report を更新する)."""
    f, grad = problem.evaluate(x)
    norm = problem.variation_norm(grad)
    start = report.iterations
    if not report.history:
        report.record(0, f, norm)
    pairs: Deque[Pair] = deque(maxlen=options.memory)
    iteration = start
    while norm > tol:
        if iteration - start >= max_iter:
            report.status = "max_iter"
            return x
        direction = _two_loop(grad, pairs)
        if float(grad @ direction) >= 0.0:
            pairs.clear()
            direction = _two_loop(grad, pairs)
        x_new, f_new, g_new, count, stalled = _line_search(
            problem, x, f, grad, direction, options
        )
        report.backtracks += count
        if stalled:
            report.status = "stalled"
            logger.warning(
                f"エネルギーの丸め誤差で停滞: iter={iteration}, "
                f"norm={norm:.3e}, tol={tol:.3e}"
            )
            return x
        s, y = x_new - x, g_new - grad
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            pairs.append((s, y, 1.0 / sy))
        x, f, grad = x_new, f_new, g_new
        norm = problem.variation_norm(grad)
        iteration += 1
        report.record(iteration, f, norm)
        logger.debug(f"L-BFGS iter={iteration} E={f:.15g} |δE|={norm:.3e}")
    report.status = "converged"
    return x


def _newton(
    problem: _FreeDofProblem,
    x: NDArray,
    options: SolveOptions,
    report: SolveReport,
    tol: float,
) -> NDArray:
    """疎直接法によるニュートン反復 (Armijo 付き)."""
    f, grad = problem.evaluate(x)
    norm = problem.variation_norm(grad)
    iteration = report.iterations
    for _ in range(NEWTON_MAX_ITER):
        if norm <= tol:
            report.status = "converged"
            return x
        hessian = eval_hessian_matrix(
            problem.to_field(x), problem.op, problem.params
        )
        direction = splinalg.spsolve(hessian.tocsc(), -grad)
        if not np.all(np.isfinite(direction)) or grad @ direction >= 0.0:
            direction = -grad
        x_new, f, grad, count, stalled = _line_search(
            problem, x, f, grad, direction, options
        )
        report.backtracks += count
        if stalled:
            report.status = "stalled"
            return x
        x = x_new
        norm = problem.variation_norm(grad)
        iteration += 1
        report.record(iteration, f, norm)
        logger.debug(f"Newton iter={iteration} E={f:.15g} |δE|={norm:.3e}")
    report.status = "converged" if norm <= tol else "max_iter"
    return x


def _load_scale(g: Field) -> float:
    """許容値の尺度 max(1, ‖g‖_{L²})."""
    return max(1.0, lp_norm(g, 2.0))


def solve_state(
    g: Field,
    op: AnyGradientOp,
    params: EnergyParams,
    init: Optional[Field] = None,
    options: Optional[SolveOptions] = None,
) -> Tuple[Field, SolveReport]:
    """エネルギー最小化により状態を求める.

    Args:
        g (Field): 荷重
        op (AnyGradientOp): 勾配作用素
        params (EnergyParams): エネルギーのパラメータ
        init (Optional[Field]): 初期値 (自由度以外は無視される)
        options (Optional[SolveOptions]): ソルバーのオプション

    Returns:
        Tuple[Field, SolveReport]: 状態 (自由度以外でゼロ) と実行記録

    Raises:
        LineSearchError: Armijo 探索の失敗
        StateSolverError: 未知の手法、または Newton が使えない密度
    """
    options = options or SolveOptions()
    started = time.perf_counter()
    problem = _FreeDofProblem(g, op, params)
    x = (
        np.zeros(problem.size)
        if init is None
        else problem.from_values(init.values)
    )
    tol = options.tol * _load_scale(g)
    report = SolveReport(method=options.method)

    if options.method == "lbfgs":
        x = _lbfgs(problem, x, options, report, tol, options.max_iter)
    elif options.method == "newton":
        if not params.is_plaplacian:
            raise StateSolverError("newton requires the p-Laplacian density")
        switch = max(NEWTON_SWITCH_TOL * _load_scale(g), tol)
        x = _lbfgs(problem, x, options, report, switch, options.max_iter)
        if report.status != "max_iter":
            x = _newton(problem, x, options, report, tol)
    else:
        raise StateSolverError(f"unknown state method {options.method!r}")

    report.wall_time = time.perf_counter() - started
    if report.status == "max_iter":
        logger.warning(
            f"状態ソルバーが最大反復に到達: |δE|={report.variation_norm:.3e}"
        )
    logger.debug(
        f"状態を求解: method={options.method}, status={report.status}, "
        f"iter={report.iterations}, E={report.energy:.15g}"
    )
    return problem.to_field(x), report


def solve_state_p2(
    g: Field,
    op: AnyGradientOp,
    params: EnergyParams,
    rtol: float = CG_RTOL,
) -> Tuple[Field, SolveReport]:
    """p = 2 の状態方程式を共役勾配法で解く.

    自由度上の系 K u = h^n g (K = Dᵀ diag(w 𝔸⊗I) D) を解く。

    Args:
        g (Field): 荷重
        op (AnyGradientOp): 勾配作用素
        params (EnergyParams): p = 2 の p-Laplacian パラメータ
        rtol (float): 相対残差の許容値

    Returns:
        Tuple[Field, SolveReport]: 状態と実行記録

    Raises:
        StateSolverError: p ≠ 2 またはユーザー定義密度の場合
        CGStagnationError: 共役勾配法が収束しない場合
    """
    if params.p != 2.0 or not params.is_plaplacian:
        raise StateSolverError("solve_state_p2 requires p = 2 p-Laplacian")
    started = time.perf_counter()
    problem = _FreeDofProblem(g, op, params)
    K = eval_hessian_matrix(op.grid.zeros(), op, params)
    rhs = op.grid.cell_volume * problem.from_values(g.values)

    counter = [0]

    def _count(_: NDArray) -> None:
        counter[0] += 1

    x, info = splinalg.cg(
        K,
        rhs,
        rtol=rtol,
        atol=0.0,
        maxiter=10 * max(problem.size, 1),
        callback=_count,
    )
    if info > 0:
        raise CGStagnationError(
            f"conjugate gradient did not converge in {info} iterations"
        )
    if info < 0:
        raise StateSolverError(f"conjugate gradient breakdown (info={info})")

    report = SolveReport(method="cg")
    f, grad = problem.evaluate(x)
    report.record(counter[0], f, problem.variation_norm(grad))
    report.wall_time = time.perf_counter() - started
    logger.debug(
        f"CGで求解: iter={counter[0]}, E={f:.15g}, size={problem.size}"
    )
    return problem.to_field(x), report


class FactorizedP2Solver:
    """p = 2 の状態方程式を疎 LU 分解で直接解く.

    p = 2 の p-Laplacian では K = Dᵀ diag(w 𝔸⊗I) D が状態に依存しない
    ため、構築時に一度だけ分解して荷重ごとの求解と随伴の求解に使う。
    K は対称なので随伴系も同じ分解で解ける。

    Attributes:
        op (AnyGradientOp): 勾配作用素
        params (EnergyParams): p = 2 の p-Laplacian パラメータ
        solves (int): これまでの求解回数
    """

    def __init__(self, op: AnyGradientOp, params: EnergyParams) -> None:
        """K を組み立てて分解する.

        Raises:
            StateSolverError: p ≠ 2 またはユーザー定義密度の場合
        """
        if params.p != 2.0 or not params.is_plaplacian:
            raise StateSolverError(
                "FactorizedP2Solver requires p = 2 p-Laplacian"
            )
        self.op = op
        self.params = params
        self.solves = 0
        K = eval_hessian_matrix(op.grid.zeros(), op, params)
        self._solve = splinalg.factorized(K.tocsc())
        self._size = int(K.shape[0])
        logger.debug(f"p = 2 の系を分解: size={self._size}")

    def solve_dofs(self, rhs: NDArray) -> NDArray:
        """自由度上の系 K x = rhs を解く.

        Raises:
            StateSolverError: 解が有限でない場合 (K が特異)
        """
        x = np.asarray(self._solve(np.asarray(rhs, dtype=float)))
        if not np.all(np.isfinite(x)):
            raise StateSolverError(
                "factorized p = 2 system is singular; "
                "check the coefficient and the operator"
            )
        return x

    def __call__(self, g: Field) -> Tuple[Field, SolveReport]:
        """荷重 g に対する状態と実行記録を返す."""
        started = time.perf_counter()
        problem = _FreeDofProblem(g, self.op, self.params)
        rhs = self.op.grid.cell_volume * problem.from_values(g.values)
        x = self.solve_dofs(rhs)
        self.solves += 1

        report = SolveReport(method="lu")
        f, grad = problem.evaluate(x)
        report.record(1, f, problem.variation_norm(grad))
        report.wall_time = time.perf_counter() - started
        return problem.to_field(x), report


def solve_state_auto(
    g: Field,
    op: AnyGradientOp,
    params: EnergyParams,
    init: Optional[Field] = None,
    options: Optional[SolveOptions] = None,
    rtol: float = CG_RTOL,
) -> Tuple[Field, SolveReport]:
    """p = 2 なら共役勾配法、それ以外はエネルギー最小化で解く."""
    if params.p == 2.0 and params.is_plaplacian:
        return solve_state_p2(g, op, params, rtol=rtol)
    return solve_state(g, op, params, init=init, options=options)


def local_inset(op: LocalGradientOp, domain: LocalDomain) -> int:
    """領域に対応する縮小層数."""
    return op.grid.layers if LocalDomain(domain) is LocalDomain.DEFLATED else 0


def solve_state_local(
    g: Field,
    op: LocalGradientOp,
    params: EnergyParams,
    domain: LocalDomain = LocalDomain.DEFLATED,
    init: Optional[Field] = None,
    options: Optional[SolveOptions] = None,
) -> Tuple[Field, SolveReport]:
    """局所参照問題の状態を求める.

    Args:
        g (Field): 荷重
        op (LocalGradientOp): 局所勾配作用素
        params (EnergyParams): エネルギーのパラメータ
        domain (LocalDomain): Ω_{-δ} (s スイープ) または Ω (δ スイープ)
        init (Optional[Field]): 初期値
        options (Optional[SolveOptions]): ソルバーのオプション

    Returns:
        Tuple[Field, SolveReport]: 局所領域の境界外でゼロの状態と記録

    Raises:
        GridError: op の領域が domain と一致しない場合
    """
    expected = local_inset(op, domain)
    if op.inset_layers != expected:
        raise GridError(
            f"local operator inset {op.inset_layers} does not match "
            f"domain {LocalDomain(domain).value} (expected {expected})"
        )
    return solve_state_auto(g, op, params, init=init, options=options)

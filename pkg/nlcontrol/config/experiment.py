"""実験設定ファイルの読み込みと検証.

YAML の設定ファイルを ExperimentConfig に変換し、実行前に項目間の
整合性を検証するモジュール。検証は違反を全て集めてから返す。

主な機能:
    - parse_config: 辞書から ExperimentConfig への変換 (型と既知のキー)
    - validate_config: 項目間の整合性の検証
    - read_config / load_config / validate_file: ファイルからの読み込み
    - config_hash: 設定の再現用ハッシュ
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import yaml

from nlcontrol.core.exceptions import (
    ConfigValidationError,
    NLControlError,
    Violation,
)
from nlcontrol.discretization.grid import Grid, build_grid
from nlcontrol.discretization.kernel import CutoffSpec, KernelMode, KernelSpec
from nlcontrol.services.control import ControlOptions
from nlcontrol.services.localization import SweepConfig
from nlcontrol.services.setup import (
    COEFFICIENT_KINDS,
    DENSITY_KINDS,
    FIELD_KINDS,
    Bound,
    CoefficientSpec,
    FieldSpec,
    ProblemSpec,
    bound_arrays,
    build_energy_params,
)
from nlcontrol.services.state import SolveOptions

logger = logging.getLogger(__name__)

EXPERIMENT_KINDS = (
    "check",
    "solve-state",
    "solve-control",
    "sweep-s",
    "sweep-delta",
    "poincare",
    "operator-probe",
)
SWEEP_KINDS = ("sweep-s", "sweep-delta")
STATE_METHODS = ("lbfgs", "newton")
FIELD_KEYS = ("kind", "value", "matrix", "support_inset", "path")

_SECTIONS: Dict[str, Tuple[str, ...]] = {
    "": (
        "kind",
        "seed",
        "threads",
        "grid",
        "kernel",
        "energy",
        "control",
        "solver",
        "sweep",
        "probe",
        "output",
    ),
    "grid": ("box", "h"),
    "kernel": ("s", "delta", "b0", "a0", "profile", "mode", "mass_target"),
    "energy": ("p", "coefficient", "mu", "density", "well_height"),
    "control": (
        "u_des",
        "load",
        "weight",
        "lambda",
        "lower",
        "upper",
        "q",
        "r_list",
    ),
    "solver": ("state", "control", "multistart"),
    "solver.state": ("tol", "max_iter", "method", "memory"),
    "solver.control": ("tol", "max_iter"),
    "sweep": ("variable", "ladder", "gamma", "poincare"),
    "probe": ("u_test", "mass_normalized"),
    "output": ("dir", "fields", "dump_operator"),
}


@dataclass(frozen=True)
class KernelBlock:
    """kernel セクション.

    Attributes:
        s (float): 分数階
        delta (float): ホライズン
        b0 (float): 平坦部の割合
        a0 (float): 平坦部の値
        profile (str): 遷移形状
        mode (str): fixed-horizon / rescaled-from-unit
        mass_target (Optional[float]): 総質量の目標値
    """

    s: float = 0.5
    delta: float = 0.25
    b0: float = 0.5
    a0: float = 1.0
    profile: str = "quintic"
    mode: str = KernelMode.FIXED.value
    mass_target: Optional[float] = None


@dataclass(frozen=True)
class ExperimentConfig:
    """実験設定.

    Attributes:
        kind (str): 実験の種類
        box (Tuple[Tuple[float, float], ...]): 領域 Ω
        h (float): 格子幅
        kernel (KernelBlock): カーネル
        problem (ProblemSpec): エネルギーと制御問題
        state (SolveOptions): 状態ソルバー
        control (ControlOptions): 制御ソルバー
        seed (int): 乱数シード
        threads (int): 並列数
        multistart (int): 非凸問題の始点数
        sweep_variable (Optional[str]): 梯子の変数 (既定は種類から)
        ladder (Tuple[float, ...]): 梯子
        gamma (bool): スイープで Γ 代理量も出力するか
        poincare_ladder (bool): スイープで Poincaré 定数も出力するか
        probe_field (Optional[FieldSpec]): プローブの試験関数
        mass_normalized (bool): プローブでカーネル質量を n に揃えるか
        output_dir (Optional[str]): 出力ディレクトリ
        write_fields (bool): 場を fields/*.bin に保存するか
        dump_operator (bool): 作用素のトリプレットを保存するか
        raw (Dict[str, Any]): 読み込んだままの設定 (エコー用)
    """

    kind: str
    box: Tuple[Tuple[float, float], ...] = ((0.0, 1.0),)
    h: float = 1.0 / 64
    kernel: KernelBlock = field(default_factory=KernelBlock)
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    state: SolveOptions = field(default_factory=SolveOptions)
    control: ControlOptions = field(default_factory=ControlOptions)
    seed: int = 0
    threads: int = 1
    multistart: int = 8
    sweep_variable: Optional[str] = None
    ladder: Tuple[float, ...] = ()
    gamma: bool = False
    poincare_ladder: bool = False
    probe_field: Optional[FieldSpec] = None
    mass_normalized: bool = False
    output_dir: Optional[str] = None
    write_fields: bool = True
    dump_operator: bool = False
    raw: Dict[str, Any] = field(default_factory=dict, compare=False)

    @property
    def n(self) -> int:
        """空間次元."""
        return len(self.box)

    @property
    def variable(self) -> str:
        """梯子の変数 ("s" / "delta")."""
        if self.kind == "sweep-s":
            return "s"
        if self.kind == "sweep-delta":
            return "delta"
        return self.sweep_variable or "s"

    def cutoff(self) -> CutoffSpec:
        """カットオフ仕様."""
        k = self.kernel
        return CutoffSpec(b0=k.b0, a0=k.a0, profile=k.profile)

    def kernel_spec(self) -> KernelSpec:
        """カーネル仕様."""
        k = self.kernel
        return KernelSpec(
            n=self.n,
            s=k.s,
            delta=k.delta,
            cutoff=self.cutoff(),
            mode=KernelMode(k.mode),
            mass_target=k.mass_target,
        )

    def build_grid(self) -> Grid:
        """格子."""
        return build_grid(self.box, self.h, self.kernel.delta)

    def sweep_config(self) -> SweepConfig:
        """スイープ設定.

        Raises:
            ConfigValidationError: カーネル方針や梯子が不正な場合
        """
        return SweepConfig(
            variable=self.variable,
            ladder=self.ladder,
            box=self.box,
            h=self.h,
            s=self.kernel.s,
            delta=self.kernel.delta,
            cutoff=self.cutoff(),
            problem=self.problem,
            control=self.control,
            threads=self.threads,
            seed=self.seed,
            multistart=self.multistart,
        )


class _Reader:
    """違反を集めながら辞書から値を取り出す."""

    def __init__(self) -> None:
        """初期化."""
        self.violations: List[Violation] = []

    def fail(self, path: str, message: str) -> None:
        """違反を記録する."""
        self.violations.append(Violation(path, message))

    def section(self, data: Mapping, key: str, parent: str = "") -> Dict:
        """サブセクション (無ければ空) を取り出し、未知のキーを記録する."""
        path = f"{parent}.{key}" if parent else key
        value = data.get(key) or {}
        if not isinstance(value, Mapping):
            self.fail(path, "expected a mapping")
            return {}
        self.unknown(value, path)
        return dict(value)

    def unknown(self, data: Mapping, path: str) -> None:
        """既知でないキーを記録する."""
        for key in data:
            if key not in _SECTIONS[path]:
                self.fail(_join(path, key), "unknown key")

    def number(
        self, data: Mapping, key: str, path: str, default: Any, cast=float
    ) -> Any:
        """数値を取り出す (None は既定値)."""
        value = data.get(key)
        if value is None:
            return default
        try:
            return cast(value)
        except (TypeError, ValueError):
            self.fail(_join(path, key), f"expected a number, got {value!r}")
            return default

    def numbers(
        self, data: Mapping, key: str, path: str, default: Tuple
    ) -> Tuple[float, ...]:
        """スカラーまたは数値の列を取り出す."""
        value = data.get(key)
        if value is None:
            return default
        items = value if isinstance(value, (list, tuple)) else [value]
        try:
            return tuple(float(v) for v in items)
        except (TypeError, ValueError):
            self.fail(_join(path, key), f"expected numbers, got {value!r}")
            return default

    def field_spec(self, value: Any, path: str) -> FieldSpec:
        """場の仕様 (数値は定数場)."""
        if isinstance(value, (int, float, list)):
            try:
                return FieldSpec(kind="constant", value=_floats(value))
            except (TypeError, ValueError):
                self.fail(path, f"expected numbers, got {value!r}")
                return FieldSpec()
        if not isinstance(value, Mapping):
            self.fail(path, "expected a field mapping or numbers")
            return FieldSpec()
        kind = str(value.get("kind", "zero"))
        if kind not in FIELD_KINDS:
            self.fail(f"{path}.kind", f"expected one of {FIELD_KINDS}")
        extra = set(value) - set(FIELD_KEYS)
        for key in sorted(extra):
            self.fail(f"{path}.{key}", "unknown key")
        try:
            matrix = tuple(
                tuple(float(v) for v in row) for row in value.get("matrix", ())
            )
            return FieldSpec(
                kind=kind,
                value=_floats(value.get("value", ())),
                matrix=matrix,
                support_inset=float(value.get("support_inset", 0.0)),
                path=value.get("path"),
            )
        except (TypeError, ValueError) as exc:
            self.fail(path, f"malformed field: {exc}")
            return FieldSpec()

    def bound(self, data: Mapping, key: str, default: Bound) -> Bound:
        """箱の端 (数値の列または場)."""
        value = data.get(key)
        if value is None:
            return default
        if isinstance(value, Mapping):
            return self.field_spec(value, f"control.{key}")
        return self.numbers(data, key, "control", default)


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _floats(value: Any) -> Tuple[float, ...]:
    items = value if isinstance(value, (list, tuple)) else [value]
    return tuple(float(v) for v in items)


def _coefficient(reader: _Reader, value: Any) -> CoefficientSpec:
    """energy.coefficient (数値、行列、またはマッピング)."""
    path = "energy.coefficient"
    if value is None:
        return CoefficientSpec()
    if not isinstance(value, Mapping):
        value = {"kind": "constant", "value": value}
    kind = str(value.get("kind", "constant"))
    if kind not in COEFFICIENT_KINDS:
        reader.fail(f"{path}.kind", f"expected one of {COEFFICIENT_KINDS}")
    raw = value.get("value", 1.0)
    flat = np.asarray(raw, dtype=float).reshape(-1) if raw is not None else ()
    return CoefficientSpec(
        kind=kind, value=tuple(float(v) for v in flat), path=value.get("path")
    )


def _problem(
    reader: _Reader, energy: Mapping, control: Mapping
) -> ProblemSpec:
    """energy / control セクションから ProblemSpec を作る."""
    base = ProblemSpec()
    density = str(energy.get("density", base.density))
    if density not in DENSITY_KINDS:
        reader.fail("energy.density", f"expected one of {DENSITY_KINDS}")
    try:
        coefficient = _coefficient(reader, energy.get("coefficient"))
    except (TypeError, ValueError) as exc:
        reader.fail("energy.coefficient", f"malformed coefficient: {exc}")
        coefficient = base.coefficient
    return ProblemSpec(
        p=reader.number(energy, "p", "energy", base.p),
        coefficient=coefficient,
        mu=reader.number(energy, "mu", "energy", base.mu),
        density=density,
        well_height=reader.number(
            energy, "well_height", "energy", base.well_height
        ),
        u_des=reader.field_spec(control.get("u_des", 0.0), "control.u_des"),
        load=reader.field_spec(control.get("load", 0.0), "control.load"),
        weight=reader.number(control, "weight", "control", base.weight),
        lam=reader.number(control, "lambda", "control", base.lam),
        lower=reader.bound(control, "lower", base.lower),
        upper=reader.bound(control, "upper", base.upper),
        q=reader.number(control, "q", "control", None),
        r_list=reader.numbers(control, "r_list", "control", base.r_list),
    )


def _solvers(
    reader: _Reader, solver: Mapping
) -> Tuple[SolveOptions, ControlOptions, int]:
    """solver セクション."""
    state = reader.section(solver, "state", "solver")
    control = reader.section(solver, "control", "solver")
    base = SolveOptions()
    method = str(state.get("method", base.method))
    if method not in STATE_METHODS:
        reader.fail("solver.state.method", f"expected one of {STATE_METHODS}")
    state_options = SolveOptions(
        tol=reader.number(state, "tol", "solver.state", base.tol),
        max_iter=reader.number(
            state, "max_iter", "solver.state", base.max_iter, int
        ),
        method=method,
        memory=reader.number(
            state, "memory", "solver.state", base.memory, int
        ),
    )
    control_base = ControlOptions()
    control_options = ControlOptions(
        tol=reader.number(control, "tol", "solver.control", control_base.tol),
        max_iter=reader.number(
            control, "max_iter", "solver.control", control_base.max_iter, int
        ),
        state_options=state_options if state else None,
    )
    multistart = reader.number(solver, "multistart", "solver", 8, int)
    return state_options, control_options, multistart


def parse_config(data: Mapping[str, Any]) -> ExperimentConfig:
    """辞書から ExperimentConfig を作る.

    未知のキー、型の誤り、未知の種類を全て集めて報告する。

    Args:
        data (Mapping[str, Any]): YAML から読み込んだ辞書

    Returns:
        ExperimentConfig: 設定

    Raises:
        ConfigValidationError: 構造上の違反がある場合
    """
    reader = _Reader()
    if not isinstance(data, Mapping):
        raise ConfigValidationError([Violation("", "expected a mapping")])
    reader.unknown(data, "")
    kind = str(data.get("kind", ""))
    if kind not in EXPERIMENT_KINDS:
        reader.fail(
            "kind", f"expected one of {EXPERIMENT_KINDS}, got {kind!r}"
        )

    grid = reader.section(data, "grid")
    kernel = reader.section(data, "kernel")
    sweep = reader.section(data, "sweep")
    probe = reader.section(data, "probe")
    output = reader.section(data, "output")
    state, control, multistart = _solvers(
        reader, reader.section(data, "solver")
    )
    problem = _problem(
        reader, reader.section(data, "energy"), reader.section(data, "control")
    )

    box_raw = grid.get("box", [[0.0, 1.0]])
    try:
        box = tuple((float(lo), float(hi)) for lo, hi in box_raw)
    except (TypeError, ValueError):
        reader.fail("grid.box", f"expected [[lo, hi], ...], got {box_raw!r}")
        box = ((0.0, 1.0),)

    kb = KernelBlock()
    mode = str(kernel.get("mode", kb.mode))
    if mode not in {m.value for m in KernelMode}:
        reader.fail("kernel.mode", f"unknown kernel mode {mode!r}")
    kernel_block = KernelBlock(
        s=reader.number(kernel, "s", "kernel", kb.s),
        delta=reader.number(kernel, "delta", "kernel", kb.delta),
        b0=reader.number(kernel, "b0", "kernel", kb.b0),
        a0=reader.number(kernel, "a0", "kernel", kb.a0),
        profile=str(kernel.get("profile", kb.profile)),
        mode=mode,
        mass_target=reader.number(kernel, "mass_target", "kernel", None),
    )
    variable = sweep.get("variable")
    if variable is not None and variable not in ("s", "delta"):
        reader.fail("sweep.variable", "expected 's' or 'delta'")
    probe_field = (
        reader.field_spec(probe["u_test"], "probe.u_test")
        if "u_test" in probe
        else None
    )

    h = reader.number(grid, "h", "grid", 1.0 / 64)
    seed = reader.number(data, "seed", "", 0, int)
    threads = reader.number(data, "threads", "", 1, int)
    ladder = reader.numbers(sweep, "ladder", "sweep", ())

    if reader.violations:
        raise ConfigValidationError(reader.violations)
    return ExperimentConfig(
        kind=kind,
        box=box,
        h=h,
        kernel=kernel_block,
        problem=problem,
        state=state,
        control=control,
        seed=seed,
        threads=threads,
        multistart=multistart,
        sweep_variable=variable,
        ladder=ladder,
        gamma=bool(sweep.get("gamma", False)),
        poincare_ladder=bool(sweep.get("poincare", False)),
        probe_field=probe_field,
        mass_normalized=bool(probe.get("mass_normalized", False)),
        output_dir=output.get("dir"),
        write_fields=bool(output.get("fields", True)),
        dump_operator=bool(output.get("dump_operator", False)),
        raw=dict(data),
    )


def _box_violations(config: ExperimentConfig, grid: Grid) -> List[Violation]:
    """箱 [𝔞, 𝔟] が Ω の全節点で空でないこと."""
    lower, upper = bound_arrays(grid, config.problem)
    bad = np.any(lower > upper, axis=1) & grid.omega_mask
    if not np.any(bad):
        return []
    node = int(np.argmax(bad))
    x = ", ".join(f"{c:.6g}" for c in grid.coords[node])
    return [
        Violation(
            "control.lower",
            f"lower > upper at node {node} (x = ({x})): "
            f"{lower[node].tolist()} > {upper[node].tolist()}",
        )
    ]


def _growth_violations(config: ExperimentConfig) -> List[Violation]:
    """追跡指数 q ≤ p*_s (s スイープでは梯子の最小の s で判定)."""
    problem = config.problem
    if problem.q is None:
        return []
    s_values = (
        config.ladder if config.kind == "sweep-s" else (config.kernel.s,)
    )
    s = min(s_values) if s_values else config.kernel.s
    n, p = config.n, problem.p
    if s * p >= n:
        return []
    critical = n * p / (n - s * p)
    if problem.q > critical:
        return [
            Violation(
                "control.q",
                f"q={problem.q} exceeds the critical exponent "
                f"p*_s={critical:.6g} at s={s}",
            )
        ]
    return []


def _sweep_violations(config: ExperimentConfig) -> List[Violation]:
    """スイープの梯子とカーネル方針."""
    found: List[Violation] = []
    if not config.ladder:
        found.append(Violation("sweep.ladder", "sweep needs a ladder"))
        return found
    if config.kind == "sweep-delta":
        if config.kernel.mode != KernelMode.RESCALED.value:
            found.append(
                Violation(
                    "kernel.mode",
                    "delta-sweeps require rescaled-from-unit kernels",
                )
            )
        target = config.kernel.mass_target
        if target is None or abs(target - config.n) > 1e-12:
            found.append(
                Violation(
                    "kernel.mass_target",
                    f"delta-sweeps require unit-kernel mass n={config.n}, "
                    f"got {target}",
                )
            )
    if config.gamma and config.problem.density != "plaplacian":
        found.append(
            Violation(
                "sweep.gamma",
                "the gamma comparison needs exact minima and supports only "
                f"the plaplacian density, got {config.problem.density!r}",
            )
        )
    try:
        config.sweep_config()
    except ConfigValidationError as exc:
        found.extend(exc.violations)
    return found


def validate_config(config: ExperimentConfig) -> List[Violation]:
    """項目間の整合性を検証し、違反を全て返す (何も実行しない).

    Args:
        config (ExperimentConfig): 設定

    Returns:
        List[Violation]: 違反の一覧 (空なら妥当)
    """
    found: List[Violation] = []
    problem = config.problem
    if problem.p <= 1.0:
        found.append(
            Violation("energy.p", f"p must exceed 1, got {problem.p}")
        )
    if problem.lam <= 0.0:
        found.append(Violation("control.lambda", "lambda must be positive"))
    elif problem.weight < problem.lam:
        found.append(
            Violation(
                "control.weight",
                f"weight {problem.weight} below lambda {problem.lam}",
            )
        )
    if config.threads < 1:
        found.append(Violation("threads", "threads must be >= 1"))
    if config.kind == "check":
        return found

    try:
        config.kernel_spec()
    except NLControlError as exc:
        found.append(Violation("kernel", str(exc)))
    try:
        grid = config.build_grid()
    except NLControlError as exc:
        found.append(Violation("grid", str(exc)))
        grid = None
    if grid is not None:
        if grid.layers < 2:
            found.append(
                Violation(
                    "kernel.delta",
                    f"delta={config.kernel.delta} below the 2h floor",
                )
            )
        try:
            build_energy_params(grid, problem)
            found.extend(_box_violations(config, grid))
        except NLControlError as exc:
            found.append(Violation("energy.coefficient", str(exc)))
    found.extend(_growth_violations(config))
    if config.kind in SWEEP_KINDS:
        found.extend(_sweep_violations(config))
    if config.kind == "operator-probe" and not config.ladder:
        found.append(Violation("sweep.ladder", "probe needs a ladder"))
    return found


def read_config(path: Union[str, Path]) -> ExperimentConfig:
    """設定ファイルを読み込み、構造だけを検証する.

    Raises:
        ConfigValidationError: 読めない場合や構造上の違反がある場合
    """
    try:
        with open(Path(path), encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigValidationError(
            [Violation("", f"cannot read config: {exc}")]
        ) from exc
    return parse_config(data)


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """設定ファイルを読み込み、整合性まで検証する.

    Raises:
        ConfigValidationError: 構造または整合性の違反がある場合
    """
    config = read_config(path)
    violations = validate_config(config)
    if violations:
        raise ConfigValidationError(violations)
    logger.info(f"設定を読み込み: {path} (kind={config.kind})")
    return config


def validate_file(path: Union[str, Path]) -> List[Violation]:
    """設定ファイルの違反を全て返す (読めない場合も違反として返す)."""
    try:
        config = read_config(path)
    except ConfigValidationError as exc:
        return list(exc.violations)
    return validate_config(config)


def config_hash(config: ExperimentConfig) -> str:
    """読み込んだ設定の md5 署名 (キー順に依存しない)."""
    text = json.dumps(config.raw, sort_keys=True, default=str)
    return hashlib.md5(text.encode("utf-8")).hexdigest()  # noqa: S324

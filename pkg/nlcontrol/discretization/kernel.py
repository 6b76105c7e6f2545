"""切断Rieszカーネル.

滑らかに切断されたRieszポテンシャル ρ^s_δ と、その正規化定数、
カットオフ関数、δスケーリングを評価するモジュール。

主な機能:
    - gamma_const / riesz_normalizer: γ(s) と c_{n,s}
    - cutoff_eval: 台 [0, δ) を持つ非増加カットオフ w_δ
    - kernel_eval: ρ^s_δ(x) = c_{n,s} w_δ(x) / |x|^{n-1+s}
    - kernel_mass / kernel_moment: 動径方向の適応求積による積分値
    - normalize_mass: 総質量を指定値に揃えたカーネル仕様
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import integrate, special

from nlcontrol.constants.numerics import (
    CUTOFF_PROFILES,
    DEFAULT_PLATEAU_FRACTION,
    DEFAULT_PLATEAU_VALUE,
    DEFAULT_PROFILE,
    MASS_QUAD_RTOL,
    QUAD_LIMIT,
)
from nlcontrol.core.exceptions import (
    KernelDomainError,
    QuadratureError,
    SingularKernelError,
)

logger = logging.getLogger(__name__)


class KernelMode(str, Enum):
    """カーネルのδ依存性の与え方."""

    FIXED = "fixed-horizon"
    RESCALED = "rescaled-from-unit"


@dataclass(frozen=True)
class CutoffSpec:
    """カットオフ関数 w_δ の仕様.

    Attributes:
        b0 (float): 平坦部の割合 (0 < b0 < 1)
        a0 (float): 平坦部の値 w_δ(0)
        profile (str): [b0δ, δ] 上の遷移形状
    """

    b0: float = DEFAULT_PLATEAU_FRACTION
    a0: float = DEFAULT_PLATEAU_VALUE
    profile: str = DEFAULT_PROFILE

    def __post_init__(self) -> None:
        """引数を検証する."""
        if not 0.0 < self.b0 < 1.0:
            raise KernelDomainError(f"b0 must lie in (0, 1), got {self.b0}")
        if self.a0 <= 0.0:
            raise KernelDomainError(f"a0 must be positive, got {self.a0}")
        if self.profile not in CUTOFF_PROFILES:
            raise KernelDomainError(
                f"unknown cutoff profile {self.profile!r}; "
                f"expected one of {CUTOFF_PROFILES}"
            )


@dataclass(frozen=True)
class KernelSpec:
    """切断Rieszカーネル ρ^s_δ の仕様.

    mass_target が与えられた場合、総質量がその値になるよう全体を
    スケーリングする (倍率は生成時に一度だけ求積で決定される)。

    Attributes:
        n (int): 空間次元 (1 または 2)
        s (float): 分数階 (0 < s < 1)
        delta (float): ホライズン δ
        cutoff (CutoffSpec): カットオフ関数
        mode (KernelMode): 固定ホライズン / 単位カーネルからの再スケール
        mass_target (Optional[float]): 総質量の目標値
    """

    n: int
    s: float
    delta: float
    cutoff: CutoffSpec = field(default_factory=CutoffSpec)
    mode: KernelMode = KernelMode.FIXED
    mass_target: Optional[float] = None
    scale: float = field(default=1.0, init=False, compare=False)

    def __post_init__(self) -> None:
        """引数を検証し、質量正規化の倍率を決める."""
        if self.n not in (1, 2):
            raise KernelDomainError(f"dimension must be 1 or 2, got {self.n}")
        if not 0.0 < self.s < 1.0:
            raise KernelDomainError(f"s must lie in (0, 1), got {self.s}")
        if self.delta <= 0.0:
            raise KernelDomainError(
                f"delta must be positive, got {self.delta}"
            )
        object.__setattr__(self, "mode", KernelMode(self.mode))
        if self.mass_target is not None:
            if self.mass_target <= 0.0:
                raise KernelDomainError(
                    f"mass_target must be positive, got {self.mass_target}"
                )
            raw = _radial_moment(self, 0) / self.scale
            object.__setattr__(self, "scale", self.mass_target / raw)
            logger.debug(
                f"カーネル質量を正規化: raw={raw:.12g}, "
                f"target={self.mass_target}, scale={self.scale:.12g}"
            )

    @property
    def normalizer(self) -> float:
        """c_{n,s}."""
        return riesz_normalizer(self.n, self.s)

    def radial(self, r: ArrayLike) -> NDArray[np.float64]:
        """動径プロファイル ρ̄(r) を評価する (r > 0).

        Args:
            r (ArrayLike): 半径

        Returns:
            NDArray[np.float64]: ρ̄(r)
        """
        r = np.asarray(r, dtype=float)
        exponent = self.n - 1 + self.s
        if self.mode is KernelMode.RESCALED:
            t = r / self.delta
            unit = cutoff_eval(self.cutoff, 1.0, t) / t**exponent
            return self.scale * self.normalizer * unit / self.delta**self.n
        w = cutoff_eval(self.cutoff, self.delta, r)
        return self.scale * self.normalizer * w / r**exponent


def gamma_const(n: int, s: float) -> float:
    """γ(s) = π^{n/2} 2^s Γ(s/2) / Γ((n-s)/2) を返す.

    Args:
        n (int): 空間次元
        s (float): 階数 (0 < s < n)

    Returns:
        float: γ(s) (正の値)

    Raises:
        KernelDomainError: s ≤ 0 または s ≥ n (Γの極)
    """
    if not 0.0 < s < n:
        raise KernelDomainError(f"gamma_const requires 0 < s < n, got s={s}")
    return float(
        math.pi ** (n / 2.0)
        * 2.0**s
        * special.gamma(s / 2.0)
        / special.gamma((n - s) / 2.0)
    )


def riesz_normalizer(n: int, s: float) -> float:
    """c_{n,s} = (n + s - 1) / γ(1 - s) を返す.

    Args:
        n (int): 空間次元
        s (float): 分数階 (0 < s < 1)

    Returns:
        float: c_{n,s}

    Raises:
        KernelDomainError: s が (0, 1) の外
    """
    if not 0.0 < s < 1.0:
        raise KernelDomainError(
            f"riesz_normalizer requires 0 < s < 1, got {s}"
        )
    return (n + s - 1.0) / gamma_const(n, 1.0 - s)


def _transition(profile: str, t: NDArray[np.float64]) -> NDArray[np.float64]:
    """[0, 1] 上で 0 から 1 へ増加する遷移関数."""
    if profile == "quintic":
        return t**3 * (10.0 - 15.0 * t + 6.0 * t**2)
    if profile == "septic":
        return t**4 * (35.0 - 84.0 * t + 70.0 * t**2 - 20.0 * t**3)
    # smooth: exp(-1/t) による C^∞ 遷移
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        f = np.where(t > 0.0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        safe = np.where(t < 1.0, 1.0 - t, 1.0)
        g = np.where(t < 1.0, np.exp(-1.0 / safe), 0.0)
    return f / (f + g)


def cutoff_eval(
    spec: CutoffSpec, delta: float, r: Union[float, ArrayLike]
) -> NDArray[np.float64]:
    """カットオフ関数 w_δ(r) を評価する.

    [0, b0δ] で a0、[b0δ, δ] で遷移関数により 0 まで減少し、
    r ≥ δ で 0 となる。

    Args:
        spec (CutoffSpec): カットオフ仕様
        delta (float): ホライズン
        r (Union[float, ArrayLike]): 半径 (≥ 0)

    Returns:
        NDArray[np.float64]: [0, a0] の値
    """
    r = np.asarray(r, dtype=float)
    start = spec.b0 * delta
    t = np.clip((r - start) / ((1.0 - spec.b0) * delta), 0.0, 1.0)
    value = spec.a0 * (1.0 - _transition(spec.profile, t))
    return np.where(r >= delta, 0.0, value)


def kernel_eval(spec: KernelSpec, x: ArrayLike) -> NDArray[np.float64]:
    """ρ^s_δ(x) を評価する.

    Args:
        spec (KernelSpec): カーネル仕様
        x (ArrayLike): オフセットベクトル (形状 (..., n))

    Returns:
        NDArray[np.float64]: 非負の値 (|x| ≥ δ で 0)

    Raises:
        SingularKernelError: x = 0 を含む場合
    """
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(np.atleast_1d(x), axis=-1)
    if np.any(r == 0.0):
        raise SingularKernelError("kernel is unbounded at the origin")
    return spec.radial(r)


def sphere_area(n: int) -> float:
    """単位球面 S^{n-1} の表面積 (n=1 では 2)."""
    return float(2.0 * math.pi ** (n / 2.0) / special.gamma(n / 2.0))


def _radial_moment(spec: KernelSpec, order: float) -> float:
    """∫_{B(0,δ)} |x|^order ρ^s_δ(x) dx を動径求積で求める."""
    if spec.mode is KernelMode.RESCALED:
        unit = replace(
            spec, delta=1.0, mode=KernelMode.FIXED, mass_target=None
        )
        object.__setattr__(unit, "scale", spec.scale)
        return spec.delta**order * _radial_moment(unit, order)

    delta = spec.delta
    cutoff = spec.cutoff
    power = order - spec.s  # r^{n-1} ρ̄(r) r^order ∝ w(r) r^{order-s}
    start = cutoff.b0 * delta
    # 平坦部は解析的に積分できる
    plateau = cutoff.a0 * start ** (power + 1.0) / (power + 1.0)
    value, abserr = integrate.quad(
        lambda r: float(cutoff_eval(cutoff, delta, r)) * r**power,
        start,
        delta,
        epsabs=0.0,
        epsrel=MASS_QUAD_RTOL * 1e-2,
        limit=QUAD_LIMIT,
    )
    total = plateau + value
    if abserr > MASS_QUAD_RTOL * abs(total):
        raise QuadratureError("radial kernel quadrature failed", abserr)
    return sphere_area(spec.n) * spec.scale * spec.normalizer * total


def kernel_mass(spec: KernelSpec) -> float:
    """∫_{B(0,δ)} ρ^s_δ を返す.

    Args:
        spec (KernelSpec): カーネル仕様

    Returns:
        float: 総質量

    Raises:
        QuadratureError: 求積の相対誤差が 1e-10 を超えた場合
    """
    return _radial_moment(spec, 0.0)


def kernel_moment(spec: KernelSpec, order: float) -> float:
    """∫_{B(0,δ)} |x|^order ρ^s_δ(x) dx を返す.

    Args:
        spec (KernelSpec): カーネル仕様
        order (float): 重み |x| の指数 (> s - 1)

    Returns:
        float: モーメント
    """
    return _radial_moment(spec, order)


def normalize_mass(spec: KernelSpec, target: float) -> KernelSpec:
    """総質量が target となるカーネル仕様を返す.

    Args:
        spec (KernelSpec): 元の仕様
        target (float): 目標質量 (> 0)

    Returns:
        KernelSpec: mass_target 以外は同一の仕様
    """
    if target <= 0.0:
        raise KernelDomainError(f"mass target must be positive, got {target}")
    return replace(spec, mass_target=target)

"""離散化パッケージ.

このパッケージは、打ち切り Riesz カーネル、一様格子と節点ラベル、
非局所・局所勾配作用素の組み立てを提供します。

主な機能:
    - KernelSpec / kernel_eval / kernel_mass: カーネル
    - build_grid / lp_norm / transfer_nodes: 格子と格子関数
    - assemble_nl_gradient / assemble_local_gradient: 勾配作用素

使用例:
    from nlcontrol.discretization import (
        CutoffSpec, KernelSpec, assemble_nl_gradient, build_grid,
    )

    grid = build_grid([(0.0, 1.0)], h=1 / 64, delta=0.25)
    kernel = KernelSpec(n=1, s=0.5, delta=0.25, cutoff=CutoffSpec())
    op = assemble_nl_gradient(grid, kernel)
"""

from nlcontrol.discretization.grid import (
    Field,
    Grid,
    MatrixField,
    NodeLabel,
    apply_collar_zero,
    build_grid,
    lp_norm,
    transfer_nodes,
)
from nlcontrol.discretization.kernel import (
    CutoffSpec,
    KernelMode,
    KernelSpec,
    cutoff_eval,
    gamma_const,
    kernel_eval,
    kernel_mass,
    kernel_moment,
    normalize_mass,
    riesz_normalizer,
)
from nlcontrol.discretization.operators import (
    AnyGradientOp,
    LocalGradientOp,
    NonlocalGradientOp,
    apply_nl_divergence,
    apply_nl_gradient,
    assemble_local_gradient,
    assemble_nl_gradient,
    dump_operator,
)

__all__ = [
    "AnyGradientOp",
    "CutoffSpec",
    "Field",
    "Grid",
    "KernelMode",
    "KernelSpec",
    "LocalGradientOp",
    "MatrixField",
    "NodeLabel",
    "NonlocalGradientOp",
    "apply_collar_zero",
    "apply_nl_divergence",
    "apply_nl_gradient",
    "assemble_local_gradient",
    "assemble_nl_gradient",
    "build_grid",
    "cutoff_eval",
    "dump_operator",
    "gamma_const",
    "kernel_eval",
    "kernel_mass",
    "kernel_moment",
    "lp_norm",
    "normalize_mass",
    "riesz_normalizer",
    "transfer_nodes",
]

"""Sparse spectral weight parameterization for small transformer language models.

Weights of the block linears are reconstructed from K trainable coefficients in
a fixed separable orthonormal basis; every other coefficient is held at zero.
"""

from ._core import (
    Model,
    SelectionSet,
    SeparableBasis,
    ShapeError,
    dct2_forward,
    dct_matrix,
    emit_figure,
    emit_tables,
    fused_apply,
    fused_apply_blocked,
    generic_subspace_rank_probe,
    grid_cells,
    idct2,
    idct2_sparse,
    lora_rank_probe,
    naive_apply,
    numerical_rank,
    param_counts,
    random_orthogonal,
    stable_rank,
)

__all__ = [
    "Model",
    "SelectionSet",
    "SeparableBasis",
    "ShapeError",
    "dct2_forward",
    "dct_matrix",
    "emit_figure",
    "emit_tables",
    "fused_apply",
    "fused_apply_blocked",
    "generic_subspace_rank_probe",
    "grid_cells",
    "idct2",
    "idct2_sparse",
    "lora_rank_probe",
    "naive_apply",
    "numerical_rank",
    "param_counts",
    "random_orthogonal",
    "stable_rank",
]

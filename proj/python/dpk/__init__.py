"""Dynamic prior-knowledge distillation primitives.

Thin wrapper over the compiled `_dpk` extension: batch similarity
(HSIC/CKA), mask generation, distillation losses and the DPKF feature
archive format. Training runs through the `dpk` command-line tool; these
bindings cover offline analysis and prototyping.
"""

from ._dpk import (
    ConfigError,
    DegenerateBatchError,
    InvalidInputError,
    ShapeError,
    SizeError,
    block_mask,
    cka_minibatch,
    cosine_gap,
    default_patch_size,
    dynamic_ratio,
    feature_mse,
    gram,
    grid_mask,
    hsic1,
    logits_kd_loss,
    random_mask,
    read_feature_archive,
    write_feature_archive,
)

__all__ = [
    "ConfigError",
    "DegenerateBatchError",
    "InvalidInputError",
    "ShapeError",
    "SizeError",
    "block_mask",
    "cka_minibatch",
    "cosine_gap",
    "default_patch_size",
    "dynamic_ratio",
    "feature_mse",
    "gram",
    "grid_mask",
    "hsic1",
    "logits_kd_loss",
    "random_mask",
    "read_feature_archive",
    "write_feature_archive",
]

__version__ = "0.1.0"

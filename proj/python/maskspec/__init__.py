"""Masked spectro-temporal pretraining: Python surface over the C++ core."""

from maskspec._core import (
    ConfigError,
    FormatError,
    GeometryError,
    IoError,
    NumericError,
    assign,
    cross_entropy,
    encoder_parameter_count,
    fit_kmeans,
    frame_vectors,
    gradcheck_max_rel_err,
    logmel,
    lr_at,
    parameter_count,
    patch_vectors,
    sample_patch_mask,
    sample_segment_mask,
    segment_mask_fixed_point,
    segment_mask_marginals,
    total_loss,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "GeometryError",
    "IoError",
    "NumericError",
    "assign",
    "cross_entropy",
    "encoder_parameter_count",
    "fit_kmeans",
    "frame_vectors",
    "gradcheck_max_rel_err",
    "logmel",
    "lr_at",
    "parameter_count",
    "patch_vectors",
    "sample_patch_mask",
    "sample_segment_mask",
    "segment_mask_fixed_point",
    "segment_mask_marginals",
    "total_loss",
]

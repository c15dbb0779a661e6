"""Instance-aware sparse-to-dense depth completion.

Thin Python layer over the C++ core: scene synthesis, sparsification, mask
merging, metrics, model inference and the ``iadc`` command line.
"""

from ._iadc import (
    ConfigError,
    FormatError,
    Model,
    NumericError,
    ShapeError,
    check_op_gradients,
    check_pipeline_gradient,
    default_config,
    evaluate,
    generate_scene,
    masked_weighted_l1,
    merge_masks,
    run_cli,
    sparsify,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "Model",
    "NumericError",
    "ShapeError",
    "check_op_gradients",
    "check_pipeline_gradient",
    "default_config",
    "evaluate",
    "generate_scene",
    "masked_weighted_l1",
    "merge_masks",
    "run_cli",
    "sparsify",
]

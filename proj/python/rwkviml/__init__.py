"""Linear-attention image manipulation localization.

Thin wrapper over the compiled extension: bidirectional token-mixing kernels
(`wkv_scan`, `wkv_naive`), loss and metric primitives (`bce`, `edge_mask`,
`auc`, `evaluate`), the analytic cost model (`count_flops`), and checkpoint
inference (`predict`).
"""

from ._core import (  # noqa: F401
    ConfigError,
    DataError,
    NumericError,
    ShapeError,
    auc,
    bce,
    count_flops,
    edge_mask,
    evaluate,
    predict,
    wkv_naive,
    wkv_scan,
)

__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "ShapeError",
    "auc",
    "bce",
    "count_flops",
    "edge_mask",
    "evaluate",
    "predict",
    "wkv_naive",
    "wkv_scan",
]

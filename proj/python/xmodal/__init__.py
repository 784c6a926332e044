"""Python bindings for the xmodal cross-modal embedding trainer."""

import json

from ._xmodal import (
    ConfigError,
    DataError,
    NumericError,
    ShapeError,
    apm_loss,
    beta_indicator,
    cosine_scores,
    effective_config,
    gen,
    generate,
    inspect,
    lmm_loss,
    load_set,
    rank1,
    roc_and_vr,
    train,
)
from ._xmodal import evaluate as _evaluate


def evaluate(config, checkpoint, data, out):
    """Evaluate a checkpoint on a dataset; returns the report as a dict."""
    return json.loads(_evaluate(config, str(checkpoint), str(data), str(out)))


__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "ShapeError",
    "apm_loss",
    "beta_indicator",
    "cosine_scores",
    "effective_config",
    "evaluate",
    "gen",
    "generate",
    "inspect",
    "lmm_loss",
    "load_set",
    "rank1",
    "roc_and_vr",
    "train",
]

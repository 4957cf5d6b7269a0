"""Reference feature guidance kernels, equivalence oracle and toy pipeline.

Kernels accept float32 or float64 2-D arrays and return the same dtype.
"""

import json

from ._refdrop import (
    ConfigError,
    attention,
    concat_attention,
    concat_coefficient_vector,
    guidance_form,
    naive_concat_attention,
    rfg_attention,
    rfg_matrix,
    rfg_multi,
)
from ._refdrop import _generate, _resolve_config, _run_check

__all__ = [
    "ConfigError",
    "attention",
    "concat_attention",
    "concat_coefficient_vector",
    "generate",
    "guidance_form",
    "naive_concat_attention",
    "rank1_coefficient",
    "resolve_config",
    "rfg_attention",
    "rfg_matrix",
    "rfg_multi",
    "run_check",
]


def rank1_coefficient(c, value_dim):
    """L x value_dim matrix whose every column is the coefficient vector c."""
    import numpy as np

    c = np.asarray(c, dtype=np.float64)
    return np.repeat(c[:, None], value_dim, axis=1)


def resolve_config(config=None):
    """Resolved run configuration as a dict (same keys the CLI reads)."""
    return json.loads(_resolve_config(json.dumps(config or {})))


def run_check(config=None):
    """Runs the equivalence suite and returns the report as a dict."""
    return json.loads(_run_check(json.dumps(config or {})))


def generate(config=None):
    """Final latents of the toy pipeline, one side x side array per sample."""
    return _generate(json.dumps(config or {}))

"""Canonical identifiers for the multi-query scoring methods."""

from __future__ import annotations

METHODS = ("sa", "ra", "mf", "tswf", "lgwf", "cgwf")

# sa/ra aggregate single-query outputs and cannot be trained.
POST_HOC_METHODS = ("sa", "ra")
TRAINABLE_METHODS = ("mf", "tswf", "lgwf", "cgwf")

# lgwf/cgwf need ModelParams at call time; the rest are parameter-free.
PARAMETRIC_METHODS = ("lgwf", "cgwf")

# Methods that produce an explicit weight vector over the bundle.
WEIGHTED_METHODS = ("tswf", "lgwf", "cgwf")


def normalize_method(name) -> str:
    """Map user spellings ('TS-WF', 'cg_wf', ...) to a canonical id."""
    if not isinstance(name, str):
        raise ValueError(f"method must be a string, got {type(name).__name__}")
    canon = name.strip().lower().replace("-", "").replace("_", "")
    if canon not in METHODS:
        raise ValueError(
            f"unknown method {name!r}; expected one of: {', '.join(METHODS)}"
        )
    return canon

"""Utility functions and constants."""
from .constants import (
    ISSUE_KINDS,
    ISSUE_DISPLAY_NAMES,
    RULE_HINTS,
    CALL_KINDS,
    CALL_ARITY,
    RELOPS,
    DEFAULT_MAX_ITERS,
    DEFAULT_ENTRY_POINT,
    TEE_SUCCESS_CODE,
    TEE_ERROR_BAD_PARAMETERS_CODE,
)

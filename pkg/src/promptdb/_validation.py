"""Input validation helpers shared by the estimators and the ingest path."""

from __future__ import annotations

import math
import re

import numpy as np

from .errors import BadLanguageCode, DimensionMismatch, InvalidField, NormOutOfRange, ZeroVector

# ISO 639-1 is two letters; three-letter 639-3 codes are admitted for varieties
# such as Cantonese ("yue") that have no two-letter code.
_LANG_RE = re.compile(r"^[a-z]{2,3}$")

UNIT_TOL = 1e-6
RENORM_RANGE = (0.5, 2.0)


def check_language(code) -> str:
    if not isinstance(code, str) or not _LANG_RE.match(code):
        raise BadLanguageCode(repr(code))
    return code


def check_unit_vector(vec, field: str, dim: int | None = None, dtype=np.float32) -> np.ndarray:
    """Return ``vec`` as a unit-norm 1-D array of ``dtype``.

    Vectors whose norm is already within ``UNIT_TOL`` of one are passed through
    untouched (so stored vectors round-trip bit-exactly); vectors with norm in
    ``RENORM_RANGE`` are rescaled; anything else is rejected.
    """
    try:
        arr = np.asarray(vec, dtype=dtype)
    except (TypeError, ValueError):
        raise NormOutOfRange(field) from None
    if arr.ndim != 1:
        raise DimensionMismatch(field, arr.size, dim if dim is not None else -1)
    if dim is not None and arr.shape[0] != dim:
        raise DimensionMismatch(field, arr.shape[0], dim)
    if not np.all(np.isfinite(arr)):
        raise NormOutOfRange(field)
    norm = float(np.linalg.norm(arr.astype(np.float64)))
    if abs(norm - 1.0) <= UNIT_TOL:
        return arr
    lo, hi = RENORM_RANGE
    if not lo <= norm <= hi:
        raise NormOutOfRange(field, norm)
    return (arr.astype(np.float64) / norm).astype(dtype)


def normalize(vec, field: str = "vector") -> np.ndarray:
    """Scale an arbitrary nonzero vector to unit norm (float64)."""
    arr = np.asarray(vec, dtype=np.float64)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0 or not math.isfinite(norm):
        raise ZeroVector(field)
    return arr / norm


def check_positive(value, field: str, allow_none: bool = True):
    if value is None:
        if allow_none:
            return None
        raise InvalidField(field, "required")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvalidField(field, "not a number")
    if not math.isfinite(value) or value <= 0:
        raise InvalidField(field, "must be > 0")
    return float(value)

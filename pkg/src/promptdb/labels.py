"""Categorical label vocabularies and the age bucketing rule."""

from __future__ import annotations

from .errors import OutOfRange

GENDERS = ("male", "female", "unknown")

AGE_GROUPS = ("child", "teenager", "young_adult", "middle_aged", "elderly")

# Inclusive upper bound of each bucket. The published buckets skip 55
# (40-54 vs >55); it is folded into elderly.
_AGE_UPPER = ((13, "child"), (25, "teenager"), (39, "young_adult"), (54, "middle_aged"), (120, "elderly"))

TASKS = ("gender", "age", "emotion", "speaking_rate", "language")
NUMERIC_TASKS = frozenset({"age", "speaking_rate"})

MODALITIES = ("audio", "visual", "text")


def age_group_of(age_years: int) -> str:
    """Map an age in whole years (0-120) to its age group."""
    if isinstance(age_years, bool) or not isinstance(age_years, int):
        raise OutOfRange(f"age must be an integer, got {age_years!r}")
    if not 0 <= age_years <= 120:
        raise OutOfRange(f"age {age_years} outside 0..120")
    for upper, group in _AGE_UPPER:
        if age_years <= upper:
            return group
    raise AssertionError("unreachable")

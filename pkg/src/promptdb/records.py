"""Record schema, manifest parsing and immutable database snapshots."""

from __future__ import annotations

import json
import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from functools import cached_property
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

from ._validation import check_language, check_positive, check_unit_vector
from .errors import (
    DimensionMismatch,
    DuplicateId,
    EmptyDatabase,
    InvalidField,
    MalformedLine,
    MissingField,
    OutOfRange,
)
from .labels import AGE_GROUPS, GENDERS, age_group_of

Dims = tuple[int, int, int]

_TOKEN_RE = re.compile(r"[^\W_]+(?:['-][^\W_]+)*")


def tokenize(text: str) -> list[str]:
    """Lowercased word tokens of a description (hyphenated words kept whole)."""
    return _TOKEN_RE.findall(unicodedata.normalize("NFC", text).lower())


def term_counts(text: str) -> dict[str, float]:
    return {t: float(c) for t, c in sorted(Counter(tokenize(text)).items())}


def _vec_equal(a: np.ndarray | None, b: np.ndarray | None) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()


@dataclass(frozen=True, eq=False)
class PromptRecord:
    """One annotated speech sample.

    Dense vectors are float32 and unit-norm. Numeric labels that were not
    annotated are ``None``; they are never replaced by sentinel values.
    """

    id: str
    language: str
    duration_s: float
    speaker_vec: np.ndarray
    emotion_vec: np.ndarray
    transcript: str = ""
    description: str = ""
    gender: str = "unknown"
    age_years: int | None = None
    age_group: str | None = None
    emotion: str = "neutral"
    speaking_rate: float | None = None
    pitch_mean_hz: float | None = None
    face_vec: np.ndarray | None = None
    desc_vec: Mapping[str, float] = field(default_factory=dict)
    candidate_for: frozenset[str] = frozenset()
    quality: float | None = None

    def __eq__(self, other):
        if not isinstance(other, PromptRecord):
            return NotImplemented
        scalar = (
            "id", "language", "duration_s", "transcript", "description", "gender",
            "age_years", "age_group", "emotion", "speaking_rate", "pitch_mean_hz",
            "candidate_for", "quality",
        )
        return (
            all(getattr(self, f) == getattr(other, f) for f in scalar)
            and dict(self.desc_vec) == dict(other.desc_vec)
            and _vec_equal(self.speaker_vec, other.speaker_vec)
            and _vec_equal(self.emotion_vec, other.emotion_vec)
            and _vec_equal(self.face_vec, other.face_vec)
        )

    __hash__ = None

    def with_candidate(self, language: str) -> PromptRecord:
        if language == self.language:
            raise InvalidField("candidate_for", "cannot contain the record's own language")
        return replace(self, candidate_for=self.candidate_for | {language})

    def to_manifest(self) -> dict:
        """Manifest object for this record (dense vectors excluded)."""
        return {
            "id": self.id,
            "language": self.language,
            "duration_s": self.duration_s,
            "transcript": self.transcript,
            "description": self.description,
            "gender": self.gender,
            "age_years": self.age_years,
            "age_group": self.age_group,
            "emotion": self.emotion,
            "speaking_rate": self.speaking_rate,
            "pitch_mean_hz": self.pitch_mean_hz,
            "desc_vec": dict(self.desc_vec),
            "candidate_for": sorted(self.candidate_for),
            "quality": self.quality,
        }

    def to_json(self) -> dict:
        """Manifest object plus inline vectors (the ingest input format)."""
        obj = self.to_manifest()
        obj["speaker_vec"] = [float(x) for x in self.speaker_vec]
        obj["emotion_vec"] = [float(x) for x in self.emotion_vec]
        obj["face_vec"] = None if self.face_vec is None else [float(x) for x in self.face_vec]
        return obj


def _opt_str(obj: dict, name: str, default: str) -> str:
    value = obj.get(name)
    if value is None:
        return default
    if not isinstance(value, str):
        raise InvalidField(name, "not a string")
    return value


def _parse_desc_vec(raw, description: str) -> dict[str, float]:
    if raw is None:
        return term_counts(description)
    if not isinstance(raw, dict):
        raise InvalidField("desc_vec", "not an object")
    out = {}
    for term, weight in raw.items():
        if isinstance(weight, bool) or not isinstance(weight, (int, float)):
            raise InvalidField("desc_vec", f"weight for {term!r} is not a number")
        if not math.isfinite(weight) or weight < 0:
            raise InvalidField("desc_vec", f"weight for {term!r} must be finite and >= 0")
        out[term] = float(weight)
    return dict(sorted(out.items()))


def parse_record(line: str | dict, dims: Dims, vectors=None) -> PromptRecord:
    """Parse and validate one manifest object.

    ``vectors`` is ``(speaker_vec, emotion_vec, face_vec_or_None)`` when the
    dense vectors come from a vector store; otherwise they are read from the
    ``speaker_vec``/``emotion_vec``/``face_vec`` keys of the object itself.
    """
    if isinstance(line, str):
        try:
            obj = json.loads(line)
        except (json.JSONDecodeError, RecursionError) as exc:
            raise MalformedLine(str(exc)) from None
    else:
        obj = line
    if not isinstance(obj, dict):
        raise MalformedLine("expected a JSON object")
    d_s, d_e, d_f = dims

    for name in ("id", "language", "duration_s"):
        if obj.get(name) is None:
            raise MissingField(name)
    rid = obj["id"]
    if not isinstance(rid, str) or not rid:
        raise InvalidField("id", "must be a nonempty string")
    language = check_language(obj["language"])
    duration = check_positive(obj["duration_s"], "duration_s", allow_none=False)

    gender = _opt_str(obj, "gender", "unknown")
    if gender not in GENDERS:
        raise InvalidField("gender", f"unknown value {gender!r}")

    age_years = obj.get("age_years")
    if age_years is not None:
        if isinstance(age_years, float) and age_years.is_integer():
            age_years = int(age_years)
        try:
            derived = age_group_of(age_years)
        except OutOfRange as exc:
            raise InvalidField("age_years", str(exc)) from None
    age_group = obj.get("age_group")
    if age_group is not None and age_group not in AGE_GROUPS:
        raise InvalidField("age_group", f"unknown value {age_group!r}")
    if age_years is not None:
        if age_group is not None and age_group != derived:
            raise InvalidField("age_group", f"{age_group!r} inconsistent with age {age_years}")
        age_group = derived

    emotion = _opt_str(obj, "emotion", "neutral")
    if not emotion:
        raise InvalidField("emotion", "empty label")
    speaking_rate = check_positive(obj.get("speaking_rate"), "speaking_rate")
    pitch = check_positive(obj.get("pitch_mean_hz"), "pitch_mean_hz")
    quality = obj.get("quality")
    if quality is not None:
        if isinstance(quality, bool) or not isinstance(quality, (int, float)) or not 1 <= quality <= 5:
            raise InvalidField("quality", "must be a number in [1, 5]")
        quality = float(quality)

    transcript = _opt_str(obj, "transcript", "")
    description = _opt_str(obj, "description", "")
    desc_vec = _parse_desc_vec(obj.get("desc_vec"), description)

    cand = obj.get("candidate_for") or []
    if not isinstance(cand, (list, tuple)):
        raise InvalidField("candidate_for", "not a list")
    candidate_for = frozenset(check_language(c) for c in cand)
    if language in candidate_for:
        raise InvalidField("candidate_for", "cannot contain the record's own language")

    if vectors is not None:
        spk, emo, face = vectors
    else:
        for name in ("speaker_vec", "emotion_vec"):
            if obj.get(name) is None:
                raise MissingField(name)
        spk, emo, face = obj["speaker_vec"], obj["emotion_vec"], obj.get("face_vec")
    speaker_vec = check_unit_vector(spk, "speaker_vec", d_s)
    emotion_vec = check_unit_vector(emo, "emotion_vec", d_e)
    face_vec = None
    if face is not None:
        if d_f == 0:
            raise DimensionMismatch("face_vec", len(face), 0)
        face_vec = check_unit_vector(face, "face_vec", d_f)

    return PromptRecord(
        id=rid,
        language=language,
        duration_s=duration,
        speaker_vec=speaker_vec,
        emotion_vec=emotion_vec,
        transcript=transcript,
        description=description,
        gender=gender,
        age_years=age_years,
        age_group=age_group,
        emotion=emotion,
        speaking_rate=speaking_rate,
        pitch_mean_hz=pitch,
        face_vec=face_vec,
        desc_vec=MappingProxyType(desc_vec),
        candidate_for=candidate_for,
        quality=quality,
    )


@dataclass(frozen=True, eq=False)
class DatabaseSnapshot:
    """Immutable, id-ordered collection of records.

    Column arrays (``speaker_matrix``, ``rates`` ...) are built lazily and
    cached; the snapshot itself is never mutated, so it can be shared freely
    between threads.
    """

    records: tuple[PromptRecord, ...]
    dims: Dims
    vocab: Mapping[str, int]
    created_at: datetime

    def __eq__(self, other):
        if not isinstance(other, DatabaseSnapshot):
            return NotImplemented
        return (
            self.dims == other.dims
            and dict(self.vocab) == dict(other.vocab)
            and self.records == other.records
        )

    __hash__ = None

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @cached_property
    def ids(self) -> tuple[str, ...]:
        return tuple(r.id for r in self.records)

    @cached_property
    def index(self) -> Mapping[str, int]:
        return MappingProxyType({r.id: i for i, r in enumerate(self.records)})

    def get(self, record_id: str) -> PromptRecord:
        return self.records[self.index[record_id]]

    def indices_of(self, ids: Iterable[str]) -> np.ndarray:
        index = self.index
        return np.fromiter((index[i] for i in ids), dtype=np.intp)

    @cached_property
    def languages(self) -> frozenset[str]:
        return frozenset(r.language for r in self.records)

    @cached_property
    def speaker_matrix(self) -> np.ndarray:
        return np.vstack([r.speaker_vec for r in self.records]).astype(np.float64)

    @cached_property
    def emotion_matrix(self) -> np.ndarray:
        return np.vstack([r.emotion_vec for r in self.records]).astype(np.float64)

    @cached_property
    def face_mask(self) -> np.ndarray:
        return np.array([r.face_vec is not None for r in self.records], dtype=bool)

    @cached_property
    def face_matrix(self) -> np.ndarray:
        """Face vectors; rows of records without a face are zero."""
        out = np.zeros((len(self.records), self.dims[2]), dtype=np.float64)
        for i, r in enumerate(self.records):
            if r.face_vec is not None:
                out[i] = r.face_vec
        return out

    @cached_property
    def rates(self) -> np.ndarray:
        return np.array([np.nan if r.speaking_rate is None else r.speaking_rate for r in self.records])

    @cached_property
    def pitches(self) -> np.ndarray:
        return np.array([np.nan if r.pitch_mean_hz is None else r.pitch_mean_hz for r in self.records])

    def replace_records(self, records: Iterable[PromptRecord]) -> DatabaseSnapshot:
        return build_snapshot(list(records), dims=self.dims)


def build_snapshot(records: list[PromptRecord], dims: Dims | None = None) -> DatabaseSnapshot:
    """Validate and index ``records`` into a new snapshot."""
    if not records:
        raise EmptyDatabase("no records")
    if dims is None:
        first = records[0]
        d_f = next((len(r.face_vec) for r in records if r.face_vec is not None), 0)
        dims = (len(first.speaker_vec), len(first.emotion_vec), d_f)
    d_s, d_e, d_f = dims
    seen = set()
    for r in records:
        if r.id in seen:
            raise DuplicateId(r.id)
        seen.add(r.id)
        if r.speaker_vec.shape != (d_s,):
            raise DimensionMismatch("speaker_vec", r.speaker_vec.shape[0], d_s)
        if r.emotion_vec.shape != (d_e,):
            raise DimensionMismatch("emotion_vec", r.emotion_vec.shape[0], d_e)
        if r.face_vec is not None and r.face_vec.shape != (d_f,):
            raise DimensionMismatch("face_vec", r.face_vec.shape[0], d_f)
    ordered = tuple(sorted(records, key=lambda r: r.id))
    terms = sorted({t for r in ordered for t in r.desc_vec})
    vocab = MappingProxyType({t: i for i, t in enumerate(terms)})
    return DatabaseSnapshot(
        records=ordered,
        dims=(d_s, d_e, d_f),
        vocab=vocab,
        created_at=datetime.now(timezone.utc),
    )

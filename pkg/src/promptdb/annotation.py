"""Multi-agent label annotation.

Agent models are described by a knowledge base of per-(task, language)
performance scores. For each item, eligible agents get weights proportional
to their scores, their outputs are fused per task, and the fused labels are
rendered into a one-sentence voice description.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_language
from .errors import (
    BadInput,
    InvalidField,
    IoFailure,
    MalformedLine,
    NoModalities,
    NoOutputs,
    NothingToDescribe,
    UnweightedAgent,
)
from .labels import MODALITIES, NUMERIC_TASKS, TASKS, age_group_of
from .records import DatabaseSnapshot

__all__ = [
    "AgentProfile",
    "StateDescription",
    "AgentOutput",
    "WeightAssignment",
    "AnnotationItem",
    "build_state",
    "assign_weights",
    "fuse_categorical",
    "fuse_numeric",
    "age_group_of",
    "tercile_cuts",
    "level_of",
    "render_description",
    "load_knowledge_base",
    "MultiAgentAnnotator",
]


@dataclass(frozen=True)
class AgentProfile:
    agent_id: str
    modality: str
    scores: Mapping[tuple[str, str], float]

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise InvalidField("modality", repr(self.modality))
        for (task, lang), score in self.scores.items():
            if task not in TASKS:
                raise InvalidField("scores", f"unknown task {task!r}")
            check_language(lang)
            if not 0.0 <= score <= 1.0:
                raise InvalidField("scores", f"{task}:{lang} = {score} not in [0, 1]")

    @classmethod
    def from_json(cls, obj: dict) -> AgentProfile:
        try:
            scores = {}
            for key, value in obj["scores"].items():
                task, _, lang = key.partition(":")
                scores[(task, lang)] = float(value)
            return cls(str(obj["agent_id"]), obj["modality"], scores)
        except (KeyError, TypeError, AttributeError, ValueError) as exc:
            raise MalformedLine(f"agent profile: {exc}") from None


def load_knowledge_base(path) -> list[AgentProfile]:
    """Read one agent profile per JSON line."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from None
    kb = []
    for line in lines:
        if line.strip():
            try:
                kb.append(AgentProfile.from_json(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise MalformedLine(str(exc)) from None
    return kb


@dataclass(frozen=True)
class StateDescription:
    language: str
    modalities_present: frozenset[str]


def build_state(language: str, modalities: Iterable[str]) -> StateDescription:
    check_language(language)
    mods = frozenset(modalities)
    if not mods:
        raise NoModalities(language)
    bad = mods - set(MODALITIES)
    if bad:
        raise InvalidField("modalities", f"unknown {sorted(bad)}")
    return StateDescription(language, mods)


@dataclass(frozen=True)
class AgentOutput:
    agent_id: str
    task: str
    value: str | float

    def __post_init__(self):
        if self.task not in TASKS:
            raise InvalidField("task", repr(self.task))
        numeric = isinstance(self.value, (int, float)) and not isinstance(self.value, bool)
        if (self.task in NUMERIC_TASKS) != numeric:
            kind = "numeric" if self.task in NUMERIC_TASKS else "categorical"
            raise InvalidField("value", f"task {self.task} needs a {kind} value, got {self.value!r}")


@dataclass(frozen=True)
class WeightAssignment:
    """task -> ((agent_id, weight), ...), agents in id order."""

    weights: Mapping[str, tuple[tuple[str, float], ...]] = field(default_factory=dict)

    def __getitem__(self, task):
        return self.weights[task]

    def __contains__(self, task):
        return task in self.weights

    def tasks(self):
        return tuple(self.weights)

    def weight(self, task: str, agent_id: str) -> float | None:
        for aid, w in self.weights.get(task, ()):
            if aid == agent_id:
                return w
        return None


def assign_weights(state: StateDescription, kb: Sequence[AgentProfile]) -> WeightAssignment:
    """Score-proportional weights over the agents able to handle each task.

    An agent is eligible for a task when its modality is present in the item
    and the knowledge base has a score for (task, item language). If every
    eligible score is zero the weights fall back to uniform.
    """
    out = {}
    for task in TASKS:
        eligible = sorted(
            (a.agent_id, a.scores[(task, state.language)])
            for a in kb
            if a.modality in state.modalities_present and (task, state.language) in a.scores
        )
        if not eligible:
            continue
        total = math.fsum(s for _, s in eligible)
        if total > 0:
            out[task] = tuple((aid, s / total) for aid, s in eligible)
        else:
            out[task] = tuple((aid, 1.0 / len(eligible)) for aid, _ in eligible)
    return WeightAssignment(out)


def _weighted(outputs: Sequence[AgentOutput], weights: WeightAssignment, task: str):
    relevant = [o for o in outputs if o.task == task]
    if not relevant:
        raise NoOutputs(task)
    pairs = []
    for o in relevant:
        w = weights.weight(task, o.agent_id)
        if w is None:
            raise UnweightedAgent(o.agent_id)
        pairs.append((o.value, w))
    return pairs


def fuse_categorical(outputs: Sequence[AgentOutput], weights: WeightAssignment, task: str) -> str:
    """Label with the largest summed weight; ties go to the smallest label.

    Sums are exact (rational), so a tie means the weights really add up to
    the same value rather than merely rounding to it.
    """
    totals = defaultdict(Fraction)
    for value, w in _weighted(outputs, weights, task):
        totals[value] += Fraction(w)
    return min(totals, key=lambda label: (-totals[label], label))


def fuse_numeric(outputs: Sequence[AgentOutput], weights: WeightAssignment, task: str) -> float:
    """Weighted mean of numeric outputs, renormalized over the agents that answered."""
    pairs = _weighted(outputs, weights, task)
    total = math.fsum(w for _, w in pairs)
    if total <= 0:
        return math.fsum(v for v, _ in pairs) / len(pairs)
    mean = math.fsum(v * w for v, w in pairs) / total
    lo = min(v for v, _ in pairs)
    hi = max(v for v, _ in pairs)
    return min(hi, max(lo, mean))


def tercile_cuts(values) -> tuple[float, float] | None:
    arr = np.asarray([v for v in values if v is not None and not np.isnan(v)], dtype=np.float64)
    if arr.size == 0:
        return None
    q1, q2 = np.quantile(arr, [1 / 3, 2 / 3])
    return float(q1), float(q2)


def level_of(value: float, cuts: tuple[float, float], names: tuple[str, str, str]) -> str:
    if value <= cuts[0]:
        return names[0]
    if value <= cuts[1]:
        return names[1]
    return names[2]


PITCH_LEVELS = ("low", "medium", "high")
RATE_LEVELS = ("slow", "moderate", "swift")
_AGE_WORDS = {
    "child": "child",
    "teenager": "teenager",
    "young_adult": "young adult",
    "middle_aged": "middle-aged",
    "elderly": "elderly",
}
_PRONOUN = {"male": "his", "female": "her"}


def render_description(labels: Mapping[str, str | None]) -> str:
    """One-sentence description from quantized labels.

    ``labels`` may carry ``gender``, ``age_group``, ``pitch_level``,
    ``rate_level`` and ``emotion``; absent (or ``"unknown"`` gender) clauses
    are dropped.

    >>> render_description({"gender": "female", "age_group": "young_adult",
    ...     "pitch_level": "high", "rate_level": "swift", "emotion": "joy"})
    'A young adult female, voice high, pace swift, revealed joy in her emotion.'
    """
    gender = labels.get("gender")
    if gender == "unknown":
        gender = None
    age = labels.get("age_group")
    if gender is None and age is None:
        raise NothingToDescribe("need gender or age group")
    if age is not None and age not in _AGE_WORDS:
        raise InvalidField("age_group", repr(age))
    words = []
    if age is not None:
        words.append(_AGE_WORDS[age])
    words.append(gender if gender is not None else "speaker")
    head = " ".join(words)
    article = "An" if head[0] in "aeiou" else "A"
    clauses = [f"{article} {head}"]
    pitch = labels.get("pitch_level")
    if pitch is not None:
        if pitch not in PITCH_LEVELS:
            raise InvalidField("pitch_level", repr(pitch))
        clauses.append(f"voice {pitch}")
    rate = labels.get("rate_level")
    if rate is not None:
        if rate not in RATE_LEVELS:
            raise InvalidField("rate_level", repr(rate))
        clauses.append(f"pace {rate}")
    emotion = labels.get("emotion")
    if emotion is not None:
        clauses.append(f"revealed {emotion} in {_PRONOUN.get(gender, 'their')} emotion")
    return ", ".join(clauses) + "."


@dataclass(frozen=True)
class AnnotationItem:
    """One unannotated sample: its state plus the raw agent outputs."""

    id: str
    language: str
    modalities: frozenset[str]
    outputs: tuple[AgentOutput, ...]
    pitch_mean_hz: float | None = None

    @classmethod
    def from_json(cls, obj: dict) -> AnnotationItem:
        try:
            outputs = tuple(AgentOutput(str(o["agent_id"]), o["task"], o["value"]) for o in obj["outputs"])
            return cls(
                id=str(obj["id"]),
                language=obj["language"],
                modalities=frozenset(obj["modalities"]),
                outputs=outputs,
                pitch_mean_hz=obj.get("pitch_mean_hz"),
            )
        except (KeyError, TypeError) as exc:
            raise MalformedLine(f"annotation item: {exc}") from None


class MultiAgentAnnotator(BaseEstimator, TransformerMixin):
    """Fuse agent outputs into record labels and a description.

    Parameters
    ----------
    knowledge_base : list of AgentProfile
        Per-agent performance scores used to weight agents.

    ``fit`` learns pitch and speaking-rate tercile cut points, either from a
    :class:`DatabaseSnapshot` or from the items that will be annotated.
    """

    def __init__(self, knowledge_base=None):
        self.knowledge_base = knowledge_base

    def _fuse(self, item: AnnotationItem) -> dict:
        state = build_state(item.language, item.modalities)
        weights = assign_weights(state, self.knowledge_base or [])
        labels: dict = {"id": item.id, "language": item.language}
        tasks = {o.task for o in item.outputs}
        for task in TASKS:
            if task not in tasks or task not in weights:
                continue
            if task in NUMERIC_TASKS:
                labels[task] = fuse_numeric(item.outputs, weights, task)
            else:
                labels[task] = fuse_categorical(item.outputs, weights, task)
        if "age" in labels:
            age = int(round(min(120.0, max(0.0, labels.pop("age")))))
            labels["age_years"] = age
            labels["age_group"] = age_group_of(age)
        if item.pitch_mean_hz is not None:
            labels["pitch_mean_hz"] = float(item.pitch_mean_hz)
        return labels

    def fit(self, X, y=None):
        if not self.knowledge_base:
            raise BadInput("knowledge base is empty")
        if isinstance(X, DatabaseSnapshot):
            pitches = [r.pitch_mean_hz for r in X.records]
            rates = [r.speaking_rate for r in X.records]
        else:
            fused = [self._fuse(item) for item in X]
            pitches = [f.get("pitch_mean_hz") for f in fused]
            rates = [f.get("speaking_rate") for f in fused]
        self.pitch_cuts_ = tercile_cuts(pitches)
        self.rate_cuts_ = tercile_cuts(rates)
        return self

    def quantize(self, labels: Mapping) -> dict:
        check_is_fitted(self, "pitch_cuts_")
        q = {k: labels.get(k) for k in ("gender", "age_group", "emotion")}
        if labels.get("pitch_mean_hz") is not None and self.pitch_cuts_ is not None:
            q["pitch_level"] = level_of(labels["pitch_mean_hz"], self.pitch_cuts_, PITCH_LEVELS)
        if labels.get("speaking_rate") is not None and self.rate_cuts_ is not None:
            q["rate_level"] = level_of(labels["speaking_rate"], self.rate_cuts_, RATE_LEVELS)
        return q

    def transform(self, X) -> list[dict]:
        """Fused labels (plus ``description``) for each AnnotationItem."""
        check_is_fitted(self, "pitch_cuts_")
        out = []
        for item in X:
            labels = self._fuse(item)
            try:
                labels["description"] = render_description(self.quantize(labels))
            except NothingToDescribe:
                labels["description"] = ""
            out.append(labels)
        return out


"""Latency-aware anytime selection over a candidate subset.

A plan is an ordered list of similarity stages. Stage 1 scores every
candidate; each later stage scores only the top fraction of the previous
stage's inputs, rounded up (and never fewer than one):

    processed[0] = n0
    processed[i] = max(1, ceil(top_fraction[i] * processed[i - 1]))

Selection can be cut short by a deadline or an external stop signal; the
answer is then the best candidate of the last completed stage.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import (
    BadInput,
    EmptyDatabase,
    EmptySubset,
    InvalidField,
    MissingQueryFeature,
    UnmeasuredStage,
)
from .features import QueryFeatures
from .records import DatabaseSnapshot, PromptRecord
from .registration import CandidateSubset

STAGE_KINDS = ("speech_rate", "pitch", "speaker", "emotion")
BATCH_SIZE = 32

_QUERY_FIELD = {
    "speech_rate": "speaking_rate",
    "pitch": "pitch_mean_hz",
    "speaker": "speaker_vec",
    "emotion": "emotion_vec",
}


def _exact(x) -> Fraction:
    if isinstance(x, (Fraction, int)):
        return Fraction(x)
    # repr gives the shortest decimal that round-trips, so 0.2 -> 1/5 exactly
    return Fraction(repr(float(x)))


@dataclass(frozen=True)
class SimilarityStage:
    kind: str
    top_fraction: float | Fraction = 1.0
    cost_per_sample_s: float | Fraction | None = None

    def __post_init__(self):
        if self.kind not in STAGE_KINDS:
            raise InvalidField("kind", repr(self.kind))
        if not 0 < self.top_fraction <= 1:
            raise InvalidField("top_fraction", f"{self.top_fraction} not in (0, 1]")
        if self.cost_per_sample_s is not None and self.cost_per_sample_s < 0:
            raise InvalidField("cost_per_sample_s", "must be >= 0")


@dataclass(frozen=True)
class SelectionPlan:
    stages: tuple[SimilarityStage, ...]

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.stages:
            raise InvalidField("stages", "plan needs at least one stage")
        if self.stages[0].top_fraction != 1:
            raise InvalidField("stages", "first stage must keep 100%")

    def __len__(self):
        return len(self.stages)

    def processed_counts(self, n0: int) -> list[int]:
        counts = [int(n0)]
        for st in self.stages[1:]:
            counts.append(max(1, math.ceil(_exact(st.top_fraction) * counts[-1])))
        return counts

    def truncated(self, n_stages: int) -> SelectionPlan:
        return SelectionPlan(self.stages[: max(1, n_stages)])

    def with_costs(self, costs: Sequence) -> SelectionPlan:
        return SelectionPlan(tuple(replace(s, cost_per_sample_s=c) for s, c in zip(self.stages, costs)))

    def to_config(self) -> list[dict]:
        out = []
        for s in self.stages:
            item = {"kind": s.kind, "top_percent": float(s.top_fraction) * 100}
            if s.cost_per_sample_s is not None:
                item["cost_per_sample_s"] = float(s.cost_per_sample_s)
            out.append(item)
        return out

    @classmethod
    def from_config(cls, items: Sequence[dict]) -> SelectionPlan:
        stages = []
        for item in items:
            if not isinstance(item, dict) or "kind" not in item:
                raise BadInput(f"bad stage entry {item!r}")
            pct = item.get("top_percent", 100)
            if isinstance(pct, bool) or not isinstance(pct, (int, float)):
                raise BadInput(f"top_percent must be a number, got {pct!r}")
            stages.append(
                SimilarityStage(item["kind"], _exact(pct) / 100, item.get("cost_per_sample_s"))
            )
        return cls(tuple(stages))


def default_plan() -> SelectionPlan:
    """Speech rate (100%), then pitch, speaker and emotion at 20% each."""
    return SelectionPlan(
        (
            SimilarityStage("speech_rate", Fraction(1)),
            SimilarityStage("pitch", Fraction(1, 5)),
            SimilarityStage("speaker", Fraction(1, 5)),
            SimilarityStage("emotion", Fraction(1, 5)),
        )
    )


@dataclass(frozen=True)
class StageTrace:
    index: int
    kind: str
    processed: int
    kept: int
    survivors: tuple[str, ...]
    elapsed_s: float
    skipped: bool = False

    def to_dict(self) -> dict:
        return {
            "stage": self.index,
            "kind": self.kind,
            "processed": self.processed,
            "kept": self.kept,
            "survivors": list(self.survivors),
            "skipped": self.skipped,
            "elapsed_us": round(self.elapsed_s * 1e6),
        }

    def to_line(self) -> str:
        return (
            f"stage={self.index} kind={self.kind} processed={self.processed} "
            f"kept={self.kept} elapsed_us={round(self.elapsed_s * 1e6)}"
            + (" skipped=1" if self.skipped else "")
        )


@dataclass(frozen=True)
class CascadeResult:
    """Outcome of one selection.

    ``interrupted_at`` is None for a full run; otherwise it is the number of
    stages that completed before the interruption (0 = cut during stage 1).
    """

    final_id: str
    stage_trace: tuple[StageTrace, ...]
    interrupted_at: int | None = None

    def to_dict(self) -> dict:
        return {
            "final_id": self.final_id,
            "interrupted_at": self.interrupted_at,
            "stage_trace": [t.to_dict() for t in self.stage_trace],
        }


def stage_score(kind: str, query: QueryFeatures, record: PromptRecord) -> float:
    """Similarity of one record to the query for one stage (higher is better).

    Rate and pitch use negated relative differences; speaker and emotion use
    the dot product of unit vectors. A record lacking the feature scores -inf.
    """
    if kind not in STAGE_KINDS:
        raise InvalidField("kind", repr(kind))
    q = getattr(query, _QUERY_FIELD[kind])
    if q is None:
        raise MissingQueryFeature(kind)
    if kind == "speech_rate":
        r = record.speaking_rate
        return -math.inf if r is None else -abs((q - r) / r)
    if kind == "pitch":
        p = record.pitch_mean_hz
        return -math.inf if p is None else -abs((q - p) / p)
    vec = record.speaker_vec if kind == "speaker" else record.emotion_vec
    return float(np.dot(vec.astype(np.float64), q))


def score_rows(kind: str, query: QueryFeatures, snapshot: DatabaseSnapshot, rows: np.ndarray) -> np.ndarray:
    """Vectorized :func:`stage_score` over snapshot rows."""
    q = getattr(query, _QUERY_FIELD[kind])
    if q is None:
        raise MissingQueryFeature(kind)
    if kind in ("speech_rate", "pitch"):
        ref = (snapshot.rates if kind == "speech_rate" else snapshot.pitches)[rows]
        with np.errstate(invalid="ignore"):
            s = -np.abs((q - ref) / ref)
        s[np.isnan(ref)] = -np.inf
        return s
    mat = snapshot.speaker_matrix if kind == "speaker" else snapshot.emotion_matrix
    return mat[rows] @ q


def _rank(rows: np.ndarray, scores: np.ndarray) -> np.ndarray:
    # snapshot rows are id-ordered, so ascending row breaks ties by id
    return rows[np.lexsort((rows, -scores))]


class _Clock:
    def __init__(self, deadline_s, stop):
        self.start = time.perf_counter()
        self.deadline_s = deadline_s
        self.stop = stop

    def expired(self) -> bool:
        if self.stop is not None and self.stop.is_set():
            return True
        return self.deadline_s is not None and time.perf_counter() - self.start >= self.deadline_s


def run_cascade(
    plan: SelectionPlan,
    subset: CandidateSubset | Sequence[str],
    snapshot: DatabaseSnapshot,
    query: QueryFeatures,
    deadline_s: float | None = None,
    stop=None,
    progress: Callable[[StageTrace], None] | None = None,
    batch_size: int = BATCH_SIZE,
) -> CascadeResult:
    """Run the staged selection and return the chosen prompt.

    ``stop`` is any object with ``is_set()`` (e.g. ``threading.Event``); it
    and the deadline are checked between batches of ``batch_size`` scores and
    between stages. ``progress`` is called after each completed stage.

    A later stage whose query feature is missing is skipped: it keeps the
    previous stage's order and applies its cut.
    """
    ids = subset.ids if isinstance(subset, CandidateSubset) else tuple(subset)
    if len(ids) == 0:
        raise EmptySubset("candidate subset is empty")
    if getattr(query, _QUERY_FIELD[plan.stages[0].kind]) is None:
        raise MissingQueryFeature(plan.stages[0].kind)
    if len(set(ids)) != len(ids):
        raise BadInput("candidate subset has duplicate ids")
    try:
        rows = snapshot.indices_of(ids)
    except KeyError as exc:
        raise BadInput(f"candidate id {exc.args[0]!r} not in the database") from None
    clock = _Clock(deadline_s, stop)
    counts = plan.processed_counts(rows.size)
    all_ids = snapshot.ids

    inputs = rows
    traces: list[StageTrace] = []
    final_row = None
    interrupted_at = None
    n_stages = len(plan.stages)

    for i, stage in enumerate(plan.stages):
        if i > 0 and clock.expired():
            interrupted_at = i
            break
        t0 = time.perf_counter()
        skipped = getattr(query, _QUERY_FIELD[stage.kind]) is None
        if skipped:
            ranked = inputs
        else:
            scores = np.empty(inputs.size)
            cut = None
            for b in range(0, inputs.size, batch_size):
                end = min(b + batch_size, inputs.size)
                scores[b:end] = score_rows(stage.kind, query, snapshot, inputs[b:end])
                if end < inputs.size and clock.expired():
                    cut = end
                    break
            if cut is not None:
                interrupted_at = i
                if i == 0:
                    final_row = _rank(inputs[:cut], scores[:cut])[0]
                break
            ranked = _rank(inputs, scores)
        kept = counts[i + 1] if i + 1 < n_stages else 1
        survivors = ranked[:kept]
        trace = StageTrace(
            index=i + 1,
            kind=stage.kind,
            processed=int(inputs.size),
            kept=int(kept),
            survivors=tuple(all_ids[r] for r in survivors),
            elapsed_s=time.perf_counter() - t0,
            skipped=skipped,
        )
        traces.append(trace)
        if progress is not None:
            progress(trace)
        inputs = survivors
        final_row = survivors[0]

    return CascadeResult(all_ids[final_row], tuple(traces), interrupted_at)


def estimate_total_time(plan: SelectionPlan, n0: int):
    """Predicted selection time: sum over stages of per-sample cost x processed count.

    Plain Python arithmetic, so Fraction costs give exact results.
    """
    for s in plan.stages:
        if s.cost_per_sample_s is None:
            raise UnmeasuredStage(s.kind)
    counts = plan.processed_counts(n0)
    return sum((s.cost_per_sample_s * c for s, c in zip(plan.stages, counts)), 0)


def plan_for_budget(plan: SelectionPlan, n0: int, budget_s) -> SelectionPlan:
    """Longest prefix of ``plan`` whose estimated time fits ``budget_s``; never empty."""
    best = 1
    for k in range(1, len(plan.stages) + 1):
        if estimate_total_time(plan.truncated(k), n0) <= budget_s:
            best = k
        else:
            break
    return plan.truncated(best)


def _probe_query(snapshot: DatabaseSnapshot, rng: np.random.Generator) -> QueryFeatures:
    rec = snapshot.records[int(rng.integers(len(snapshot.records)))]
    rates = snapshot.rates[~np.isnan(snapshot.rates)]
    pitches = snapshot.pitches[~np.isnan(snapshot.pitches)]
    return QueryFeatures(
        speaking_rate=rec.speaking_rate or (float(rates.mean()) if rates.size else 4.0),
        pitch_mean_hz=rec.pitch_mean_hz or (float(pitches.mean()) if pitches.size else 150.0),
        speaker_vec=rec.speaker_vec,
        emotion_vec=rec.emotion_vec,
    )


def calibrate_costs(
    plan: SelectionPlan,
    snapshot: DatabaseSnapshot,
    sample_n: int = 1000,
    repeats: int = 5,
    seed: int = 0,
    batch_size: int = BATCH_SIZE,
) -> SelectionPlan:
    """Measure each stage's per-sample cost (median of ``repeats`` timed runs)."""
    if snapshot is None or len(snapshot.records) == 0:
        raise EmptyDatabase("no records to calibrate on")
    if sample_n < 100:
        raise BadInput(f"sample_n must be >= 100, got {sample_n}")
    rng = np.random.default_rng(seed)
    query = _probe_query(snapshot, rng)
    n = len(snapshot.records)
    costs = []
    for stage in plan.stages:
        times = []
        for _ in range(repeats):
            rows = np.sort(rng.choice(n, size=sample_n, replace=sample_n > n))
            t0 = time.perf_counter()
            scores = np.empty(rows.size)
            for b in range(0, rows.size, batch_size):
                scores[b : b + batch_size] = score_rows(stage.kind, query, snapshot, rows[b : b + batch_size])
            _rank(rows, scores)
            times.append(time.perf_counter() - t0)
        costs.append(float(np.median(times)) / sample_n)
    return plan.with_costs(costs)


class CascadeSelector(BaseEstimator):
    """Estimator front end for :func:`run_cascade`.

    Parameters
    ----------
    plan : SelectionPlan or list of stage dicts, optional
        Defaults to :func:`default_plan`.
    deadline_s : float, optional
        Per-query time budget; None disables it.
    calibrate : bool
        Measure per-stage costs during ``fit``.
    sample_n : int
        Records timed per stage when calibrating.
    """

    def __init__(self, plan=None, deadline_s=None, calibrate=False, sample_n=1000, batch_size=BATCH_SIZE):
        self.plan = plan
        self.deadline_s = deadline_s
        self.calibrate = calibrate
        self.sample_n = sample_n
        self.batch_size = batch_size

    def fit(self, X: DatabaseSnapshot, y=None):
        if X is None or len(X.records) == 0:
            raise EmptyDatabase("no records")
        plan = self.plan
        if plan is None:
            plan = default_plan()
        elif not isinstance(plan, SelectionPlan):
            plan = SelectionPlan.from_config(plan)
        if self.calibrate:
            plan = calibrate_costs(plan, X, self.sample_n, batch_size=self.batch_size)
        self.snapshot_ = X
        self.plan_ = plan
        return self

    def select(self, subset, query, deadline_s=None, stop=None, progress=None) -> CascadeResult:
        check_is_fitted(self, "plan_")
        return run_cascade(
            self.plan_,
            subset,
            self.snapshot_,
            query,
            deadline_s=self.deadline_s if deadline_s is None else deadline_s,
            stop=stop,
            progress=progress,
            batch_size=self.batch_size,
        )

    def predict(self, X):
        """Chosen prompt id for each ``(subset, query)`` pair (or a single pair)."""
        if isinstance(X, tuple) and len(X) == 2 and isinstance(X[1], QueryFeatures):
            return self.select(*X).final_id
        return [self.select(s, q).final_id for s, q in X]

    def estimate_time(self, n0: int):
        check_is_fitted(self, "plan_")
        return estimate_total_time(self.plan_, n0)

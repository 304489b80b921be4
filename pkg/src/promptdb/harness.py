"""Desk-scale evaluation on seeded synthetic corpora.

Compares three ways of picking a prompt for a noisy real-time input:
``original`` (use the input itself), ``random`` (any record), and
``proposed`` (audio registration followed by the cascade).
"""

from __future__ import annotations

import csv
import io
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .annotation import PITCH_LEVELS, RATE_LEVELS, level_of, render_description, tercile_cuts
from .errors import BadSpec
from .features import QueryFeatures
from .labels import age_group_of
from .metrics import srs
from .online_select import SelectionPlan, default_plan, run_cascade
from .records import DatabaseSnapshot, PromptRecord, build_snapshot, term_counts
from .registration import DEFAULT_K, register_audio

STRATEGIES = ("original", "random", "proposed")


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    n_records: int = 400
    n_speakers: int = 20
    dims: tuple[int, int, int] = (64, 16, 32)
    emotions: tuple[str, ...] = ("angry", "happy", "neutral", "sad", "surprised")
    languages: tuple[str, ...] = ("en",)
    rate_mean: float = 4.5
    rate_sd: float = 0.8
    rate_jitter: float = 0.10
    pitch_jitter: float = 0.05
    speaker_spread: float = 0.35
    emotion_spread: float = 0.30
    face_spread: float = 0.20
    n_queries: int = 40
    vector_noise: float = 0.5
    scalar_noise: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if self.n_speakers < 1 or self.n_records < self.n_speakers:
            raise BadSpec("need n_records >= n_speakers >= 1")
        if min(self.dims[:2]) < 1 or self.dims[2] < 0:
            raise BadSpec(f"bad dims {self.dims}")
        if not self.emotions or not self.languages:
            raise BadSpec("need at least one emotion and one language")
        if self.n_queries < 0:
            raise BadSpec("n_queries must be >= 0")
        for name in ("rate_sd", "rate_jitter", "pitch_jitter", "speaker_spread", "emotion_spread",
                     "face_spread", "vector_noise", "scalar_noise"):
            if getattr(self, name) < 0:
                raise BadSpec(f"{name} must be >= 0")
        if self.rate_mean <= 0:
            raise BadSpec("rate_mean must be > 0")


@dataclass(frozen=True)
class EvalQuery:
    speaker: int
    clean: QueryFeatures
    noisy: QueryFeatures


@dataclass
class SyntheticCorpus:
    snapshot: DatabaseSnapshot
    queries: list[EvalQuery]
    speaker_of: dict[str, int]


def _unit(v):
    return v / np.linalg.norm(v)


def _perturb(rng, center, spread):
    return _unit(center + spread * rng.standard_normal(center.size) / math.sqrt(center.size))


def generate_corpus(spec: SyntheticCorpusSpec) -> SyntheticCorpus:
    """Seeded corpus of speaker clusters plus held-out noisy queries."""
    rng = np.random.default_rng(spec.seed)
    d_s, d_e, d_f = spec.dims
    emo_centers = [_unit(rng.standard_normal(d_e)) for _ in spec.emotions]

    speakers = []
    for s in range(spec.n_speakers):
        gender = "female" if s % 2 else "male"
        speakers.append(
            {
                "gender": gender,
                "age": int(rng.integers(8, 80)),
                "language": spec.languages[s % len(spec.languages)],
                "rate": max(1.0, spec.rate_mean + spec.rate_sd * rng.standard_normal()),
                "pitch": (210.0 if gender == "female" else 120.0) * math.exp(0.12 * rng.standard_normal()),
                "spk": _unit(rng.standard_normal(d_s)),
                "face": _unit(rng.standard_normal(d_f)) if d_f else None,
            }
        )

    def sample(spk):
        emo = int(rng.integers(len(spec.emotions)))
        return {
            "speaker_vec": _perturb(rng, spk["spk"], spec.speaker_spread),
            "emotion": emo,
            "emotion_vec": _perturb(rng, emo_centers[emo], spec.emotion_spread),
            "rate": spk["rate"] * math.exp(spec.rate_jitter * rng.standard_normal()),
            "pitch": spk["pitch"] * math.exp(spec.pitch_jitter * rng.standard_normal()),
        }

    raw = []
    for i in range(spec.n_records):
        s = i % spec.n_speakers
        spk = speakers[s]
        feat = sample(spk)
        face = _perturb(rng, spk["face"], spec.face_spread) if spk["face"] is not None else None
        raw.append((f"r{i:05d}", s, spk, feat, face, float(rng.uniform(2.0, 5.0))))

    pitch_cuts = tercile_cuts([f["pitch"] for *_, f, _, _ in raw])
    rate_cuts = tercile_cuts([f["rate"] for *_, f, _, _ in raw])
    records = []
    speaker_of = {}
    for rid, s, spk, feat, face, quality in raw:
        emotion = spec.emotions[feat["emotion"]]
        desc = render_description(
            {
                "gender": spk["gender"],
                "age_group": age_group_of(spk["age"]),
                "pitch_level": level_of(feat["pitch"], pitch_cuts, PITCH_LEVELS),
                "rate_level": level_of(feat["rate"], rate_cuts, RATE_LEVELS),
                "emotion": emotion,
            }
        )
        records.append(
            PromptRecord(
                id=rid,
                language=spk["language"],
                duration_s=float(np.round(rng.uniform(2.0, 12.0), 3)),
                speaker_vec=feat["speaker_vec"].astype(np.float32),
                emotion_vec=feat["emotion_vec"].astype(np.float32),
                description=desc,
                gender=spk["gender"],
                age_years=spk["age"],
                age_group=age_group_of(spk["age"]),
                emotion=emotion,
                speaking_rate=float(feat["rate"]),
                pitch_mean_hz=float(feat["pitch"]),
                face_vec=None if face is None else face.astype(np.float32),
                desc_vec=term_counts(desc),
                quality=round(quality, 3),
            )
        )
        speaker_of[rid] = s

    queries = []
    for q in range(spec.n_queries):
        s = q % spec.n_speakers
        clean = sample(speakers[s])
        noise = spec.scalar_noise
        clean_q = QueryFeatures(clean["rate"], clean["pitch"], clean["speaker_vec"], clean["emotion_vec"])
        noisy_q = QueryFeatures(
            abs(clean["rate"] * (1 + noise * rng.standard_normal())),
            abs(clean["pitch"] * (1 + noise * rng.standard_normal())),
            _perturb(rng, clean["speaker_vec"], spec.vector_noise),
            _perturb(rng, clean["emotion_vec"], spec.vector_noise),
        )
        queries.append(EvalQuery(s, clean_q, noisy_q))

    return SyntheticCorpus(build_snapshot(records, dims=spec.dims), queries, speaker_of)


@dataclass(frozen=True)
class EvalRow:
    strategy: str
    point: int | None
    ss: float
    es: float
    srs: float
    n: int


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)

    def row(self, strategy: str, point: int | None = None) -> EvalRow:
        for r in self.rows:
            if r.strategy == strategy and r.point == point:
                return r
        raise KeyError((strategy, point))

    def to_text(self) -> str:
        header = ("strategy", "point", "SS", "ES", "SRS", "n")
        body = [
            (r.strategy, "-" if r.point is None else str(r.point), f"{r.ss:.4f}", f"{r.es:.4f}", f"{r.srs:.4f}", str(r.n))
            for r in self.rows
        ]
        widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(header)]
        lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
        lines += ["  ".join(c.ljust(w) for c, w in zip(b, widths)) for b in body]
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["strategy", "point", "ss", "es", "srs", "n"])
        for r in self.rows:
            w.writerow([r.strategy, "" if r.point is None else r.point, repr(r.ss), repr(r.es), repr(r.srs), r.n])
        return buf.getvalue()


def _prompt_scores(record: PromptRecord, clean: QueryFeatures) -> tuple[float, float, float]:
    ss = float(np.dot(record.speaker_vec.astype(np.float64), clean.speaker_vec))
    es = float(np.dot(record.emotion_vec.astype(np.float64), clean.emotion_vec))
    return ss, es, srs(record.speaking_rate, clean.speaking_rate)


def _mean_row(strategy, point, triples) -> EvalRow:
    arr = np.array(triples, dtype=np.float64).reshape(-1, 3)
    ss, es, sr = arr.mean(axis=0) if arr.size else (math.nan,) * 3
    return EvalRow(strategy, point, float(ss), float(es), float(sr), len(triples))


def _proposed(snapshot, query: EvalQuery, plan, k, stop_after=None):
    subset = register_audio(snapshot, query.noisy.speaker_vec, k)
    if stop_after is None:
        return run_cascade(plan, subset, snapshot, query.noisy)
    stop = threading.Event()

    def progress(trace):
        if trace.index >= stop_after:
            stop.set()

    return run_cascade(plan, subset, snapshot, query.noisy, stop=stop, progress=progress)


def run_eval(
    snapshot: DatabaseSnapshot,
    queries: list[EvalQuery],
    plan: SelectionPlan | None = None,
    strategies=STRATEGIES,
    k: int = DEFAULT_K,
    seed: int = 0,
) -> EvalReport:
    """Mean SS / ES / SRS of each strategy's chosen prompt against the clean query."""
    plan = plan or default_plan()
    report = EvalReport()
    for strategy in strategies:
        triples = []
        rng = np.random.default_rng(seed)
        for q in queries:
            if strategy == "original":
                n = q.noisy
                triples.append(
                    (
                        float(np.dot(n.speaker_vec, q.clean.speaker_vec)),
                        float(np.dot(n.emotion_vec, q.clean.emotion_vec)),
                        srs(n.speaking_rate, q.clean.speaking_rate),
                    )
                )
            elif strategy == "random":
                rec = snapshot.records[int(rng.integers(len(snapshot.records)))]
                triples.append(_prompt_scores(rec, q.clean))
            elif strategy == "proposed":
                result = _proposed(snapshot, q, plan, k)
                triples.append(_prompt_scores(snapshot.get(result.final_id), q.clean))
            else:
                raise BadSpec(f"unknown strategy {strategy!r}")
        report.rows.append(_mean_row(strategy, None, triples))
    return report


def sweep_interruption(
    snapshot: DatabaseSnapshot,
    queries: list[EvalQuery],
    plan: SelectionPlan | None = None,
    points=None,
    k: int = DEFAULT_K,
) -> EvalReport:
    """Proposed-strategy means when the cascade is stopped after stage 1..N."""
    plan = plan or default_plan()
    points = list(points) if points is not None else list(range(1, len(plan.stages) + 1))
    report = EvalReport()
    for point in points:
        if not 1 <= point <= len(plan.stages):
            raise BadSpec(f"interruption point {point} outside 1..{len(plan.stages)}")
        triples = []
        for q in queries:
            result = _proposed(snapshot, q, plan, k, stop_after=point)
            triples.append(_prompt_scores(snapshot.get(result.final_id), q.clean))
        report.rows.append(_mean_row("proposed", point, triples))
    return report

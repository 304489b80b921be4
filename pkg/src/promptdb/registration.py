"""Offline registration: narrow the database to a candidate subset.

A user registers with one of a text description, a face embedding or a
speaker embedding. Each path is an exhaustive scan with exact top-k and a
stable (score descending, id ascending) order.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Protocol

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import normalize
from .errors import (
    BadInput,
    BadQuery,
    DimensionMismatch,
    EmptyDatabase,
    InvalidField,
    NoFaceVectors,
    OracleFailure,
    PromptDBError,
)
from .records import DatabaseSnapshot, tokenize

PROVENANCES = ("text", "face", "audio")
DEFAULT_K = 32
DEFAULT_FACE_STAGE1_K = 20

# text scores are rounded before ranking so that mathematically tied
# descriptions order by id regardless of summation order
TEXT_SCORE_DECIMALS = 12


@dataclass(frozen=True)
class CandidateSubset:
    """Ordered shortlist (best first) with the score behind each entry."""

    ids: tuple[str, ...]
    provenance: str
    scores: tuple[float, ...]

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise InvalidField("provenance", repr(self.provenance))
        if len(self.ids) != len(self.scores):
            raise InvalidField("scores", "length differs from ids")
        if len(set(self.ids)) != len(self.ids):
            raise InvalidField("ids", "duplicate id")

    def __len__(self):
        return len(self.ids)

    @property
    def score_of(self) -> dict[str, float]:
        return dict(zip(self.ids, self.scores))

    def to_dict(self) -> dict:
        return {"provenance": self.provenance, "ids": list(self.ids), "scores": list(self.scores)}

    @classmethod
    def from_dict(cls, obj: dict) -> CandidateSubset:
        try:
            ids = tuple(str(i) for i in obj["ids"])
            scores = tuple(float(s) for s in obj.get("scores") or [0.0] * len(ids))
            return cls(ids, obj.get("provenance", "audio"), scores)
        except (KeyError, TypeError, ValueError) as exc:
            raise BadInput(f"candidate subset: {exc}") from None


@dataclass(frozen=True)
class RegistrationRequest:
    text_desc: str | None = None
    face_vec: np.ndarray | None = None
    speaker_vec: np.ndarray | None = None
    k: int = DEFAULT_K
    face_stage1_k: int = DEFAULT_FACE_STAGE1_K

    def __post_init__(self):
        given = [n for n in ("text_desc", "face_vec", "speaker_vec") if getattr(self, n) is not None]
        if len(given) != 1:
            raise BadInput(f"exactly one of text_desc/face_vec/speaker_vec required, got {given or 'none'}")
        for name in ("k", "face_stage1_k"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise BadInput(f"{name} must be a positive integer")
        if self.face_vec is not None and self.face_stage1_k < self.k:
            raise BadInput("face_stage1_k must be >= k")
        if self.text_desc is not None and not isinstance(self.text_desc, str):
            raise BadInput("text_desc must be a string")
        for name in ("face_vec", "speaker_vec"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, normalize(v, name))

    @property
    def modality(self) -> str:
        if self.text_desc is not None:
            return "text"
        return "face" if self.face_vec is not None else "audio"

    @classmethod
    def from_dict(cls, obj: dict, k: int = DEFAULT_K, face_stage1_k: int = DEFAULT_FACE_STAGE1_K) -> RegistrationRequest:
        """Build a request, filling ``k`` and ``face_stage1_k`` from the defaults given.

        A face request without its own ``k`` gets ``min(k, face_stage1_k)``
        so the default sizes never make it invalid.
        """
        if not isinstance(obj, dict):
            raise BadInput("registration request must be an object")
        unknown = set(obj) - {"text_desc", "face_vec", "speaker_vec", "k", "face_stage1_k"}
        if unknown:
            raise BadInput(f"unknown request fields {sorted(unknown)}")
        obj = dict(obj)
        obj.setdefault("face_stage1_k", face_stage1_k)
        if "k" not in obj:
            obj["k"] = min(k, obj["face_stage1_k"]) if obj.get("face_vec") is not None and _is_int(obj["face_stage1_k"]) else k
        try:
            return cls(**obj)
        except (TypeError, ValueError) as exc:
            raise BadInput(str(exc)) from None


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


class FaceVoiceOracle(Protocol):
    def voice_vec(self, face_vec: np.ndarray) -> np.ndarray: ...


class LinearFaceVoiceOracle:
    """Deterministic face-to-voice stand-in: a fixed random linear map."""

    def __init__(self, d_face: int, d_speaker: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.matrix = rng.standard_normal((d_speaker, d_face)) / math.sqrt(d_face)

    def voice_vec(self, face_vec):
        return normalize(self.matrix @ np.asarray(face_vec, dtype=np.float64), "voice_vec")


def top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Positions of the best ``k`` scores; ties keep the lower position first."""
    order = np.lexsort((np.arange(scores.size), -scores))
    return order[:k]


def _subset(snapshot: DatabaseSnapshot, rows: np.ndarray, scores: np.ndarray, provenance: str) -> CandidateSubset:
    ids = snapshot.ids
    return CandidateSubset(
        tuple(ids[i] for i in rows),
        provenance,
        tuple(float(s) for s in scores),
    )


class TextIndex:
    """TF-IDF view of the stored descriptions.

    Term weights are the records' ``desc_vec`` entries times a smoothed IDF,
    ``ln((1 + N) / (1 + df)) + 1``; rows are L2-normalized.
    """

    def __init__(self, snapshot: DatabaseSnapshot):
        vocab = snapshot.vocab
        n = len(snapshot.records)
        rows, cols, vals = [], [], []
        df = np.zeros(len(vocab))
        for i, r in enumerate(snapshot.records):
            for term, w in r.desc_vec.items():
                if w > 0:
                    j = vocab[term]
                    rows.append(i)
                    cols.append(j)
                    vals.append(w)
                    df[j] += 1
        self.idf = np.log((1.0 + n) / (1.0 + df)) + 1.0
        tf = sp.csr_matrix((vals, (rows, cols)), shape=(n, len(vocab)), dtype=np.float64)
        weighted = tf @ sp.diags(self.idf)
        norms = np.sqrt(np.asarray(weighted.multiply(weighted).sum(axis=1)).ravel())
        norms[norms == 0] = 1.0
        self.matrix = sp.csr_matrix(sp.diags(1.0 / norms) @ weighted)
        self.vocab = vocab

    def query_vector(self, text: str) -> np.ndarray:
        counts = Counter(t for t in tokenize(text) if t in self.vocab)
        if not counts:
            raise BadQuery(f"no known terms in {text!r}")
        q = np.zeros(len(self.vocab))
        for term, c in counts.items():
            j = self.vocab[term]
            q[j] = c * self.idf[j]
        return q / np.linalg.norm(q)

    def scores(self, text: str) -> np.ndarray:
        s = self.matrix @ self.query_vector(text)
        return np.round(s, TEXT_SCORE_DECIMALS)


def _check_nonempty(snapshot: DatabaseSnapshot) -> None:
    if snapshot is None or len(snapshot.records) == 0:
        raise EmptyDatabase("no records loaded")


def register_text(snapshot: DatabaseSnapshot, text_desc: str, k: int = DEFAULT_K, index: TextIndex | None = None) -> CandidateSubset:
    """Top-k records by TF-IDF cosine between ``text_desc`` and stored descriptions."""
    _check_nonempty(snapshot)
    if not text_desc or not text_desc.strip():
        raise BadQuery("empty description")
    scores = (index or TextIndex(snapshot)).scores(text_desc)
    rows = top_k(scores, k)
    return _subset(snapshot, rows, scores[rows], "text")


def register_audio(snapshot: DatabaseSnapshot, speaker_vec, k: int = DEFAULT_K) -> CandidateSubset:
    """Top-k records by speaker-embedding cosine."""
    _check_nonempty(snapshot)
    q = np.asarray(speaker_vec, dtype=np.float64)
    if q.shape != (snapshot.dims[0],):
        raise DimensionMismatch("speaker_vec", q.size, snapshot.dims[0])
    q = normalize(q, "speaker_vec")
    scores = snapshot.speaker_matrix @ q
    rows = top_k(scores, k)
    return _subset(snapshot, rows, scores[rows], "audio")


def register_face(
    snapshot: DatabaseSnapshot,
    face_vec,
    face_stage1_k: int = DEFAULT_FACE_STAGE1_K,
    k: int = DEFAULT_K,
    oracle: FaceVoiceOracle | None = None,
) -> CandidateSubset:
    """Two-stage face registration.

    Stage 1 keeps the ``face_stage1_k`` records whose face embeddings are
    closest to ``face_vec``. Stage 2 reranks them by speaker similarity to
    the voice the oracle infers from the face, and keeps the top ``k``.
    """
    _check_nonempty(snapshot)
    if oracle is None:
        raise BadInput("face registration needs a face-to-voice oracle")
    q = np.asarray(face_vec, dtype=np.float64)
    if q.shape != (snapshot.dims[2],):
        raise DimensionMismatch("face_vec", q.size, snapshot.dims[2])
    q = normalize(q, "face_vec")
    with_face = np.flatnonzero(snapshot.face_mask)
    if with_face.size == 0:
        raise NoFaceVectors("no record has a face embedding")

    face_scores = snapshot.face_matrix[with_face] @ q
    stage1 = with_face[top_k(face_scores, face_stage1_k)]

    try:
        voice = np.asarray(oracle.voice_vec(q), dtype=np.float64)
    except PromptDBError:
        raise
    except Exception as exc:  # noqa: BLE001 - oracle is user code
        raise OracleFailure(str(exc)) from exc
    if voice.shape != (snapshot.dims[0],):
        raise OracleFailure(f"voice vector has shape {voice.shape}, want ({snapshot.dims[0]},)")
    try:
        voice = normalize(voice, "voice_vec")
    except PromptDBError as exc:
        raise OracleFailure(str(exc)) from None

    # stage1 is id-ordered before ranking so ties still break by id
    stage1 = np.sort(stage1)
    voice_scores = snapshot.speaker_matrix[stage1] @ voice
    pick = top_k(voice_scores, k)
    return _subset(snapshot, stage1[pick], voice_scores[pick], "face")


class PromptRegistrar(BaseEstimator):
    """Estimator front end for the three registration paths.

    Parameters
    ----------
    k : int
        Size of the candidate subset.
    face_stage1_k : int
        Face-similarity shortlist size for the face path.
    face_oracle : FaceVoiceOracle, optional
        Face-to-voice model; defaults to :class:`LinearFaceVoiceOracle`.
    """

    def __init__(self, k=DEFAULT_K, face_stage1_k=DEFAULT_FACE_STAGE1_K, face_oracle=None):
        self.k = k
        self.face_stage1_k = face_stage1_k
        self.face_oracle = face_oracle

    def fit(self, X: DatabaseSnapshot, y=None):
        _check_nonempty(X)
        self.snapshot_ = X
        self.text_index_ = TextIndex(X)
        self.oracle_ = self.face_oracle or LinearFaceVoiceOracle(X.dims[2], X.dims[0])
        return self

    def _one(self, request) -> CandidateSubset:
        if isinstance(request, dict):
            request = RegistrationRequest.from_dict(request, self.k, self.face_stage1_k)
        elif isinstance(request, str):
            request = RegistrationRequest(text_desc=request, k=self.k)
        if request.text_desc is not None:
            return register_text(self.snapshot_, request.text_desc, request.k, index=self.text_index_)
        if request.face_vec is not None:
            return register_face(self.snapshot_, request.face_vec, request.face_stage1_k, request.k, self.oracle_)
        return register_audio(self.snapshot_, request.speaker_vec, request.k)

    def predict(self, X):
        """Candidate subset for one request, or a list for a sequence of requests.

        A request is a :class:`RegistrationRequest`, its dict form, or a bare
        description string.
        """
        check_is_fitted(self, "snapshot_")
        if isinstance(X, (RegistrationRequest, dict, str)):
            return self._one(X)
        return [self._one(x) for x in X]

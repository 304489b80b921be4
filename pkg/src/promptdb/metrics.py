"""Similarity and error-rate metrics used for scoring prompts."""

from __future__ import annotations

import math
import unicodedata
from typing import Mapping, Sequence

import numba
import numpy as np

from ._validation import check_language
from .errors import (
    BadThreshold,
    DimensionMismatch,
    EmptyReference,
    InvalidField,
    NonpositiveReference,
    ZeroVector,
)


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two nonzero vectors, clipped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatch("vector", b.size, a.size)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine of a zero vector")
    return float(min(1.0, max(-1.0, float(a @ b) / (na * nb))))


def srs(speed_test: float, speed_ref: float) -> float:
    """Relative speaking-rate difference ``|test - ref| / ref``; lower is better."""
    if not speed_ref > 0:
        raise NonpositiveReference(f"reference rate {speed_ref}")
    if speed_test < 0:
        raise InvalidField("speed_test", "must be >= 0")
    return abs((speed_test - speed_ref) / speed_ref)


def pitch_similarity(p_test: float, p_ref: float) -> float:
    """Relative pitch difference ``|test - ref| / ref``; lower is better."""
    if not p_ref > 0:
        raise NonpositiveReference(f"reference pitch {p_ref}")
    return abs((p_test - p_ref) / p_ref)


def normalize_text(text: str) -> str:
    """NFC, lowercase, drop punctuation, collapse whitespace."""
    text = unicodedata.normalize("NFC", text).lower()
    text = "".join(ch for ch in text if not unicodedata.category(ch).startswith("P"))
    return " ".join(text.split())


def _encode(texts: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    lens = np.array([len(t) for t in texts], dtype=np.intp)
    width = int(lens.max()) if len(texts) else 0
    out = np.full((len(texts), width), -1, dtype=np.int32)
    for i, t in enumerate(texts):
        if t:
            out[i, : len(t)] = np.frombuffer(t.encode("utf-32-le"), dtype="<u4")
    return out, lens


@numba.njit(cache=True, nogil=True)
def _levenshtein_block(ref_codes, ref_lens, hyp_codes, hyp_lens, out):
    row = np.empty(hyp_codes.shape[1] + 1, dtype=np.int64)
    for r in range(ref_codes.shape[0]):
        m = ref_lens[r]
        for h in range(hyp_codes.shape[0]):
            n = hyp_lens[h]
            for j in range(n + 1):
                row[j] = j
            for i in range(1, m + 1):
                c = ref_codes[r, i - 1]
                diag = row[0]
                row[0] = i
                for j in range(1, n + 1):
                    best = diag + (1 if hyp_codes[h, j - 1] != c else 0)
                    if row[j] + 1 < best:
                        best = row[j] + 1
                    if row[j - 1] + 1 < best:
                        best = row[j - 1] + 1
                    diag = row[j]
                    row[j] = best
            out[r, h] = row[n]


def edit_distance_matrix(references: Sequence[str], hypotheses: Sequence[str]) -> np.ndarray:
    """Unit-cost Levenshtein distance for every (reference, hypothesis) pair.

    Strings are compared as given (no normalization), one code point per
    character.
    """
    ref_codes, ref_lens = _encode(references)
    hyp_codes, hyp_lens = _encode(hypotheses)
    out = np.empty((len(references), len(hypotheses)), dtype=np.int64)
    _levenshtein_block(ref_codes, ref_lens, hyp_codes, hyp_lens, out)
    return out


def cer_matrix(references: Sequence[str], hypotheses: Sequence[str]) -> np.ndarray:
    """Character error rate of every hypothesis against every reference.

    Both sides are normalized with :func:`normalize_text`; spaces count as
    characters. Entry ``[i, j]`` is ``edits(ref_i, hyp_j) / len(ref_i)``.
    """
    refs = [normalize_text(r) for r in references]
    for r, raw in zip(refs, references):
        if not r:
            raise EmptyReference(repr(raw))
    hyps = [normalize_text(h) for h in hypotheses]
    dist = edit_distance_matrix(refs, hyps)
    n = np.array([len(r) for r in refs], dtype=np.float64)
    return dist / n[:, None]


def cer(reference: str, hypothesis: str) -> float:
    """Character error rate ``(S + D + I) / N``; may exceed 1."""
    return float(cer_matrix([reference], [hypothesis])[0, 0])


def align_counts(reference: str, hypothesis: str) -> tuple[int, int, int]:
    """(substitutions, deletions, insertions) of one minimum-cost alignment.

    Inputs are normalized like :func:`cer`. The three counts sum to the edit
    distance; among equal-cost alignments, diagonal moves are preferred.
    """
    ref = normalize_text(reference)
    hyp = normalize_text(hypothesis)
    m, n = len(ref), len(hyp)
    d = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(m + 1):
        d[i][0] = i
    for j in range(n + 1):
        d[0][j] = j
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            d[i][j] = min(
                d[i - 1][j] + 1,
                d[i][j - 1] + 1,
                d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]),
            )
    s = dl = ins = 0
    i, j = m, n
    while i or j:
        if i and j and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i and d[i][j] == d[i - 1][j] + 1:
            dl += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return s, dl, ins


class ProbVector(dict):
    """Language code -> probability, summing to one."""

    def __init__(self, entries: Mapping[str, float]):
        super().__init__()
        for code, p in entries.items():
            check_language(code)
            if isinstance(p, bool) or not isinstance(p, (int, float)) or not 0 <= p <= 1:
                raise InvalidField("prob", f"{code}: {p!r} not in [0, 1]")
            self[code] = float(p)
        total = math.fsum(self.values())
        if abs(total - 1.0) > 1e-6:
            raise InvalidField("prob", f"probabilities sum to {total}")


def passes_lid(p: Mapping[str, float], lang: str, threshold: float = 0.95) -> bool:
    """True iff the identified probability of ``lang`` strictly exceeds ``threshold``."""
    if not 0 < threshold < 1:
        raise BadThreshold(f"{threshold} not in (0, 1)")
    return p.get(lang, 0.0) > threshold

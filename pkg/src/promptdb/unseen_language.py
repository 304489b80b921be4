"""Candidate prompts for languages the database does not cover.

For an unseen target language, the nearest covered language in a family
tree is used as a proxy. Each proxy-language record is run through a
synthesis oracle (cross-lingual TTS followed by LID, speaker/emotion
similarity, rate and ASR measurements); records whose synthesized speech
passes the LID gate and every metric threshold are tagged as candidates for
the target.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import (
    BadInput,
    BadSpec,
    BadThreshold,
    IoFailure,
    MalformedLine,
    NoCandidates,
    NoProxyRecords,
    OracleFailure,
    PromptDBError,
    UnknownLanguage,
)
from .metrics import ProbVector, passes_lid
from .records import DatabaseSnapshot, PromptRecord


class LanguageTree:
    """Rooted language family tree; languages are the leaves."""

    def __init__(self, edges: Iterable[tuple[str, str]]):
        parent: dict[str, str] = {}
        children: dict[str, list[str]] = {}
        nodes: set[str] = set()
        for p, c in edges:
            if c in parent and parent[c] != p:
                raise BadSpec(f"{c!r} has two parents ({parent[c]!r}, {p!r})")
            if p == c:
                raise BadSpec(f"self-loop at {p!r}")
            parent[c] = p
            children.setdefault(p, []).append(c)
            nodes.update((p, c))
        if not nodes:
            raise BadSpec("empty tree")
        roots = sorted(nodes - set(parent))
        if len(roots) != 1:
            raise BadSpec(f"need exactly one root, found {roots or 'none (cycle)'}")
        self.root = roots[0]
        # reachability from the root rules out cycles and disconnected parts
        seen = {self.root}
        queue = deque([self.root])
        depth = {self.root: 0}
        while queue:
            node = queue.popleft()
            for c in children.get(node, ()):
                if c in seen:
                    raise BadSpec(f"cycle through {c!r}")
                seen.add(c)
                depth[c] = depth[node] + 1
                queue.append(c)
        if seen != nodes:
            raise BadSpec(f"unreachable nodes {sorted(nodes - seen)}")
        self.parent = parent
        self.children = {k: tuple(v) for k, v in children.items()}
        self.depth = depth
        self.nodes = frozenset(nodes)
        self.leaves = frozenset(n for n in nodes if n not in children)

    @classmethod
    def from_tsv(cls, text: str) -> LanguageTree:
        edges = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not all(parts):
                raise MalformedLine(f"line {lineno}: expected 'parent<TAB>child'")
            edges.append((parts[0].strip(), parts[1].strip()))
        return cls(edges)

    def edges(self) -> list[tuple[str, str]]:
        return sorted((p, c) for c, p in self.parent.items())

    def _check_leaf(self, lang: str) -> None:
        if lang not in self.leaves:
            raise UnknownLanguage(lang)


def load_tree(path) -> LanguageTree:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from None
    return LanguageTree.from_tsv(text)


def default_tree() -> LanguageTree:
    """The bundled family tree covering the database's languages."""
    text = resources.files("promptdb.data").joinpath("language_tree.tsv").read_text(encoding="utf-8")
    return LanguageTree.from_tsv(text)


def tree_distance(tree: LanguageTree, a: str, b: str) -> int:
    """Number of edges on the path between two languages."""
    tree._check_leaf(a)
    tree._check_leaf(b)
    dist = 0
    while a != b:
        if tree.depth[a] >= tree.depth[b]:
            a = tree.parent[a]
        else:
            b = tree.parent[b]
        dist += 1
    return dist


def proxy_language(tree: LanguageTree, target: str, available: Iterable[str]) -> str:
    """Closest available language to ``target``; ties go to the smaller code.

    Available languages that are not in the tree are ignored.
    """
    tree._check_leaf(target)
    known = sorted(set(available) & tree.leaves)
    if not known:
        raise NoCandidates(f"no available language for {target!r} in the tree")
    return min(known, key=lambda lang: (tree_distance(tree, target, lang), lang))


@dataclass(frozen=True)
class CandidateCriteria:
    lid_threshold: float = 0.95
    max_cer: float = 0.05
    min_ss: float = 0.80
    min_es: float = 0.50
    max_srs: float = 0.30

    def __post_init__(self):
        if not 0 < self.lid_threshold < 1:
            raise BadThreshold(f"lid_threshold {self.lid_threshold} not in (0, 1)")
        for name in ("max_cer", "min_ss", "min_es", "max_srs"):
            if getattr(self, name) < 0:
                raise BadThreshold(f"{name} must be >= 0")


@dataclass(frozen=True)
class SynthesisMeasurement:
    """What was measured on speech synthesized from one (text, prompt) pair."""

    prob: Mapping[str, float]
    ss: float
    es: float
    srs: float
    cer: float

    @classmethod
    def from_dict(cls, obj: Mapping) -> SynthesisMeasurement:
        return cls(ProbVector(obj["prob"]), float(obj["ss"]), float(obj["es"]), float(obj["srs"]), float(obj["cer"]))


class SynthesisOracle(Protocol):
    def synthesize(self, target_text: str, reference: PromptRecord) -> SynthesisMeasurement: ...


@dataclass(frozen=True)
class CandidateReport:
    record_id: str
    text: str
    passed: bool
    metrics: SynthesisMeasurement
    failed: tuple[str, ...] = ()


def evaluate_candidate(
    record: PromptRecord,
    target_text: str,
    oracle: SynthesisOracle,
    criteria: CandidateCriteria,
    target: str,
) -> CandidateReport:
    """Synthesize ``target_text`` with ``record`` as prompt and test every criterion."""
    try:
        m = oracle.synthesize(target_text, record)
    except OracleFailure:
        raise
    except Exception as exc:  # noqa: BLE001 - oracle is user code
        raise OracleFailure(f"{record.id}: {exc}") from exc
    if not isinstance(m, SynthesisMeasurement):
        raise OracleFailure(f"{record.id}: oracle returned {type(m).__name__}")
    failed = []
    if not passes_lid(m.prob, target, criteria.lid_threshold):
        failed.append("lid")
    if not m.cer <= criteria.max_cer:
        failed.append("cer")
    if not m.ss >= criteria.min_ss:
        failed.append("ss")
    if not m.es >= criteria.min_es:
        failed.append("es")
    if not m.srs <= criteria.max_srs:
        failed.append("srs")
    return CandidateReport(record.id, target_text, not failed, m, tuple(failed))


@dataclass
class CandidateAnnotation:
    proxy: str
    passing_ids: tuple[str, ...]
    snapshot: DatabaseSnapshot
    reports: list[CandidateReport] = field(default_factory=list)


def annotate_candidates(
    snapshot: DatabaseSnapshot,
    target: str,
    texts: Sequence[str],
    tree: LanguageTree,
    oracle: SynthesisOracle,
    criteria: CandidateCriteria | None = None,
) -> CandidateAnnotation:
    """Tag proxy-language records that pass on every text as candidates for ``target``.

    Records that fail are left untouched (an existing tag is not removed).
    """
    criteria = criteria or CandidateCriteria()
    texts = list(texts)
    if not texts:
        raise BadInput("no target texts to synthesize")
    tree._check_leaf(target)
    try:
        proxy = proxy_language(tree, target, snapshot.languages - {target})
    except NoCandidates:
        raise NoProxyRecords(f"no record language is related to {target!r}") from None

    reports = []
    passing = []
    for record in snapshot.records:
        if record.language != proxy:
            continue
        ok = True
        for text in texts:
            report = evaluate_candidate(record, text, oracle, criteria, target)
            reports.append(report)
            if not report.passed:
                ok = False
                break
        if ok:
            passing.append(record.id)

    keep = set(passing)
    updated = [r.with_candidate(target) if r.id in keep else r for r in snapshot.records]
    new_snapshot = snapshot.replace_records(updated) if keep else snapshot
    return CandidateAnnotation(proxy, tuple(passing), new_snapshot, reports)


class ScriptedOracle:
    """Oracle answering from a table of (record id, text) -> measurement.

    A row whose ``text`` is None applies to every text for that record.
    """

    def __init__(self, table: Mapping[tuple[str, str | None], SynthesisMeasurement]):
        self.table = dict(table)

    def synthesize(self, target_text, reference):
        for key in ((reference.id, target_text), (reference.id, None)):
            if key in self.table:
                return self.table[key]
        raise OracleFailure(f"no scripted measurement for {reference.id!r}")

    @classmethod
    def from_jsonl(cls, path) -> ScriptedOracle:
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise IoFailure(f"{path}: {exc}") from None
        table = {}
        for line in lines:
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                table[(obj["id"], obj.get("text"))] = SynthesisMeasurement.from_dict(obj)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise MalformedLine(f"measurement: {exc}") from None
            except PromptDBError as exc:
                raise MalformedLine(f"measurement: {exc}") from None
        return cls(table)


def _unit(*parts) -> float:
    h = hashlib.blake2b("\x1f".join(map(str, parts)).encode(), digest_size=8).digest()
    return int.from_bytes(h, "little") / 2**64


class ToySynthesizer:
    """Procedural stand-in for cross-lingual TTS plus measurement models.

    Measurements blend the prompt's own properties (quality, tree distance
    between its language and the target) with deterministic per-(record,
    text) jitter, so some prompts pass and some fail.
    """

    def __init__(self, target: str, tree: LanguageTree | None = None, seed: int = 0):
        self.target = target
        self.tree = tree or default_tree()
        self.seed = seed

    def synthesize(self, target_text, reference):
        try:
            dist = tree_distance(self.tree, reference.language, self.target)
        except UnknownLanguage:
            dist = 2 * max(self.tree.depth.values())
        quality = (reference.quality or 3.0) - 1.0  # 0..4
        u = [_unit(self.seed, reference.id, target_text, k) for k in range(5)]
        p_target = min(0.999, max(0.0, 0.90 + 0.02 * quality - 0.01 * max(0, dist - 2) + 0.04 * (u[0] - 0.5)))
        other = reference.language if reference.language != self.target else "en"
        prob = ProbVector({self.target: p_target, other: 1.0 - p_target})
        ss = 0.70 + 0.04 * quality + 0.10 * (u[1] - 0.5)
        es = 0.45 + 0.10 * quality + 0.20 * (u[2] - 0.5)
        srs = 0.45 - 0.06 * quality + 0.20 * (u[3] - 0.5)
        cer = max(0.0, 0.08 - 0.015 * quality + 0.04 * (u[4] - 0.5))
        return SynthesisMeasurement(prob, ss, es, max(0.0, srs), cer)


class CandidateAnnotator(BaseEstimator, TransformerMixin):
    """Estimator wrapper around :func:`annotate_candidates`.

    ``fit`` evaluates the proxy-language records of a snapshot;
    ``transform`` returns the snapshot with passing records tagged.
    """

    def __init__(self, target=None, texts=(), tree=None, oracle=None, criteria=None):
        self.target = target
        self.texts = texts
        self.tree = tree
        self.oracle = oracle
        self.criteria = criteria

    def fit(self, X: DatabaseSnapshot, y=None):
        if self.target is None or self.oracle is None:
            raise BadInput("target and oracle are required")
        result = annotate_candidates(
            X, self.target, self.texts, self.tree or default_tree(), self.oracle, self.criteria
        )
        self.proxy_ = result.proxy
        self.passing_ids_ = result.passing_ids
        self.reports_ = result.reports
        return self

    def transform(self, X: DatabaseSnapshot) -> DatabaseSnapshot:
        check_is_fitted(self, "passing_ids_")
        keep = set(self.passing_ids_)
        if not keep:
            return X
        return X.replace_records(r.with_candidate(self.target) if r.id in keep else r for r in X.records)

import itertools
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_record
from promptdb.errors import (
    BadInput,
    BadThreshold,
    NoCandidates,
    NoProxyRecords,
    OracleFailure,
    PromptDBError,
    UnknownLanguage,
)
from promptdb.metrics import ProbVector
from promptdb.records import build_snapshot
from promptdb.unseen_language import (
    CandidateAnnotator,
    CandidateCriteria,
    LanguageTree,
    ScriptedOracle,
    SynthesisMeasurement,
    ToySynthesizer,
    annotate_candidates,
    default_tree,
    evaluate_candidate,
    load_tree,
    proxy_language,
    tree_distance,
)

SMALL_TSV = "indo_european\tromance\nindo_european\tgermanic\nromance\tit\nromance\tfr\nromance\tes\ngermanic\tde\ngermanic\tnl\n"


def bfs_distance(tree, a, b):
    """Shortest path on the undirected edge graph (independent of the depth walk)."""
    adj = {}
    for p, c in tree.edges():
        adj.setdefault(p, []).append(c)
        adj.setdefault(c, []).append(p)
    dist = {a: 0}
    q = deque([a])
    while q:
        u = q.popleft()
        for v in adj.get(u, ()):
            if v not in dist:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist[b]


def small_tree():
    return LanguageTree.from_tsv(SMALL_TSV)


def test_distance_examples():
    t = small_tree()
    assert tree_distance(t, "it", "it") == 0
    assert tree_distance(t, "it", "fr") == 2
    assert tree_distance(t, "it", "de") == 4
    with pytest.raises(UnknownLanguage):
        tree_distance(t, "it", "ko")
    with pytest.raises(UnknownLanguage):
        tree_distance(t, "it", "romance")


def test_shipped_tree_is_metric_and_matches_bfs():
    t = default_tree()
    leaves = sorted(t.leaves)
    assert len(leaves) >= 18
    assert tree_distance(t, "it", "fr") == 2 and tree_distance(t, "it", "de") == 4
    for a, b in itertools.product(leaves, repeat=2):
        d = tree_distance(t, a, b)
        assert d == bfs_distance(t, a, b)
        assert d == tree_distance(t, b, a)
        assert (d == 0) == (a == b)
    for a, b, c in itertools.product(leaves, repeat=3):
        assert tree_distance(t, a, c) <= tree_distance(t, a, b) + tree_distance(t, b, c)


def test_tree_validation():
    with pytest.raises(PromptDBError):
        LanguageTree.from_tsv("a\tb\nc\tb\n")  # two parents
    with pytest.raises(PromptDBError):
        LanguageTree.from_tsv("a\tb\nc\td\n")  # two roots
    with pytest.raises(PromptDBError):
        LanguageTree.from_tsv("a\tb\nb\ta\n")  # cycle
    with pytest.raises(PromptDBError):
        LanguageTree.from_tsv("a b\n")


def test_load_tree_file(tmp_path):
    (tmp_path / "t.tsv").write_text("# comment\n" + SMALL_TSV)
    assert tree_distance(load_tree(tmp_path / "t.tsv"), "fr", "nl") == 4


def test_proxy_examples():
    t = default_tree()
    assert proxy_language(t, "it", {"fr", "de", "ko"}) == "fr"
    assert proxy_language(t, "it", {"it"}) == "it"
    assert proxy_language(small_tree(), "it", {"fr", "es"}) == "es"
    with pytest.raises(NoCandidates):
        proxy_language(t, "it", set())


def m(p=0.96, cer=0.02, ss=0.85, es=0.9, srs=0.2, target="it"):
    return SynthesisMeasurement(ProbVector({target: p, "fr": 1 - p}), ss, es, srs, cer)


def test_evaluate_candidate_examples():
    rec = make_record("r", np.random.default_rng(0), language="fr")
    crit = CandidateCriteria()
    assert evaluate_candidate(rec, "ciao", ScriptedOracle({("r", None): m()}), crit, "it").passed
    rep = evaluate_candidate(rec, "ciao", ScriptedOracle({("r", None): m(p=0.94)}), crit, "it")
    assert not rep.passed and rep.failed == ("lid",)
    rep = evaluate_candidate(rec, "ciao", ScriptedOracle({("r", None): m(cer=0.06)}), crit, "it")
    assert rep.failed == ("cer",)


def test_oracle_failure_wrapped():
    class Broken:
        def synthesize(self, text, rec):
            raise RuntimeError("boom")

    rec = make_record("r", np.random.default_rng(0), language="fr")
    with pytest.raises(OracleFailure):
        evaluate_candidate(rec, "x", Broken(), CandidateCriteria(), "it")
    with pytest.raises(OracleFailure):
        evaluate_candidate(rec, "x", ScriptedOracle({}), CandidateCriteria(), "it")


def test_criteria_validation():
    with pytest.raises(BadThreshold):
        CandidateCriteria(lid_threshold=1.0)
    with pytest.raises(BadThreshold):
        CandidateCriteria(max_cer=-0.1)


measurements = st.builds(
    m, st.floats(0, 1), st.floats(0, 0.2), st.floats(0, 1), st.floats(0, 1), st.floats(0, 0.6)
)
criteria = st.builds(
    CandidateCriteria, st.floats(0.01, 0.99), st.floats(0, 0.2), st.floats(0, 1), st.floats(0, 1), st.floats(0, 0.6)
)


@settings(max_examples=300, deadline=None)
@given(measurements, criteria, st.data())
def test_evaluate_monotone_in_criteria(meas, crit, data):
    looser = CandidateCriteria(
        lid_threshold=data.draw(st.floats(0.001, crit.lid_threshold)),
        max_cer=data.draw(st.floats(crit.max_cer, 1)),
        min_ss=data.draw(st.floats(0, crit.min_ss)),
        min_es=data.draw(st.floats(0, crit.min_es)),
        max_srs=data.draw(st.floats(crit.max_srs, 1)),
    )
    rec = make_record("r", np.random.default_rng(0), language="fr")
    oracle = ScriptedOracle({("r", None): meas})
    if evaluate_candidate(rec, "t", oracle, crit, "it").passed:
        assert evaluate_candidate(rec, "t", oracle, looser, "it").passed


def proxy_snapshot():
    rng = np.random.default_rng(3)
    recs = [make_record(f"fr{i}", rng, language="fr") for i in range(10)]
    recs += [make_record(f"de{i}", rng, language="de") for i in range(3)]
    return build_snapshot(recs)


def test_annotate_exactly_three_pass():
    snap = proxy_snapshot()
    table = {(f"fr{i}", None): m(p=0.99 if i in (1, 4, 7) else 0.5) for i in range(10)}
    res = annotate_candidates(snap, "it", ["ciao", "grazie"], default_tree(), ScriptedOracle(table))
    assert res.proxy == "fr"
    assert res.passing_ids == ("fr1", "fr4", "fr7")
    for r in res.snapshot.records:
        assert ("it" in r.candidate_for) == (r.id in {"fr1", "fr4", "fr7"})
    again = annotate_candidates(res.snapshot, "it", ["ciao", "grazie"], default_tree(), ScriptedOracle(table))
    assert again.snapshot == res.snapshot


def test_annotate_requires_all_texts():
    snap = proxy_snapshot()
    table = {(f"fr{i}", None): m() for i in range(10)}
    table[("fr2", "grazie")] = m(p=0.5)
    res = annotate_candidates(snap, "it", ["ciao", "grazie"], default_tree(), ScriptedOracle(table))
    assert "fr2" not in res.passing_ids and len(res.passing_ids) == 9


def test_annotate_errors():
    snap = proxy_snapshot()
    with pytest.raises(BadInput):
        annotate_candidates(snap, "it", [], default_tree(), ScriptedOracle({}))
    rng = np.random.default_rng(0)
    isolated = build_snapshot([make_record("x", rng, language="it")])
    with pytest.raises(NoProxyRecords):
        annotate_candidates(isolated, "it", ["a"], default_tree(), ScriptedOracle({}))
    with pytest.raises(UnknownLanguage):
        annotate_candidates(snap, "tlh", ["a"], default_tree(), ScriptedOracle({}))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.5, 1.0), min_size=10, max_size=10), st.floats(0.5, 0.99))
def test_gate_precedence(probs, threshold):
    snap = proxy_snapshot()
    table = {(f"fr{i}", None): m(p=p) for i, p in enumerate(probs)}
    res = annotate_candidates(snap, "it", ["t"], default_tree(), ScriptedOracle(table), CandidateCriteria(lid_threshold=threshold))
    for rid in res.passing_ids:
        assert table[(rid, None)].prob["it"] > threshold


def test_toy_synthesizer_deterministic_and_mixed():
    snap = proxy_snapshot()
    snap = snap.replace_records(
        r.__class__(**{**r.__dict__, "quality": float(q)}) for r, q in zip(snap.records, np.linspace(1, 5, len(snap.records)))
    )
    toy = ToySynthesizer("it", seed=1)
    a = annotate_candidates(snap, "it", ["ciao"], default_tree(), toy)
    b = annotate_candidates(snap, "it", ["ciao"], default_tree(), ToySynthesizer("it", seed=1))
    assert a.passing_ids == b.passing_ids
    assert 0 < len(a.passing_ids) < 10


def test_candidate_annotator_estimator():
    snap = proxy_snapshot()
    table = {(f"fr{i}", None): m(p=0.99 if i < 2 else 0.1) for i in range(10)}
    est = CandidateAnnotator(target="it", texts=["x"], oracle=ScriptedOracle(table))
    out = est.fit(snap).transform(snap)
    assert est.proxy_ == "fr" and est.passing_ids_ == ("fr0", "fr1")
    assert {r.id for r in out.records if "it" in r.candidate_for} == {"fr0", "fr1"}
    assert set(est.get_params()) == {"target", "texts", "tree", "oracle", "criteria"}


def test_scripted_oracle_file(tmp_path):
    p = tmp_path / "o.jsonl"
    p.write_text('{"id": "fr0", "prob": {"it": 0.97, "fr": 0.03}, "ss": 0.9, "es": 0.9, "srs": 0.1, "cer": 0.01}\n')
    o = ScriptedOracle.from_jsonl(p)
    rec = make_record("fr0", np.random.default_rng(0), language="fr")
    assert evaluate_candidate(rec, "any", o, CandidateCriteria(), "it").passed

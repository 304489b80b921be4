import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_snapshot
from promptdb.annotation import (
    AgentOutput,
    AgentProfile,
    AnnotationItem,
    MultiAgentAnnotator,
    assign_weights,
    build_state,
    fuse_categorical,
    fuse_numeric,
    level_of,
    load_knowledge_base,
    render_description,
    tercile_cuts,
)
from promptdb.errors import (
    InvalidField,
    MalformedLine,
    NoModalities,
    NoOutputs,
    NothingToDescribe,
    OutOfRange,
    UnweightedAgent,
)
from promptdb.labels import AGE_GROUPS, age_group_of


def agent(aid, modality, **scores):
    return AgentProfile(aid, modality, {tuple(k.split("__")): v for k, v in scores.items()})


def test_build_state():
    assert build_state("it", ["audio"]).modalities_present == {"audio"}
    assert build_state("en", ["audio", "visual"]).modalities_present == {"audio", "visual"}
    with pytest.raises(NoModalities):
        build_state("en", [])
    with pytest.raises(InvalidField):
        build_state("en", ["smell"])


def test_assign_weights_examples():
    st_ = build_state("en", ["audio"])
    w = assign_weights(st_, [agent("a", "audio", gender__en=0.8)])
    assert w["gender"] == (("a", 1.0),)
    w = assign_weights(st_, [agent("a", "audio", age__en=0.6), agent("b", "audio", age__en=0.3)])
    assert w.weight("age", "a") == pytest.approx(2 / 3) and w.weight("age", "b") == pytest.approx(1 / 3)
    w = assign_weights(st_, [agent("v", "visual", gender__en=0.9, age__en=0.9), agent("a", "audio", gender__en=0.5)])
    assert all(w.weight(t, "v") is None for t in w.tasks())
    assert "age" not in w


def test_assign_weights_language_specific():
    w = assign_weights(build_state("it", ["audio"]), [agent("a", "audio", gender__en=0.9)])
    assert "gender" not in w


def test_zero_scores_fall_back_to_uniform():
    w = assign_weights(build_state("en", ["audio"]), [agent("a", "audio", gender__en=0.0), agent("b", "audio", gender__en=0.0)])
    assert w["gender"] == (("a", 0.5), ("b", 0.5))


def test_fuse_categorical_examples():
    w = assign_weights(build_state("en", ["audio"]), [agent("A", "audio", gender__en=0.7), agent("B", "audio", gender__en=0.3)])
    outs = [AgentOutput("A", "gender", "female"), AgentOutput("B", "gender", "male")]
    assert fuse_categorical(outs, w, "gender") == "female"
    w = assign_weights(build_state("en", ["audio"]), [agent("A", "audio", emotion__en=0.5), agent("B", "audio", emotion__en=0.5)])
    outs = [AgentOutput("A", "emotion", "happy"), AgentOutput("B", "emotion", "angry")]
    assert fuse_categorical(outs, w, "emotion") == "angry"


def test_fuse_errors():
    w = assign_weights(build_state("en", ["audio"]), [agent("A", "audio", gender__en=0.7)])
    with pytest.raises(NoOutputs):
        fuse_categorical([], w, "gender")
    with pytest.raises(UnweightedAgent):
        fuse_categorical([AgentOutput("Z", "gender", "male")], w, "gender")
    with pytest.raises(InvalidField):
        AgentOutput("A", "age", "thirty")
    with pytest.raises(InvalidField):
        AgentOutput("A", "gender", 1.0)


def test_fuse_numeric_examples():
    kb = [agent("A", "audio", age__en=0.5), agent("B", "audio", age__en=0.5)]
    w = assign_weights(build_state("en", ["audio"]), kb)
    assert fuse_numeric([AgentOutput("A", "age", 20), AgentOutput("B", "age", 30)], w, "age") == 25.0
    assert fuse_numeric([AgentOutput("A", "age", 42)], w, "age") == 42.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(0.01, 1), st.floats(0, 120)), min_size=1, max_size=4))
def test_fuse_numeric_matches_direct_sum(pairs):
    kb = [agent(f"a{i}", "audio", age__en=s) for i, (s, _) in enumerate(pairs)]
    w = assign_weights(build_state("en", ["audio"]), kb)
    outs = [AgentOutput(f"a{i}", "age", v) for i, (_, v) in enumerate(pairs)]
    got = fuse_numeric(outs, w, "age")
    total = sum(s for s, _ in pairs)
    assert got == pytest.approx(sum(s * v for s, v in pairs) / total, abs=1e-9)
    assert min(v for _, v in pairs) <= got <= max(v for _, v in pairs)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.tuples(st.integers(0, 10), st.sampled_from("abc")), min_size=1, max_size=6),
    st.integers(0, 6),
)
def test_fuse_categorical_scale_invariant(agents, e):
    k = 2.0 ** -e
    def run(scale):
        kb = [agent(f"a{i}", "audio", emotion__en=s / 10 * scale) for i, (s, _) in enumerate(agents)]
        w = assign_weights(build_state("en", ["audio"]), kb)
        return fuse_categorical([AgentOutput(f"a{i}", "emotion", lab) for i, (_, lab) in enumerate(agents)], w, "emotion")
    assert run(1.0) == run(k)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["audio", "visual", "text"]), st.floats(0, 1)), min_size=1, max_size=6))
def test_removing_ineligible_agent_is_noop(agents):
    kb = [agent(f"a{i}", m, gender__en=s) for i, (m, s) in enumerate(agents)]
    state = build_state("en", ["audio"])
    eligible = [a for a in kb if a.modality == "audio"]
    assert assign_weights(state, kb) == assign_weights(state, eligible)
    w = assign_weights(state, kb)
    for task in w.tasks():
        assert abs(math.fsum(x for _, x in w[task]) - 1.0) <= 1e-9


def test_age_group_boundaries():
    assert age_group_of(30) == "young_adult"
    assert age_group_of(13) == "child"
    assert age_group_of(55) == "elderly"
    assert [age_group_of(a) for a in (0, 14, 25, 26, 39, 40, 54, 120)] == [
        "child", "teenager", "teenager", "young_adult", "young_adult", "middle_aged", "middle_aged", "elderly"]
    order = [AGE_GROUPS.index(age_group_of(a)) for a in range(121)]
    assert order == sorted(order)
    for bad in (-1, 121, 3.5, True, "5"):
        with pytest.raises(OutOfRange):
            age_group_of(bad)


def test_render_examples():
    labels = {"gender": "female", "age_group": "young_adult", "pitch_level": "high", "rate_level": "swift", "emotion": "joy"}
    assert render_description(labels) == "A young adult female, voice high, pace swift, revealed joy in her emotion."
    assert render_description({"gender": "male"}) == "A male."
    assert render_description(labels) == render_description(dict(labels))
    assert render_description({"age_group": "elderly"}) == "An elderly speaker."
    with pytest.raises(NothingToDescribe):
        render_description({"emotion": "joy"})
    with pytest.raises(InvalidField):
        render_description({"gender": "male", "pitch_level": "loud"})


def test_render_is_injective():
    seen = {}
    opts = [
        [None, "male", "female"],
        [None, *AGE_GROUPS],
        [None, "low", "medium", "high"],
        [None, "slow", "moderate", "swift"],
        [None, "joy", "sad", "neutral"],
    ]
    for combo in itertools.product(*opts):
        labels = dict(zip(("gender", "age_group", "pitch_level", "rate_level", "emotion"), combo))
        try:
            text = render_description(labels)
        except NothingToDescribe:
            continue
        assert text not in seen, (combo, seen.get(text))
        seen[text] = combo


def test_terciles_and_levels():
    cuts = tercile_cuts([1, 2, 3, 4, 5, 6, None])
    assert level_of(1, cuts, ("l", "m", "h")) == "l"
    assert level_of(3.5, cuts, ("l", "m", "h")) == "m"
    assert level_of(6, cuts, ("l", "m", "h")) == "h"
    assert tercile_cuts([None]) is None


def test_knowledge_base_file(tmp_path):
    p = tmp_path / "kb.jsonl"
    p.write_text(
        json.dumps({"agent_id": "w", "modality": "audio", "scores": {"gender:en": 0.9, "age:en": 0.7}}) + "\n\n"
        + json.dumps({"agent_id": "f", "modality": "visual", "scores": {"age:en": 0.5}}) + "\n"
    )
    kb = load_knowledge_base(p)
    assert [a.agent_id for a in kb] == ["w", "f"]
    assert kb[0].scores[("gender", "en")] == 0.9
    p.write_text('{"agent_id": "w"}\n')
    with pytest.raises(MalformedLine):
        load_knowledge_base(p)
    p.write_text('{"agent_id": "w", "modality": "audio", "scores": {"gender:en": 1.5}}\n')
    with pytest.raises(InvalidField):
        load_knowledge_base(p)


def test_multi_agent_annotator():
    kb = [agent("w", "audio", gender__en=0.9, age__en=0.6, emotion__en=0.8),
          agent("f", "visual", gender__en=0.6, age__en=0.9)]
    items = [
        AnnotationItem("x1", "en", frozenset({"audio", "visual"}),
                       (AgentOutput("w", "gender", "female"), AgentOutput("f", "gender", "male"),
                        AgentOutput("w", "age", 30), AgentOutput("f", "age", 20),
                        AgentOutput("w", "emotion", "joy")), 240.0),
        AnnotationItem("x2", "en", frozenset({"audio"}),
                       (AgentOutput("w", "gender", "male"), AgentOutput("w", "age", 70)), 100.0),
        AnnotationItem("x3", "en", frozenset({"audio"}), (AgentOutput("w", "gender", "male"),), 150.0),
    ]
    ann = MultiAgentAnnotator(knowledge_base=kb).fit(items)
    out = ann.transform(items)
    assert out[0]["gender"] == "female"
    assert out[0]["age_years"] == 24 and out[0]["age_group"] == "teenager"
    assert out[0]["description"] == "A teenager female, voice high, revealed joy in her emotion."
    assert out[1]["age_group"] == "elderly"
    assert out[2]["description"] == "A male, voice medium."
    assert ann.get_params() == {"knowledge_base": kb}


def test_annotator_fits_on_snapshot():
    snap = random_snapshot(30)
    ann = MultiAgentAnnotator(knowledge_base=[agent("w", "audio", gender__en=1.0)]).fit(snap)
    assert ann.pitch_cuts_ is not None and ann.rate_cuts_ is not None

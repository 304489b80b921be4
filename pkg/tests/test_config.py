import json
from fractions import Fraction

import pytest

from promptdb.config import Config, config_from_dict, load_config
from promptdb.errors import BadInput, BadThreshold, IoFailure
from promptdb.online_select import default_plan


def test_defaults():
    cfg = config_from_dict({})
    assert cfg == Config()
    assert cfg.plan == default_plan() and cfg.k == 32 and cfg.face_stage1_k == 20
    assert cfg.criteria.lid_threshold == 0.95 and cfg.criteria.max_cer == 0.05
    assert cfg.deadline_s is None


def test_round_trip(tmp_path):
    cfg = config_from_dict({
        "plan": [{"kind": "speaker"}, {"kind": "emotion", "top_percent": 12.5, "cost_per_sample_s": 1e-7}],
        "criteria": {"min_ss": 0.7},
        "registration": {"k": 16},
        "select": {"deadline_ms": 5},
        "noise": {"vector_noise": 0.3},
    })
    assert cfg.plan.stages[1].top_fraction == Fraction(1, 8)
    assert cfg.deadline_s == 0.005
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert load_config(p) == cfg


@pytest.mark.parametrize("bad", [
    [], {"planz": []}, {"plan": {}}, {"criteria": {"bogus": 1}}, {"registration": {"k": 0}},
    {"registration": {"k": 1.5}}, {"select": {"deadline_ms": -1}}, {"noise": {"vector_noise": "x"}},
    {"plan": [{"kind": "speaker", "top_percent": "all"}]},
])
def test_rejects(bad):
    with pytest.raises((BadInput, BadThreshold)):
        config_from_dict(bad)


def test_bad_threshold():
    with pytest.raises(BadThreshold):
        config_from_dict({"criteria": {"lid_threshold": 1.0}})


def test_file_errors(tmp_path):
    with pytest.raises(IoFailure):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(BadInput):
        load_config(tmp_path / "bad.json")

"""Runtime configuration file.

A single JSON object; every section is optional and missing keys take the
defaults shown here::

    {
      "plan": [
        {"kind": "speech_rate", "top_percent": 100},
        {"kind": "pitch", "top_percent": 20},
        {"kind": "speaker", "top_percent": 20},
        {"kind": "emotion", "top_percent": 20}
      ],
      "criteria": {"lid_threshold": 0.95, "max_cer": 0.05, "min_ss": 0.80,
                   "min_es": 0.50, "max_srs": 0.30},
      "registration": {"k": 32, "face_stage1_k": 20},
      "select": {"deadline_ms": null},
      "noise": {"vector_noise": 0.5, "scalar_noise": 0.10}
    }

Plan stages may also carry ``cost_per_sample_s`` (as written by
``promptdb calibrate``).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .errors import BadInput, IoFailure
from .online_select import SelectionPlan, default_plan
from .registration import DEFAULT_FACE_STAGE1_K, DEFAULT_K
from .unseen_language import CandidateCriteria

_SECTIONS = {"plan", "criteria", "registration", "select", "noise"}


@dataclass(frozen=True)
class Config:
    plan: SelectionPlan = field(default_factory=default_plan)
    criteria: CandidateCriteria = field(default_factory=CandidateCriteria)
    k: int = DEFAULT_K
    face_stage1_k: int = DEFAULT_FACE_STAGE1_K
    deadline_ms: float | None = None
    vector_noise: float = 0.5
    scalar_noise: float = 0.10

    @property
    def deadline_s(self) -> float | None:
        return None if self.deadline_ms is None else self.deadline_ms / 1000.0

    def to_dict(self) -> dict:
        return {
            "plan": self.plan.to_config(),
            "criteria": asdict(self.criteria),
            "registration": {"k": self.k, "face_stage1_k": self.face_stage1_k},
            "select": {"deadline_ms": self.deadline_ms},
            "noise": {"vector_noise": self.vector_noise, "scalar_noise": self.scalar_noise},
        }


def _section(obj: dict, name: str, allowed: set[str]) -> dict:
    sec = obj.get(name) or {}
    if not isinstance(sec, dict):
        raise BadInput(f"config section {name!r} must be an object")
    unknown = set(sec) - allowed
    if unknown:
        raise BadInput(f"unknown keys in {name!r}: {sorted(unknown)}")
    return sec


def _number(value, name, positive=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise BadInput(f"{name} must be a number")
    if integer and not isinstance(value, int):
        raise BadInput(f"{name} must be an integer")
    if value < 0 or (positive and value == 0):
        raise BadInput(f"{name} out of range: {value}")
    return value


def config_from_dict(obj: dict) -> Config:
    if not isinstance(obj, dict):
        raise BadInput("config must be a JSON object")
    unknown = set(obj) - _SECTIONS
    if unknown:
        raise BadInput(f"unknown config sections {sorted(unknown)}")
    kwargs = {}
    if obj.get("plan") is not None:
        if not isinstance(obj["plan"], list):
            raise BadInput("plan must be a list of stages")
        kwargs["plan"] = SelectionPlan.from_config(obj["plan"])
    crit = _section(obj, "criteria", {f.name for f in fields(CandidateCriteria)})
    if crit:
        kwargs["criteria"] = CandidateCriteria(**{k: _number(v, k) for k, v in crit.items()})
    reg = _section(obj, "registration", {"k", "face_stage1_k"})
    for key in reg:
        kwargs[key] = _number(reg[key], key, positive=True, integer=True)
    sel = _section(obj, "select", {"deadline_ms"})
    if sel.get("deadline_ms") is not None:
        kwargs["deadline_ms"] = _number(sel["deadline_ms"], "deadline_ms")
    noise = _section(obj, "noise", {"vector_noise", "scalar_noise"})
    for key in noise:
        kwargs[key] = _number(noise[key], key)
    return Config(**kwargs)


def load_config(path) -> Config:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc.strerror}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BadInput(f"{path}: {exc}") from None
    return config_from_dict(obj)

"""Prompt database engine for zero-shot speech generation.

Annotated speech records live in an immutable snapshot. Users register
with a description, a face or a voice to get a candidate subset; an anytime
cascade of similarity stages then picks one prompt under a latency budget.
"""

__version__ = "0.1.0"

from .errors import PromptDBError
from .records import DatabaseSnapshot, PromptRecord, build_snapshot, parse_record
from .store import open_store, save_store
from .metrics import cer, cosine_similarity, passes_lid, pitch_similarity, srs
from .features import AudioClip, QueryFeatures, estimate_pitch_mean, estimate_speech_rate, read_wav
from .annotation import MultiAgentAnnotator, assign_weights, fuse_categorical, fuse_numeric, render_description
from .unseen_language import CandidateAnnotator, CandidateCriteria, annotate_candidates, proxy_language, tree_distance
from .registration import CandidateSubset, PromptRegistrar, RegistrationRequest, register_audio, register_face, register_text
from .online_select import CascadeSelector, SelectionPlan, default_plan, estimate_total_time, run_cascade
from .harness import SyntheticCorpusSpec, generate_corpus, run_eval, sweep_interruption

__all__ = [
    "AudioClip",
    "CandidateAnnotator",
    "CandidateCriteria",
    "CandidateSubset",
    "CascadeSelector",
    "DatabaseSnapshot",
    "MultiAgentAnnotator",
    "PromptDBError",
    "PromptRecord",
    "PromptRegistrar",
    "QueryFeatures",
    "RegistrationRequest",
    "SelectionPlan",
    "SyntheticCorpusSpec",
    "annotate_candidates",
    "assign_weights",
    "build_snapshot",
    "cer",
    "cosine_similarity",
    "default_plan",
    "estimate_pitch_mean",
    "estimate_speech_rate",
    "estimate_total_time",
    "fuse_categorical",
    "fuse_numeric",
    "generate_corpus",
    "open_store",
    "parse_record",
    "passes_lid",
    "pitch_similarity",
    "proxy_language",
    "read_wav",
    "register_audio",
    "register_face",
    "register_text",
    "render_description",
    "run_cascade",
    "run_eval",
    "save_store",
    "srs",
    "sweep_interruption",
    "tree_distance",
]

import numpy as np
import pytest

from promptdb.harness import SyntheticCorpusSpec, generate_corpus
from promptdb.records import PromptRecord, build_snapshot, term_counts


def unit(rng, d):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def make_record(rid, rng, dims=(8, 4, 3), language="en", face=True, **kw):
    kw.setdefault("speaking_rate", float(rng.uniform(2, 7)))
    kw.setdefault("pitch_mean_hz", float(rng.uniform(80, 300)))
    desc = kw.pop("description", "")
    return PromptRecord(
        id=rid,
        language=language,
        duration_s=float(rng.uniform(1, 10)),
        speaker_vec=unit(rng, dims[0]).astype(np.float32),
        emotion_vec=unit(rng, dims[1]).astype(np.float32),
        face_vec=unit(rng, dims[2]).astype(np.float32) if face and dims[2] else None,
        description=desc,
        desc_vec=term_counts(desc),
        **kw,
    )


def random_snapshot(n, seed=0, dims=(8, 4, 3), **kw):
    rng = np.random.default_rng(seed)
    return build_snapshot([make_record(f"id{i:05d}", rng, dims, **kw) for i in range(n)], dims=dims)


@pytest.fixture(scope="session")
def corpus():
    return generate_corpus(SyntheticCorpusSpec(seed=0))


@pytest.fixture(scope="session")
def corpus_1k():
    return generate_corpus(SyntheticCorpusSpec(n_records=1000, n_speakers=50, n_queries=20, seed=1))


# acceptance verdicts, printed once at the end of the run
VERDICTS: list[str] = []


def verdict(number: int, name: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
    VERDICTS.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)

"""On-disk layout: a JSON Lines manifest plus a binary vector file.

Vector file layout (all little-endian)::

    magic "M3PV" | version u16 | count u32 | D_s u16 | D_e u16 | D_f u16
    per record, in manifest order:
        speaker_vec f32[D_s] | emotion_vec f32[D_e] | face flag u8 | face_vec f32[D_f]?
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import HeaderMismatch, IoFailure, TruncatedStore
from .records import DatabaseSnapshot, Dims, build_snapshot, parse_record

MAGIC = b"M3PV"
VERSION = 1
_HEADER = struct.Struct("<4sHIHHH")
_F32 = np.dtype("<f4")


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc.strerror or exc}") from None


def _read_lines(path) -> list[str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise IoFailure(f"{path}: {exc}") from None
    return [ln for ln in text.splitlines() if ln.strip()]


def read_vectors(path) -> tuple[Dims, list[tuple[np.ndarray, np.ndarray, np.ndarray | None]]]:
    """Decode a vector file into ``(dims, [(speaker, emotion, face_or_None), ...])``."""
    buf = _read_bytes(path)
    if len(buf) < _HEADER.size:
        raise TruncatedStore(f"{path}: header needs {_HEADER.size} bytes, file has {len(buf)}")
    magic, version, count, d_s, d_e, d_f = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise HeaderMismatch(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise HeaderMismatch(f"{path}: unsupported version {version}")
    out = []
    pos = _HEADER.size
    for i in range(count):
        need = 4 * (d_s + d_e) + 1
        if pos + need > len(buf):
            raise TruncatedStore(f"{path}: record {i} of {count} cut short")
        spk = np.frombuffer(buf, _F32, d_s, pos).astype(np.float32)
        pos += 4 * d_s
        emo = np.frombuffer(buf, _F32, d_e, pos).astype(np.float32)
        pos += 4 * d_e
        flag = buf[pos]
        pos += 1
        face = None
        if flag == 1:
            if pos + 4 * d_f > len(buf):
                raise TruncatedStore(f"{path}: record {i} of {count} cut short")
            face = np.frombuffer(buf, _F32, d_f, pos).astype(np.float32)
            pos += 4 * d_f
        elif flag != 0:
            raise HeaderMismatch(f"{path}: record {i} has face flag {flag}")
        out.append((spk, emo, face))
    if pos != len(buf):
        raise HeaderMismatch(f"{path}: {len(buf) - pos} trailing bytes after {count} records")
    return (d_s, d_e, d_f), out


def open_store(manifest_path, vectors_path) -> DatabaseSnapshot:
    """Load a snapshot from a manifest and its vector file."""
    lines = _read_lines(manifest_path)
    dims, vectors = read_vectors(vectors_path)
    if len(lines) != len(vectors):
        raise HeaderMismatch(
            f"manifest has {len(lines)} records, vector header has {len(vectors)}"
        )
    records = [parse_record(line, dims, vectors=vecs) for line, vecs in zip(lines, vectors)]
    return build_snapshot(records, dims=dims)


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"{path}: {exc.strerror or exc}") from None


def save_store(snapshot: DatabaseSnapshot, manifest_path, vectors_path) -> None:
    """Write ``snapshot`` so that :func:`open_store` reproduces it exactly."""
    d_s, d_e, d_f = snapshot.dims
    manifest = "".join(
        json.dumps(r.to_manifest(), ensure_ascii=False, sort_keys=True) + "\n"
        for r in snapshot.records
    )
    chunks = [_HEADER.pack(MAGIC, VERSION, len(snapshot.records), d_s, d_e, d_f)]
    for r in snapshot.records:
        chunks.append(np.asarray(r.speaker_vec, dtype=_F32).tobytes())
        chunks.append(np.asarray(r.emotion_vec, dtype=_F32).tobytes())
        if r.face_vec is None:
            chunks.append(b"\x00")
        else:
            chunks.append(b"\x01")
            chunks.append(np.asarray(r.face_vec, dtype=_F32).tobytes())
    _atomic_write(vectors_path, b"".join(chunks))
    _atomic_write(manifest_path, manifest.encode("utf-8"))

"""JSON Lines query service over TCP.

Each request is one JSON object per line; each gets exactly one response
line ``{"ok": bool, "payload": ..., "error": str | null}``. An ``id`` field
in the request is echoed back.

Operations::

    {"op": "register", "request": {"speaker_vec": [...], "k": 32}}
        -> payload {"handle": 1, "subset": {"provenance", "ids", "scores"}}
    {"op": "select", "handle": 1, "query": {...}, "deadline_ms": 5}
        -> payload {"final_id", "interrupted_at", "stage_trace": [...]}
    {"op": "select", "handle": 1, "wav": "/path/on/server.wav"}
    {"op": "status"}
        -> payload {"records", "dims", "handles", "plan"}

A handle keeps the snapshot it was registered against, so swapping in a new
snapshot only affects registrations made afterwards.
"""

from __future__ import annotations

import json
import logging
import socketserver
import threading
from dataclasses import dataclass

from .errors import BadInput, PromptDBError
from .features import QueryFeatures, query_from_clip, read_wav
from .online_select import SelectionPlan, default_plan, run_cascade
from .records import DatabaseSnapshot
from .registration import (
    CandidateSubset,
    LinearFaceVoiceOracle,
    RegistrationRequest,
    TextIndex,
    register_audio,
    register_face,
    register_text,
)

log = logging.getLogger(__name__)

MAX_LINE_BYTES = 1 << 20


@dataclass(frozen=True)
class _Handle:
    subset: CandidateSubset
    snapshot: DatabaseSnapshot


class _Loaded:
    """Snapshot plus the indexes built from it, swapped as one unit."""

    def __init__(self, snapshot: DatabaseSnapshot, face_oracle=None):
        self.snapshot = snapshot
        self.text_index = TextIndex(snapshot)
        self.face_oracle = face_oracle or LinearFaceVoiceOracle(snapshot.dims[2], snapshot.dims[0])


class PromptService:
    """Transport-free request handler; safe to call from many threads."""

    def __init__(self, snapshot: DatabaseSnapshot, plan: SelectionPlan | None = None, k: int = 32,
                 face_stage1_k: int = 20, face_oracle=None, default_deadline_s: float | None = None):
        self.plan = plan or default_plan()
        self.k = k
        self.face_stage1_k = face_stage1_k
        self.default_deadline_s = default_deadline_s
        self._face_oracle = face_oracle
        self._loaded = _Loaded(snapshot, face_oracle)
        self._handles: dict[int, _Handle] = {}
        self._next_handle = 1
        self._lock = threading.Lock()

    @property
    def snapshot(self) -> DatabaseSnapshot:
        return self._loaded.snapshot

    def swap_snapshot(self, snapshot: DatabaseSnapshot) -> None:
        loaded = _Loaded(snapshot, self._face_oracle)
        self._loaded = loaded  # single reference assignment is the atomic swap

    @property
    def handle_count(self) -> int:
        with self._lock:
            return len(self._handles)

    def _register(self, req: dict) -> dict:
        body = req.get("request")
        if not isinstance(body, dict):
            raise BadInput("register needs a 'request' object")
        request = RegistrationRequest.from_dict(body, self.k, self.face_stage1_k)
        loaded = self._loaded
        if request.text_desc is not None:
            subset = register_text(loaded.snapshot, request.text_desc, request.k, index=loaded.text_index)
        elif request.face_vec is not None:
            subset = register_face(loaded.snapshot, request.face_vec, request.face_stage1_k, request.k, loaded.face_oracle)
        else:
            subset = register_audio(loaded.snapshot, request.speaker_vec, request.k)
        with self._lock:
            handle = self._next_handle
            self._next_handle += 1
            self._handles[handle] = _Handle(subset, loaded.snapshot)
        return {"handle": handle, "subset": subset.to_dict()}

    def _select(self, req: dict) -> dict:
        handle = req.get("handle")
        if isinstance(handle, bool) or not isinstance(handle, int):
            raise BadInput("select needs an integer 'handle'")
        with self._lock:
            entry = self._handles.get(handle)
        if entry is None:
            raise BadInput(f"unknown handle {handle}")
        if ("query" in req) == ("wav" in req):
            raise BadInput("select needs exactly one of 'query' or 'wav'")
        if "wav" in req:
            if not isinstance(req["wav"], str):
                raise BadInput("'wav' must be a path string")
            query = query_from_clip(read_wav(req["wav"]))
        else:
            if not isinstance(req["query"], dict):
                raise BadInput("'query' must be an object")
            query = QueryFeatures.from_dict(req["query"])
        deadline_s = self.default_deadline_s
        if req.get("deadline_ms") is not None:
            ms = req["deadline_ms"]
            if isinstance(ms, bool) or not isinstance(ms, (int, float)) or not ms >= 0:
                raise BadInput("deadline_ms must be a nonnegative number")
            deadline_s = ms / 1000.0
        result = run_cascade(self.plan, entry.subset, entry.snapshot, query, deadline_s=deadline_s)
        return result.to_dict()

    def _status(self, req: dict) -> dict:
        snap = self._loaded.snapshot
        return {
            "records": len(snap.records),
            "dims": list(snap.dims),
            "handles": self.handle_count,
            "plan": self.plan.to_config(),
        }

    def handle(self, req) -> dict:
        """Answer one decoded request; never raises for bad input."""
        rid = req.get("id") if isinstance(req, dict) else None
        try:
            if not isinstance(req, dict):
                raise BadInput("request must be a JSON object")
            op = req.get("op")
            fn = {"register": self._register, "select": self._select, "status": self._status}.get(op)
            if fn is None:
                raise BadInput(f"unknown op {op!r}")
            resp = {"ok": True, "payload": fn(req), "error": None}
        except PromptDBError as exc:
            resp = {"ok": False, "payload": None, "error": str(exc)}
        except (OSError, ValueError, TypeError, KeyError, OverflowError, RecursionError) as exc:
            resp = {"ok": False, "payload": None, "error": f"{type(exc).__name__}: {exc}"}
        if rid is not None:
            resp["id"] = rid
        return resp

    def handle_line(self, line: bytes | str) -> str:
        """Decode one request line and return the encoded response line."""
        try:
            text = line.decode("utf-8") if isinstance(line, bytes) else line
            req = json.loads(text)
        except (UnicodeDecodeError, json.JSONDecodeError, RecursionError) as exc:
            resp = {"ok": False, "payload": None, "error": f"MalformedLine: {exc}"}
        else:
            resp = self.handle(req)
        return json.dumps(resp, ensure_ascii=False) + "\n"


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        service: PromptService = self.server.service
        while True:
            try:
                line = self.rfile.readline(MAX_LINE_BYTES + 1)
            except OSError:
                return
            if not line:
                return
            if len(line) > MAX_LINE_BYTES and not line.endswith(b"\n"):
                # drop the rest of the oversized line
                while line and not line.endswith(b"\n"):
                    line = self.rfile.readline(MAX_LINE_BYTES)
                out = json.dumps({"ok": False, "payload": None, "error": "MalformedLine: line too long"}) + "\n"
            elif not line.strip():
                continue
            else:
                out = service.handle_line(line)
            try:
                self.wfile.write(out.encode("utf-8"))
                self.wfile.flush()
            except OSError:
                return


class PromptServer(socketserver.ThreadingTCPServer):
    """Threaded TCP server; ``shutdown()`` then ``server_close()`` waits for in-flight handlers."""

    allow_reuse_address = True
    daemon_threads = False
    block_on_close = True

    def __init__(self, address, service: PromptService):
        super().__init__(address, _Handler)
        self.service = service


def serve(address, service: PromptService, ready=None) -> None:
    """Run until ``shutdown()`` is called from another thread (or Ctrl-C)."""
    with PromptServer(address, service) as server:
        if ready is not None:
            ready(server)
        log.info("listening on %s:%d", *server.server_address[:2])
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass

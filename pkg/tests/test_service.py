import json
import socket
import threading

import numpy as np
import pytest

from conftest import random_snapshot
from promptdb.online_select import default_plan, run_cascade
from promptdb.features import QueryFeatures
from promptdb.registration import register_audio, register_text
from promptdb.service import MAX_LINE_BYTES, PromptServer, PromptService


class Client:
    def __init__(self, addr):
        self.sock = socket.create_connection(addr)
        self.rf = self.sock.makefile("rb")

    def send_raw(self, data: bytes):
        self.sock.sendall(data)
        return json.loads(self.rf.readline())

    def call(self, obj):
        return self.send_raw((json.dumps(obj) + "\n").encode())

    def close(self):
        self.rf.close()
        self.sock.close()


@pytest.fixture
def server(corpus):
    service = PromptService(corpus.snapshot, default_plan())
    srv = PromptServer(("127.0.0.1", 0), service)
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    yield srv
    srv.shutdown()
    srv.server_close()


def qdict(q: QueryFeatures):
    return {k: v for k, v in q.to_dict().items() if v is not None}


def test_register_select_round_trip(server, corpus):
    c = Client(server.server_address)
    q = corpus.queries[0].noisy
    r = c.call({"op": "register", "request": {"speaker_vec": q.speaker_vec.tolist()}, "id": 7})
    assert r["ok"] and r["id"] == 7
    direct = register_audio(corpus.snapshot, q.speaker_vec, 32)
    assert r["payload"]["subset"]["ids"] == list(direct.ids)
    s = c.call({"op": "select", "handle": r["payload"]["handle"], "query": qdict(q)})
    lib = run_cascade(default_plan(), direct, corpus.snapshot, q)
    assert s["ok"] and s["payload"]["final_id"] == lib.final_id
    assert [t["survivors"] for t in s["payload"]["stage_trace"]] == [list(t.survivors) for t in lib.stage_trace]
    c.close()


def test_text_registration_over_wire(server, corpus):
    c = Client(server.server_address)
    r = c.call({"op": "register", "request": {"text_desc": "a middle-aged male", "k": 5}})
    assert r["payload"]["subset"]["ids"] == list(register_text(corpus.snapshot, "a middle-aged male", 5).ids)
    c.close()


def test_deadline_zero(server, corpus):
    c = Client(server.server_address)
    h = c.call({"op": "register", "request": {"speaker_vec": corpus.queries[1].noisy.speaker_vec.tolist()}})["payload"]["handle"]
    s = c.call({"op": "select", "handle": h, "query": qdict(corpus.queries[1].noisy), "deadline_ms": 0})
    assert s["ok"] and s["payload"]["interrupted_at"] <= 1
    c.close()


def test_errors_keep_connection_usable(server):
    c = Client(server.server_address)
    for bad in [b"{nope\n", b"[1,2]\n", b'{"op": "fly"}\n', b'{"op": "select", "handle": 999, "query": {"speaking_rate": 4}}\n',
                b'{"op": "register"}\n', b'{"op": "register", "request": {"speaker_vec": [1, 2]}}\n', b"\xff\xfe\n",
                b'{"op": "select", "handle": "1"}\n']:
        r = c.send_raw(bad)
        assert r["ok"] is False and r["error"]
    assert c.call({"op": "status"})["ok"]
    c.close()


def test_oversized_line(server):
    c = Client(server.server_address)
    r = c.send_raw(b"x" * (MAX_LINE_BYTES + 10) + b"\n")
    assert not r["ok"] and "too long" in r["error"]
    assert c.call({"op": "status"})["ok"]
    c.close()


def test_handles_are_monotonic(server, corpus):
    c = Client(server.server_address)
    v = corpus.queries[0].noisy.speaker_vec.tolist()
    hs = [c.call({"op": "register", "request": {"speaker_vec": v}})["payload"]["handle"] for _ in range(5)]
    assert hs == sorted(hs) and len(set(hs)) == 5
    assert c.call({"op": "status"})["payload"]["handles"] == 5
    c.close()


def test_concurrent_selects_match_serial(server, corpus):
    results = {}

    def worker(i):
        c = Client(server.server_address)
        q = corpus.queries[i].noisy
        h = c.call({"op": "register", "request": {"speaker_vec": q.speaker_vec.tolist()}})["payload"]["handle"]
        for _ in range(5):
            results.setdefault(i, set()).add(c.call({"op": "select", "handle": h, "query": qdict(q)})["payload"]["final_id"])
        c.close()

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for i in range(8):
        q = corpus.queries[i].noisy
        serial = run_cascade(default_plan(), register_audio(corpus.snapshot, q.speaker_vec, 32), corpus.snapshot, q).final_id
        assert results[i] == {serial}


def test_snapshot_swap_affects_only_new_registrations(corpus):
    service = PromptService(corpus.snapshot)
    q = corpus.queries[0].noisy
    old = service.handle({"op": "register", "request": {"speaker_vec": q.speaker_vec.tolist()}})["payload"]["handle"]
    other = random_snapshot(50, dims=corpus.snapshot.dims)
    service.swap_snapshot(other)
    assert service.handle({"op": "status"})["payload"]["records"] == 50
    r = service.handle({"op": "select", "handle": old, "query": qdict(q)})
    assert r["ok"] and r["payload"]["final_id"] in corpus.snapshot.ids
    new = service.handle({"op": "register", "request": {"speaker_vec": q.speaker_vec.tolist()}})["payload"]["handle"]
    r = service.handle({"op": "select", "handle": new, "query": qdict(q)})
    assert r["payload"]["final_id"] in other.ids


def test_shutdown_completes_in_flight(corpus):
    service = PromptService(corpus.snapshot)
    srv = PromptServer(("127.0.0.1", 0), service)
    t = threading.Thread(target=srv.serve_forever)
    t.start()
    c = Client(srv.server_address)
    assert c.call({"op": "status"})["ok"]
    c.close()
    srv.shutdown()
    srv.server_close()
    t.join(5)
    assert not t.is_alive()


def test_face_registration_with_defaults(corpus):
    service = PromptService(corpus.snapshot)
    r = service.handle({"op": "register", "request": {"face_vec": [1.0] + [0.0] * (corpus.snapshot.dims[2] - 1)}})
    assert r["ok"], r["error"]
    assert len(r["payload"]["subset"]["ids"]) == 20

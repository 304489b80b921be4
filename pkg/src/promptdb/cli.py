"""``promptdb`` command line.

Exit codes: 0 success, 1 usage error, 2 data error. Diagnostics go to
stderr as ``promptdb: <ErrorName>: <detail>``.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
from pathlib import Path

from . import __version__
from .annotation import AnnotationItem, MultiAgentAnnotator, load_knowledge_base
from .config import Config, config_from_dict, load_config
from .errors import BadInput, EmptyDatabase, IoFailure, MalformedLine, PromptDBError
from .features import QueryFeatures, query_from_clip, read_wav
from .harness import STRATEGIES, SyntheticCorpusSpec, generate_corpus, run_eval, sweep_interruption
from .online_select import calibrate_costs, estimate_total_time, run_cascade
from .records import build_snapshot, parse_record
from .registration import CandidateSubset, PromptRegistrar, RegistrationRequest
from .service import PromptServer, PromptService
from .store import open_store, save_store
from .unseen_language import (
    CandidateCriteria,
    ScriptedOracle,
    ToySynthesizer,
    annotate_candidates,
    default_tree,
    load_tree,
    tree_distance,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _read_json(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"{path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedLine(f"{path}: {exc}") from None


def _read_jsonl(path):
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc.strerror}") from None
    out = []
    for n, line in enumerate(lines, 1):
        if line.strip():
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise MalformedLine(f"{path}:{n}: {exc}") from None
    return out


def _vectors_path(args):
    return args.vectors or str(Path(args.db).with_suffix(".m3pv"))


def _load_db(args):
    if not args.db:
        raise EmptyDatabase("no database loaded (pass --db)")
    return open_store(args.db, _vectors_path(args))


def _config(args) -> Config:
    cfg = load_config(args.config) if getattr(args, "config", None) else Config()
    if getattr(args, "stage", None):
        stages = []
        for spec in args.stage:
            kind, _, pct = spec.partition(":")
            try:
                stages.append({"kind": kind, "top_percent": float(pct) if pct else 100})
            except ValueError:
                raise BadInput(f"bad --stage {spec!r}, want kind:percent") from None
        d = cfg.to_dict()
        d["plan"] = stages
        cfg = config_from_dict(d)
    return cfg


def _emit(obj, out=None):
    text = json.dumps(obj, ensure_ascii=False, sort_keys=True)
    if out:
        try:
            Path(out).write_text(text + "\n", encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"{out}: {exc.strerror}") from None
    else:
        print(text)


def cmd_ingest(args):
    if args.synthetic:
        spec = SyntheticCorpusSpec(n_records=args.synthetic, n_speakers=args.speakers, n_queries=0, seed=args.seed)
        snapshot = generate_corpus(spec).snapshot
    else:
        if not args.input:
            raise UsageError("ingest: give --input or --synthetic")
        if not args.dims:
            raise UsageError("ingest: --dims is required with --input")
        records = []
        try:
            lines = Path(args.input).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise IoFailure(f"{args.input}: {exc.strerror}") from None
        for n, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                records.append(parse_record(line, tuple(args.dims)))
            except PromptDBError as exc:
                raise MalformedLine(f"{args.input}:{n}: {exc}") from None
        snapshot = build_snapshot(records, dims=tuple(args.dims))
    save_store(snapshot, args.db, _vectors_path(args))
    print(f"ingested {len(snapshot.records)} records dims={list(snapshot.dims)}")


def cmd_annotate(args):
    kb = load_knowledge_base(args.kb)
    items = [AnnotationItem.from_json(obj) for obj in _read_jsonl(args.items)]
    annotator = MultiAgentAnnotator(knowledge_base=kb)
    annotator.fit(_load_db(args) if args.db else items)
    for labels in annotator.transform(items):
        _emit(labels)


def _criteria(args, cfg: Config) -> CandidateCriteria:
    base = cfg.criteria.__dict__.copy()
    for name in base:
        value = getattr(args, name, None)
        if value is not None:
            base[name] = value
    return CandidateCriteria(**base)


def cmd_candidates(args):
    snapshot = _load_db(args)
    tree = load_tree(args.tree) if args.tree else default_tree()
    try:
        texts = [t for t in Path(args.texts).read_text(encoding="utf-8").splitlines() if t.strip()]
    except OSError as exc:
        raise IoFailure(f"{args.texts}: {exc.strerror}") from None
    if args.oracle:
        oracle = ScriptedOracle.from_jsonl(args.oracle)
    else:
        oracle = ToySynthesizer(args.target, tree, seed=args.toy_seed)
    result = annotate_candidates(snapshot, args.target, texts, tree, oracle, _criteria(args, _config(args)))
    print(f"proxy={result.proxy} passing={len(result.passing_ids)}", file=sys.stderr)
    for rid in result.passing_ids:
        print(rid)
    if args.write:
        save_store(result.snapshot, args.db, _vectors_path(args))


def cmd_tree_dist(args):
    tree = load_tree(args.tree) if args.tree else default_tree()
    print(tree_distance(tree, args.a, args.b))


def cmd_register(args):
    snapshot = _load_db(args)
    cfg = _config(args)
    obj = _read_json(args.request)
    if not isinstance(obj, dict):
        raise BadInput("registration request must be a JSON object")
    if args.k is not None:
        obj.setdefault("k", args.k)
    request = RegistrationRequest.from_dict(obj, cfg.k, cfg.face_stage1_k)
    subset = PromptRegistrar(k=request.k, face_stage1_k=request.face_stage1_k).fit(snapshot).predict(request)
    _emit(subset.to_dict(), args.out)


def cmd_select(args):
    snapshot = _load_db(args)
    cfg = _config(args)
    subset = CandidateSubset.from_dict(_read_json(args.subset)) if args.subset else snapshot.ids
    if (args.query is None) == (args.wav is None):
        raise UsageError("select: give exactly one of --query or --wav")
    if args.wav:
        query = query_from_clip(read_wav(args.wav))
    else:
        query = QueryFeatures.from_dict(_read_json(args.query))
    deadline_s = args.deadline_ms / 1000.0 if args.deadline_ms is not None else cfg.deadline_s

    def progress(trace):
        print(trace.to_line(), file=sys.stderr)

    result = run_cascade(cfg.plan, subset, snapshot, query, deadline_s=deadline_s, progress=progress)
    _emit(result.to_dict())


def cmd_calibrate(args):
    snapshot = _load_db(args)
    cfg = _config(args)
    plan = calibrate_costs(cfg.plan, snapshot, sample_n=args.sample_n, seed=args.seed)
    d = cfg.to_dict()
    d["plan"] = plan.to_config()
    n0 = args.n0 or len(snapshot.records)
    print(f"estimated_total_s={float(estimate_total_time(plan, n0)):.6g} n0={n0}", file=sys.stderr)
    _emit(d, args.out)


def cmd_eval(args):
    cfg = _config(args)
    rows = []
    for seed in range(args.seed, args.seed + args.seeds):
        spec = SyntheticCorpusSpec(
            n_records=args.n_records,
            n_speakers=args.n_speakers,
            n_queries=args.n_queries,
            vector_noise=cfg.vector_noise,
            scalar_noise=cfg.scalar_noise,
            seed=seed,
        )
        corpus = generate_corpus(spec)
        report = run_eval(corpus.snapshot, corpus.queries, cfg.plan, STRATEGIES, k=cfg.k, seed=seed)
        if args.sweep:
            report.rows.extend(sweep_interruption(corpus.snapshot, corpus.queries, cfg.plan, k=cfg.k).rows)
        rows.append((seed, report))
    for seed, report in rows:
        if len(rows) > 1:
            print(f"seed {seed}")
        print(report.to_text())
    if args.csv:
        header_done = False
        lines = []
        for seed, report in rows:
            body = report.to_csv().splitlines()
            if not header_done:
                lines.append("seed," + body[0])
                header_done = True
            lines += [f"{seed},{b}" for b in body[1:]]
        try:
            Path(args.csv).write_text("\n".join(lines) + "\n", encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"{args.csv}: {exc.strerror}") from None


def cmd_serve(args):
    snapshot = _load_db(args)
    cfg = _config(args)
    service = PromptService(snapshot, cfg.plan, k=cfg.k, face_stage1_k=cfg.face_stage1_k, default_deadline_s=cfg.deadline_s)
    server = PromptServer((args.host, args.port), service)

    def stop(signum, frame):
        threading.Thread(target=server.shutdown, daemon=True).start()

    signal.signal(signal.SIGTERM, stop)
    if hasattr(signal, "SIGHUP"):

        def reload(signum, frame):
            try:
                service.swap_snapshot(open_store(args.db, _vectors_path(args)))
                logging.getLogger(__name__).info("snapshot reloaded")
            except PromptDBError as exc:
                print(f"promptdb: reload failed: {exc}", file=sys.stderr)

        signal.signal(signal.SIGHUP, reload)
    host, port = server.server_address[:2]
    print(f"listening on {host}:{port}", file=sys.stderr, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


def _db_args(p):
    p.add_argument("--db", help="manifest (JSON Lines) path")
    p.add_argument("--vectors", help="vector store path (default: manifest path with .m3pv suffix)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="promptdb", description="Prompt database: registration and anytime prompt selection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("ingest", help="build a store from JSON Lines records or a synthetic corpus")
    _db_args(p)
    p.add_argument("--input", help="records with inline vectors, one JSON object per line")
    p.add_argument("--dims", type=int, nargs=3, metavar=("DS", "DE", "DF"))
    p.add_argument("--synthetic", type=int, metavar="N", help="generate N synthetic records instead")
    p.add_argument("--speakers", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ingest, need_db_path=True)

    p = sub.add_parser("annotate", help="fuse agent outputs into labels and descriptions")
    _db_args(p)
    p.add_argument("--kb", required=True, help="knowledge base JSON Lines")
    p.add_argument("--items", required=True, help="agent outputs, one item per line")
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("candidates", help="tag proxy-language records as prompts for an unseen language")
    _db_args(p)
    p.add_argument("--target", required=True)
    p.add_argument("--texts", required=True, help="target-language texts, one per line")
    p.add_argument("--oracle", help="scripted measurements (JSON Lines); default is the toy synthesizer")
    p.add_argument("--toy-seed", type=int, default=0)
    p.add_argument("--tree", help="language tree TSV (default: shipped tree)")
    p.add_argument("--config")
    for name in ("lid_threshold", "max_cer", "min_ss", "min_es", "max_srs"):
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=float)
    p.add_argument("--write", action="store_true", help="save the tagged snapshot back to the store")
    p.set_defaults(func=cmd_candidates)

    p = sub.add_parser("tree-dist", help="path length between two languages in the family tree")
    p.add_argument("--tree")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=cmd_tree_dist)

    p = sub.add_parser("register", help="build a candidate subset from a registration request")
    _db_args(p)
    p.add_argument("--request", required=True, help="JSON file with one of text_desc/face_vec/speaker_vec")
    p.add_argument("--k", type=int)
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("select", help="run the cascade for one query")
    _db_args(p)
    p.add_argument("--subset", help="candidate subset JSON (default: whole database)")
    p.add_argument("--query", help="query features JSON")
    p.add_argument("--wav", help="PCM16 WAV to extract query features from")
    p.add_argument("--deadline-ms", type=float)
    p.add_argument("--stage", action="append", metavar="KIND:PERCENT", help="override the plan (repeatable)")
    p.add_argument("--config")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("calibrate", help="measure per-stage costs and write a config")
    _db_args(p)
    p.add_argument("--config")
    p.add_argument("--stage", action="append", metavar="KIND:PERCENT")
    p.add_argument("--sample-n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n0", type=int, help="subset size for the printed estimate")
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("eval", help="Original / Random / Proposed comparison on synthetic corpora")
    p.add_argument("--config")
    p.add_argument("--stage", action="append", metavar="KIND:PERCENT")
    p.add_argument("--n-records", type=int, default=400)
    p.add_argument("--n-speakers", type=int, default=20)
    p.add_argument("--n-queries", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--sweep", action="store_true", help="add interruption-point rows")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="JSON Lines query service over TCP")
    _db_args(p)
    p.add_argument("--config")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7878)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        if getattr(args, "need_db_path", False) and not args.db:
            raise UsageError(f"{args.command}: --db is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except PromptDBError as exc:
        print(f"promptdb: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"promptdb: IoFailure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""varrecover command line.

Exit codes: 0 ok, 1 bad input, 2 provider failure, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from . import ir
from .context import QueryTemplate, export_training_corpus
from .core import (
    BinaryProgram,
    CorpusError,
    dump_binary,
    dumps,
    load_binary,
    load_binary_lenient,
    load_candidate_map,
    load_name_map,
    read_json,
)
from .correlation import correlated_names
from .evalkit import (
    DEFAULT_BOUNDARIES,
    EvalError,
    SynonymTable,
    evaluate,
    mark_in_train,
    name_frequency,
    split_dataset,
)
from .parser import ParseError, count_other, rename_source
from .providers import HttpEmbedding, HttpProvider, ProviderError, ReplayProvider, StubProvider
from .validation import ValidationConfig, run_inference
from .voting import HashEmbedding

log = logging.getLogger("varrecover")

EXIT_OK, EXIT_INPUT, EXIT_PROVIDER, EXIT_INTERNAL = 0, 1, 2, 3
DEFAULT_SEED = 0


class InputError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    seed: int = DEFAULT_SEED
    jobs: int = 1
    lenient: bool = False
    out_dir: Path = Path(".")
    verbosity: int = 0
    args: argparse.Namespace = field(default=None, repr=False)

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        if args.jobs < 1:
            raise InputError("--jobs must be >= 1")
        return cls(args.command, args.seed, args.jobs, args.lenient, Path(args.out_dir), args.verbose, args)


# -- input helpers ---------------------------------------------------------------


def _read(path) -> object:
    p = Path(path)
    if not p.exists():
        raise InputError(f"{p}: no such file or directory")
    try:
        return read_json(p)
    except json.JSONDecodeError as e:
        raise InputError(f"{p}: invalid JSON ({e})") from None
    except UnicodeDecodeError:
        raise InputError(f"{p}: not UTF-8") from None


def corpus_files(paths: List[str]) -> List[Path]:
    out = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            out.extend(sorted(x for x in p.iterdir() if x.suffix == ".json"))
        elif p.exists():
            out.append(p)
        else:
            raise InputError(f"{p}: no such file or directory")
    if not out:
        raise InputError("no corpus files given")
    return out


@dataclass
class Loaded:
    path: Path
    binary: BinaryProgram
    failures: list


def load_corpus(paths: List[str], cfg: RunConfig) -> List[Loaded]:
    loaded = []
    seen = {}
    for p in corpus_files(paths):
        doc = _read(p)
        try:
            if cfg.lenient:
                b, failures = load_binary_lenient(doc)
            else:
                b, failures = load_binary(doc), []
        except (CorpusError, ParseError) as e:
            raise InputError(f"{p}: {e}") from None
        for fid, msg in failures:
            log.warning("%s: skipped function %s: %s", p, fid, msg)
        if b.bid in seen:
            raise InputError(f"{p}: binary id {b.bid!r} already loaded from {seen[b.bid]}")
        seen[b.bid] = p
        loaded.append(Loaded(p, b, failures))
    return loaded


def per_binary_doc(source: Optional[str], bid: str, suffixes, single: bool, what: str):
    """Resolve a per-binary side file: a single file, or ``DIR/<bid><suffix>``."""
    if source is None:
        return None
    p = Path(source)
    if p.is_dir():
        for s in suffixes:
            if (p / f"{bid}{s}").exists():
                return _read(p / f"{bid}{s}")
        raise InputError(f"{p}: no {what} for binary {bid!r}")
    if not p.exists():
        raise InputError(f"{p}: no such file or directory")
    return _read(p)


def _names(doc, where) -> dict:
    try:
        return load_name_map(doc)
    except CorpusError as e:
        raise InputError(f"{where}: {e}") from None


def _emit(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(doc), encoding="utf-8")


def _map_jobs(fn, items, jobs: int) -> list:
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# -- commands ----------------------------------------------------------------------


def cmd_parse(cfg: RunConfig) -> int:
    a = cfg.args
    loaded = load_corpus(a.corpus, cfg)
    summary = {}
    for item in loaded:
        b = item.binary
        out = Path(a.out) if a.out and len(loaded) == 1 else cfg.out_dir / f"{b.bid}.ir.json"
        _emit(out, dump_binary(b))
        summary[b.bid] = {
            "functions": len(b.funcs),
            "other": {f.fid: count_other(f.body) for f in b.funcs},
            "notes": {f.fid: list(f.diagnostics) for f in b.funcs if f.diagnostics},
            "skipped": [{"fid": fid, "error": msg} for fid, msg in item.failures],
        }
    _emit(Path(a.diagnostics) if a.diagnostics else cfg.out_dir / "diagnostics.json", summary)
    for bid, s in summary.items():
        print(f"{bid}: {s['functions']} function(s), {sum(s['other'].values())} opaque expression(s), "
              f"{len(s['skipped'])} skipped")
    return EXIT_OK


def _name_provider(a, bid: str, single: bool):
    if a.provider == "replay":
        if not a.candidates:
            raise InputError("--provider replay needs --candidates")
        doc = per_binary_doc(a.candidates, bid, (".candidates.json", ".json"), single, "candidates")
        try:
            return ReplayProvider.from_doc(doc)
        except CorpusError as e:
            raise InputError(f"{a.candidates}: {e}") from None
    if a.provider == "stub":
        try:
            return StubProvider.from_spec(a.stub_rule)
        except ValueError as e:
            raise InputError(str(e)) from None
    try:
        return HttpProvider.from_env(a.endpoint, timeout=a.timeout, retries=a.retries)
    except ValueError as e:
        raise InputError(str(e)) from None


def _embedding(a):
    if a.embedding == "hash":
        return HashEmbedding(seed=a.embedding_seed)
    try:
        return HttpEmbedding.from_env(a.embedding_endpoint, timeout=a.timeout)
    except ValueError as e:
        raise InputError(str(e)) from None


def cmd_infer(cfg: RunConfig) -> int:
    a = cfg.args
    loaded = load_corpus(a.corpus, cfg)
    single = len(loaded) == 1
    if not single and (a.out or a.trace or a.candidates_out):
        raise InputError("--out/--trace/--candidates-out need exactly one corpus file; use --out-dir")
    try:
        vcfg = ValidationConfig(budget=a.budget, rounds=a.rounds, top_n=a.top_n)
    except ValueError as e:
        raise InputError(str(e)) from None
    template = None
    if a.template:
        try:
            template = QueryTemplate.from_doc(_read(a.template))
        except ValueError as e:
            raise InputError(f"{a.template}: {e}") from None
    providers = [_name_provider(a, item.binary.bid, single) for item in loaded]
    embed = _embedding(a)

    def work(k):
        b = loaded[k].binary
        return run_inference(b, providers[k], embed, vcfg, template)

    results = _map_jobs(work, list(range(len(loaded))), cfg.jobs)

    failed = queried = 0
    for item, (names, cands, trace) in zip(loaded, results):
        b = item.binary
        bid = b.bid
        _emit(Path(a.out) if a.out else cfg.out_dir / f"{bid}.names.json", names)
        _emit(Path(a.candidates_out) if a.candidates_out else cfg.out_dir / f"{bid}.candidates.json", cands)
        tdoc = trace.to_doc()
        tdoc.update(
            bid=bid,
            config={"budget": vcfg.budget, "rounds": vcfg.rounds, "top_n": vcfg.top_n, "provider": a.provider,
                    "embedding": a.embedding},
            skipped=[{"fid": fid, "error": msg} for fid, msg in item.failures],
        )
        _emit(Path(a.trace) if a.trace else cfg.out_dir / f"{bid}.trace.json", tdoc)
        if a.rewrite:
            rewritten = {}
            for f in b.funcs:
                text = f.raw_text if f.raw_text is not None else ir.print_function(f.fid, f.params, f.body)
                rewritten[f.fid] = rename_source(text, names.get(f.fid, {}))
            _emit(cfg.out_dir / f"{bid}.rewritten.json", rewritten)
        failed += len(trace.errors)
        queried += trace.queried
        iters = [len(r.iterations) for r in trace.rounds]
        print(f"{bid}: {sum(len(v) for v in names.values())} variable(s) named, "
              f"iterations per round {iters}, {len(trace.errors)} provider error(s)")
    if queried and failed == queried:
        print("error: every provider call failed", file=sys.stderr)
        return EXIT_PROVIDER
    return EXIT_OK


def _gt_pairs(loaded: List[Loaded], source: str, what: str, suffixes) -> list:
    single = len(loaded) == 1
    if not single and not Path(source).is_dir():
        raise InputError(f"{source}: must be a directory of <bid>.json files when several binaries are given")
    return [
        (item.binary, _names(per_binary_doc(source, item.binary.bid, suffixes, single, what), source))
        for item in loaded
    ]


def cmd_eval(cfg: RunConfig) -> int:
    a = cfg.args
    loaded = load_corpus(a.corpus, cfg)
    gt = _gt_pairs(loaded, a.gt, "groundtruth", (".json", ".gt.json"))
    pred = _gt_pairs(loaded, a.pred, "predictions", (".names.json", ".json"))
    syn = SynonymTable()
    if a.synonyms:
        if not Path(a.synonyms).exists():
            raise InputError(f"{a.synonyms}: no such file or directory")
        syn = SynonymTable.load(a.synonyms)
    freqs, flags = {}, {}
    if a.train_corpus:
        if not a.train_gt:
            raise InputError("--train-corpus needs --train-gt")
        train_loaded = load_corpus(a.train_corpus, cfg)
        train = _gt_pairs(train_loaded, a.train_gt, "groundtruth", (".json", ".gt.json"))
        freqs = name_frequency(g for _, g in train)
        flags = mark_in_train(gt, train)
    boundaries = DEFAULT_BOUNDARIES
    if a.buckets:
        try:
            boundaries = tuple(float(x) if x in ("inf", "Infinity") else int(x) for x in a.buckets.split(","))
        except ValueError:
            raise InputError(f"--buckets: bad boundary list {a.buckets!r}") from None
    try:
        report = evaluate(pred, gt, syn, freqs, flags, boundaries)
    except EvalError as e:
        raise InputError(str(e)) from None
    table = report.format_table()
    print(table, end="")
    _emit(Path(a.report_json) if a.report_json else cfg.out_dir / "report.json", report.to_doc())
    if a.report_table:
        Path(a.report_table).parent.mkdir(parents=True, exist_ok=True)
        Path(a.report_table).write_text(table, encoding="utf-8")
    return EXIT_OK


def cmd_stats(cfg: RunConfig) -> int:
    a = cfg.args
    loaded = load_corpus(a.corpus, cfg)
    pairs = _gt_pairs(loaded, a.gt, "groundtruth", (".json", ".gt.json"))
    freqs = name_frequency(g for _, g in pairs)
    buckets = []
    for lo, hi in zip(DEFAULT_BOUNDARIES, DEFAULT_BOUNDARIES[1:]):
        buckets.append({"lo": lo, "hi": None if hi == float("inf") else hi,
                        "names": sum(1 for c in freqs.values() if lo <= c < hi)})
    doc = {"names": dict(sorted(freqs.items())), "buckets": buckets, "total": sum(freqs.values())}
    _emit(Path(a.out) if a.out else cfg.out_dir / "stats.json", doc)
    print(f"{len(freqs)} distinct name(s), {doc['total']} occurrence(s)")
    return EXIT_OK


def cmd_split(cfg: RunConfig) -> int:
    a = cfg.args
    loaded = load_corpus(a.corpus, cfg)
    try:
        ratio = tuple(int(x) for x in a.ratio.split(":"))
        if len(ratio) != 2 or min(ratio) < 0 or sum(ratio) == 0:
            raise ValueError
    except ValueError:
        raise InputError(f"--ratio: expected TRAIN:TEST, got {a.ratio!r}") from None
    train, test = split_dataset(loaded, ratio, cfg.seed)

    def manifest(items):
        return [{"bid": x.binary.bid, "path": str(x.path)} for x in items]

    doc = {"seed": cfg.seed, "ratio": list(ratio), "train": manifest(train), "test": manifest(test)}
    _emit(Path(a.out) if a.out else cfg.out_dir / "split.json", doc)
    print(f"train {len(train)} binary(ies), test {len(test)}")
    return EXIT_OK


def cmd_correlations(cfg: RunConfig) -> int:
    a = cfg.args
    loaded = load_corpus(a.corpus, cfg)
    out = {}
    for item in loaded:
        b = item.binary
        names = _names(per_binary_doc(a.names, b.bid, (".names.json", ".json"), len(loaded) == 1, "name map"),
                       a.names) if a.names else {}
        out[b.bid] = correlated_names(b, names).dump(names)
    doc = out[loaded[0].binary.bid] if len(loaded) == 1 else out
    _emit(Path(a.out) if a.out else cfg.out_dir / "correlations.json", doc)
    return EXIT_OK


def cmd_export_corpus(cfg: RunConfig) -> int:
    a = cfg.args
    loaded = load_corpus(a.corpus, cfg)
    dataset = _gt_pairs(loaded, a.gt, "groundtruth", (".json", ".gt.json"))
    n_pred = {}
    if a.pred:
        n_pred = {b.bid: names for b, names in _gt_pairs(loaded, a.pred, "predictions", (".names.json", ".json"))}
    template = QueryTemplate.from_doc(_read(a.template)) if a.template else None
    records, skipped = export_training_corpus(dataset, n_pred, template)
    out = Path(a.out) if a.out else cfg.out_dir / "train.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n")
    print(f"{len(records)} record(s) written, {skipped} function(s) without groundtruth skipped")
    return EXIT_OK


COMMANDS = {
    "parse": cmd_parse,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "stats": cmd_stats,
    "split": cmd_split,
    "correlations": cmd_correlations,
    "export-corpus": cmd_export_corpus,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="varrecover", description="Recover variable names in decompiled code.")
    ap.add_argument("--seed", type=int, default=DEFAULT_SEED)
    ap.add_argument("--jobs", type=int, default=1, help="binaries processed in parallel")
    ap.add_argument("--lenient", action="store_true", help="skip functions that fail to parse")
    ap.add_argument("--out-dir", default=".")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="parse a corpus to IR")
    p.add_argument("corpus", nargs="+")
    p.add_argument("--out")
    p.add_argument("--diagnostics")

    p = sub.add_parser("infer", help="predict names")
    p.add_argument("corpus", nargs="+")
    p.add_argument("--budget", type=int, default=4)
    p.add_argument("--rounds", type=int, default=1)
    p.add_argument("--top-n", type=int, default=3)
    p.add_argument("--provider", choices=("replay", "stub", "http"), default="replay")
    p.add_argument("--candidates", help="candidate file, or directory of <bid>.candidates.json")
    p.add_argument("--stub-rule", default="identity", help="identity | empty | constant:a,b")
    p.add_argument("--endpoint")
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--retries", type=int, default=1)
    p.add_argument("--embedding", choices=("hash", "http"), default="hash")
    p.add_argument("--embedding-endpoint")
    p.add_argument("--embedding-seed", type=int, default=0)
    p.add_argument("--template", help="JSON query template")
    p.add_argument("--out")
    p.add_argument("--candidates-out")
    p.add_argument("--trace")
    p.add_argument("--rewrite", action="store_true", help="also write sources with predicted names")

    p = sub.add_parser("eval", help="score predictions")
    p.add_argument("--corpus", nargs="+", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--synonyms")
    p.add_argument("--train-corpus", nargs="+")
    p.add_argument("--train-gt")
    p.add_argument("--buckets", help="comma-separated boundaries, e.g. 0,10,100,1000,inf")
    p.add_argument("--report-json")
    p.add_argument("--report-table")

    p = sub.add_parser("stats", help="groundtruth name frequencies")
    p.add_argument("corpus", nargs="+")
    p.add_argument("--gt", required=True)
    p.add_argument("--out")

    p = sub.add_parser("split", help="binary-level train/test split")
    p.add_argument("corpus", nargs="+")
    p.add_argument("--ratio", default="9:1")
    p.add_argument("--out")

    p = sub.add_parser("correlations", help="dump correlated names")
    p.add_argument("corpus", nargs="+")
    p.add_argument("--names")
    p.add_argument("--out")

    p = sub.add_parser("export-corpus", help="write training records as JSONL")
    p.add_argument("--corpus", nargs="+", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--pred")
    p.add_argument("--template")
    p.add_argument("--out")
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        cfg = RunConfig.from_args(args)
        return COMMANDS[args.command](cfg)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except ProviderError as e:
        print(f"provider error: {e}", file=sys.stderr)
        return EXIT_PROVIDER
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as e:
        log.exception("internal error")
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

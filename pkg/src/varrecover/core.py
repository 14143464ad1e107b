"""Shared domain model: binaries, decompiled functions, name and candidate maps.

Name maps and candidate maps are plain nested dicts (``fid -> vid -> ...``);
the helpers here normalize them so that keys iterate in lexicographic order
and candidate lists are deduplicated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple

from . import ir

NameMap = Dict[str, Dict[str, str]]
CandidateMap = Dict[str, Dict[str, List[str]]]

#: Reserved function id under which globals (and function names) are named.
GLOBALS_FID = "<globals>"


class CorpusError(ValueError):
    """A corpus, name-map or candidate document violates its schema."""


@dataclass(frozen=True)
class DecompiledFunction:
    fid: str
    params: tuple
    body: ir.Stmt
    ids: frozenset
    raw_text: Optional[str] = None
    diagnostics: tuple = field(default=(), compare=False)

    def __post_init__(self):
        missing = [p for p in self.params if p not in self.ids]
        if missing:
            raise CorpusError(f"function {self.fid}: params {missing} not in ids")
        stray = ir.stmt_vids(self.body) - self.ids
        if stray:
            raise CorpusError(f"function {self.fid}: body uses ids {sorted(stray)} not declared in ids")

    @property
    def locals(self) -> list:
        return sorted(self.ids - set(self.params))


@dataclass(frozen=True)
class BinaryProgram:
    bid: str
    funcs: tuple
    call_graph: frozenset = frozenset()
    external: frozenset = frozenset()
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {}
        for f in self.funcs:
            if f.fid in index:
                raise CorpusError(f"binary {self.bid}: duplicate fid {f.fid!r}")
            index[f.fid] = f
        for caller, callee in self.call_graph:
            if caller not in index and caller not in self.external:
                raise CorpusError(f"binary {self.bid}: unresolved caller {caller!r}")
            if callee not in index and callee not in self.external:
                raise CorpusError(f"binary {self.bid}: unresolved callee {callee!r}")
        object.__setattr__(self, "_index", index)

    def func(self, fid: str) -> Optional[DecompiledFunction]:
        return self._index.get(fid)

    def __contains__(self, fid: str) -> bool:
        return fid in self._index

    @property
    def fids(self) -> list:
        return [f.fid for f in self.funcs]

    def callers(self, fid: str) -> list:
        return sorted({clr for clr, cle in self.call_graph if cle == fid})

    def callees(self, fid: str) -> list:
        return sorted({cle for clr, cle in self.call_graph if clr == fid})

    def variables(self) -> list:
        """Every (fid, vid) pair of the binary, funcs in file order, vids sorted."""
        return [(f.fid, v) for f in self.funcs for v in sorted(f.ids)]


Predictions = List[Tuple[BinaryProgram, NameMap]]


def lookup_name(names: Mapping, fid: str, vid: str) -> Optional[str]:
    return names.get(fid, {}).get(vid)


def dedup(items: Iterable[str]) -> list:
    seen = set()
    out = []
    for x in items:
        if x not in seen:
            seen.add(x)
            out.append(x)
    return out


def normalize_name_map(names: Mapping) -> NameMap:
    return {fid: {vid: names[fid][vid] for vid in sorted(names[fid])} for fid in sorted(names)}


def normalize_candidates(cands: Mapping) -> CandidateMap:
    return {fid: {vid: dedup(cands[fid][vid]) for vid in sorted(cands[fid])} for fid in sorted(cands)}


def names_equal(a: Mapping, b: Mapping) -> bool:
    """Compare name maps ignoring functions bound to no variables."""
    return {k: v for k, v in a.items() if v} == {k: v for k, v in b.items() if v}


def diff_count(a: Mapping, b: Mapping) -> int:
    """Number of (fid, vid) keys whose binding differs between two name maps."""
    keys = {(f, v) for f in a for v in a[f]} | {(f, v) for f in b for v in b[f]}
    return sum(1 for f, v in keys if lookup_name(a, f, v) != lookup_name(b, f, v))


def top1(cands: Mapping) -> NameMap:
    return normalize_name_map({fid: {vid: lst[0] for vid, lst in vs.items() if lst} for fid, vs in cands.items()})


# -- documents -----------------------------------------------------------------


def _str_list(value: Any, where: str) -> list:
    if not isinstance(value, list) or not all(isinstance(x, str) and x for x in value):
        raise CorpusError(f"{where}: expected a list of non-empty strings")
    return value


def load_name_map(doc: Any) -> NameMap:
    if not isinstance(doc, dict):
        raise CorpusError("name map: expected an object")
    out: NameMap = {}
    for fid, vs in doc.items():
        if not isinstance(vs, dict):
            raise CorpusError(f"name map: entry {fid!r} must be an object")
        for vid, name in vs.items():
            if not isinstance(name, str) or not name:
                raise CorpusError(f"name map: {fid}.{vid} must be a non-empty string")
        out[fid] = dict(vs)
    return normalize_name_map(out)


def load_candidate_map(doc: Any) -> CandidateMap:
    if not isinstance(doc, dict):
        raise CorpusError("candidate map: expected an object")
    out: CandidateMap = {}
    for fid, vs in doc.items():
        if not isinstance(vs, dict):
            raise CorpusError(f"candidate map: entry {fid!r} must be an object")
        out[fid] = {vid: _str_list(lst, f"candidate map {fid}.{vid}") for vid, lst in vs.items()}
    return normalize_candidates(out)


def _load_function(doc: Any, known_fids: set, bid: str) -> DecompiledFunction:
    from .parser import parse_function

    if not isinstance(doc, dict):
        raise CorpusError(f"binary {bid}: function entries must be objects")
    fid = doc.get("fid")
    if not isinstance(fid, str) or not fid:
        raise CorpusError(f"binary {bid}: function missing field 'fid'")
    if ("code" in doc) == ("ir" in doc):
        raise CorpusError(f"function {fid}: exactly one of 'code' or 'ir' is required")
    extra_ids = set(_str_list(doc.get("ids", []), f"function {fid} ids"))
    params = doc.get("params")
    if params is not None:
        params = tuple(_str_list(params, f"function {fid} params"))
    if "code" in doc:
        if not isinstance(doc["code"], str):
            raise CorpusError(f"function {fid}: 'code' must be a string")
        parsed = parse_function(doc["code"], fid, known_fids)
        p = parsed.params if params is None else params
        return DecompiledFunction(
            fid, p, parsed.body, frozenset(parsed.ids | extra_ids | set(p)), parsed.raw_text, parsed.diagnostics
        )
    if params is None:
        raise CorpusError(f"function {fid}: 'params' is required with 'ir'")
    try:
        body = ir.stmt_from_doc(doc["ir"])
    except ir.IRDecodeError as e:
        raise CorpusError(f"function {fid}: {e}") from None
    raw = doc.get("raw_text")
    return DecompiledFunction(fid, params, body, frozenset(extra_ids | set(params) | ir.stmt_vids(body)), raw)


def load_binary(doc: Any) -> BinaryProgram:
    """Decode and validate one corpus document (code bodies are parsed)."""
    return _load_binary(doc, None)


def load_binary_lenient(doc: Any) -> Tuple[BinaryProgram, list]:
    """Like :func:`load_binary`, but functions whose body fails to parse are
    dropped (and treated as external callees) instead of aborting the load.

    Returns ``(binary, [(fid, message), ...])``.
    """
    failures: list = []
    return _load_binary(doc, failures), failures


def _load_binary(doc: Any, failures: Optional[list]) -> BinaryProgram:
    from .parser import ParseError

    if not isinstance(doc, dict):
        raise CorpusError("corpus: expected an object")
    bid = doc.get("bid")
    if not isinstance(bid, str) or not bid:
        raise CorpusError("corpus: missing field 'bid'")
    fdocs = doc.get("functions")
    if not isinstance(fdocs, list):
        raise CorpusError(f"binary {bid}: missing field 'functions'")
    external = set(_str_list(doc.get("external_callees", []), f"binary {bid} external_callees"))
    known = {d.get("fid") for d in fdocs if isinstance(d, dict)}
    seen: set = set()
    funcs = []
    for d in fdocs:
        fid = d.get("fid") if isinstance(d, dict) else None
        if fid in seen:
            raise CorpusError(f"binary {bid}: duplicate fid {fid!r}")
        seen.add(fid)
        try:
            funcs.append(_load_function(d, known, bid))
        except ParseError as e:
            if failures is None:
                raise CorpusError(f"binary {bid}: function {fid}: {e}") from None
            failures.append((fid, str(e)))
            external.add(fid)
    if "call_graph" in doc:
        edges = doc["call_graph"]
        if not isinstance(edges, list) or not all(
            isinstance(e, list) and len(e) == 2 and all(isinstance(x, str) for x in e) for e in edges
        ):
            raise CorpusError(f"binary {bid}: call_graph must be a list of [caller, callee] pairs")
        cg = frozenset((a, b) for a, b in edges)
    else:
        cg = frozenset(
            (f.fid, c.callee) for f in funcs for c in ir.call_sites(f.body) if not c.external and c.callee in known
        )
    return BinaryProgram(bid, tuple(funcs), cg, frozenset(external))


def dump_binary(b: BinaryProgram) -> dict:
    funcs = []
    for f in b.funcs:
        d = {"fid": f.fid, "params": list(f.params), "ids": sorted(f.ids), "ir": ir.stmt_to_doc(f.body)}
        if f.raw_text is not None:
            d["raw_text"] = f.raw_text
        funcs.append(d)
    doc = {"bid": b.bid, "functions": funcs, "call_graph": [list(e) for e in sorted(b.call_graph)]}
    if b.external:
        doc["external_callees"] = sorted(b.external)
    return doc


def read_json(path) -> Any:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def dumps(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_json(path, doc: Any) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(dumps(doc), encoding="utf-8")

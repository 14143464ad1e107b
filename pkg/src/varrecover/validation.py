"""Name validation loop and the iterative inference driver."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from .context import ContextNames, QueryTemplate, build_query, ctx
from .core import BinaryProgram, CandidateMap, NameMap, dedup, diff_count, normalize_candidates, top1
from .correlation import correlated_names
from .voting import EmbeddingProvider, HashEmbedding, strip_placeholders, vote_all

log = logging.getLogger(__name__)

MERGE_STRATEGY = "union-preserve-order"


@dataclass(frozen=True)
class ValidationConfig:
    budget: int = 4
    rounds: int = 1
    candidate_merge: str = MERGE_STRATEGY
    top_n: int = 3

    def __post_init__(self):
        if self.budget < 0:
            raise ValueError("budget must be >= 0")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.top_n < 1:
            raise ValueError("top_n must be >= 1")
        if self.candidate_merge != MERGE_STRATEGY:
            raise ValueError(f"unsupported candidate merge strategy {self.candidate_merge!r}")


@dataclass
class InferenceTrace:
    iterations: List[NameMap] = field(default_factory=list)
    changed: List[int] = field(default_factory=list)
    converged: bool = False

    def to_doc(self) -> dict:
        return {"iterations": self.iterations, "changed": self.changed, "converged": self.converged}


@dataclass
class RunTrace:
    rounds: List[InferenceTrace] = field(default_factory=list)
    errors: List[dict] = field(default_factory=list)
    queried: int = 0

    def to_doc(self) -> dict:
        return {"rounds": [r.to_doc() for r in self.rounds], "errors": self.errors}


def validate_names(
    b: BinaryProgram,
    n0: NameMap,
    candidates: CandidateMap,
    cfg: Optional[ValidationConfig] = None,
    provider: Optional[EmbeddingProvider] = None,
) -> Tuple[NameMap, InferenceTrace]:
    """Alternate correlation extraction and voting until the names stop changing."""
    cfg = cfg or ValidationConfig()
    provider = provider or HashEmbedding()
    trace = InferenceTrace()
    current = n0
    for _ in range(cfg.budget):
        prev = current
        corr = correlated_names(b, current)
        current = vote_all(candidates, corr.pi, provider)
        n = diff_count(prev, current)
        trace.iterations.append(current)
        trace.changed.append(n)
        if n == 0:
            trace.converged = True
            break
    return current, trace


def merge_candidates(old: CandidateMap, new: CandidateMap) -> CandidateMap:
    """Newer lists lead, previously seen names follow; nothing is dropped."""
    out = {fid: {vid: list(lst) for vid, lst in vs.items()} for fid, vs in old.items()}
    for fid, vs in new.items():
        for vid, lst in vs.items():
            prior = out.setdefault(fid, {}).get(vid, [])
            out[fid][vid] = dedup(list(lst) + prior)
    return normalize_candidates({fid: {v: l for v, l in vs.items() if l} for fid, vs in out.items()})


def run_inference(
    b: BinaryProgram,
    name_provider,
    embed_provider: Optional[EmbeddingProvider] = None,
    cfg: Optional[ValidationConfig] = None,
    template: Optional[QueryTemplate] = None,
    workers: int = 1,
) -> Tuple[NameMap, CandidateMap, RunTrace]:
    """Query, merge, validate and propagate context for ``cfg.rounds`` rounds."""
    cfg = cfg or ValidationConfig()
    embed_provider = embed_provider or HashEmbedding()
    trace = RunTrace()
    cands: CandidateMap = {}
    names: NameMap = {}

    for r in range(1, cfg.rounds + 1):
        queries = []
        for f in b.funcs:
            context = ctx(b, names, f) if r > 1 else ContextNames()
            queries.append((f, build_query(f, context, template, round_index=r)))

        def ask(item):
            f, q = item
            try:
                return f.fid, name_provider.propose(q, f), None
            except Exception as e:  # provider failures degrade per function
                return f.fid, None, e

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                answers = list(pool.map(ask, queries))
        else:
            answers = [ask(item) for item in queries]
        trace.queried += len(answers)

        fresh: CandidateMap = {}
        for fid, answer, err in sorted(answers, key=lambda a: a[0]):
            if err is not None:
                log.warning("provider failed on %s/%s: %s", b.bid, fid, err)
                trace.errors.append({"round": r, "fid": fid, "error": f"{type(err).__name__}: {err}"})
                continue
            f = b.func(fid)
            fresh[fid] = {
                vid: strip_placeholders(dedup(lst))[: cfg.top_n]
                for vid, lst in answer.items()
                if vid in f.ids
            }
        cands = merge_candidates(cands, fresh)
        names, rtrace = validate_names(b, top1(cands), cands, cfg, embed_provider)
        trace.rounds.append(rtrace)
    return names, cands, trace

"""Evaluation: exact match, token-set precision/recall, in-train detection,
dataset splitting, deduplication and frequency-bucketed reports."""

from __future__ import annotations

import logging
import math
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from . import ir
from .core import GLOBALS_FID, BinaryProgram, DecompiledFunction, NameMap
from .parser import ParseError, tokenize
from .voting import tokenize_name

log = logging.getLogger(__name__)

GLOBAL_ADDR = "GLOBAL_ADDR"
GLOBAL_ADDR_RE = re.compile(r"(?:qword|unk|dword|byte|word|off)_[0-9A-Fa-f]+")
DEFAULT_BOUNDARIES = (0, 10, 100, 1000, math.inf)


class SynonymTable:
    """Token clusters; two tokens are synonyms when some cluster holds both."""

    def __init__(self, clusters: Iterable[Iterable[str]] = ()):
        self._groups: Dict[str, set] = {}
        for cluster in clusters:
            members = {t.lower() for t in cluster if t}
            for t in members:
                self._groups.setdefault(t, set()).update(members)

    @classmethod
    def from_text(cls, text: str) -> "SynonymTable":
        return cls(line.split() for line in text.splitlines() if line.strip() and not line.startswith("#"))

    @classmethod
    def load(cls, path) -> "SynonymTable":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def related(self, a: str, b: str) -> bool:
        return a == b or b in self._groups.get(a, ())


def token_match(w: str, w_hat: str, syn: Optional[SynonymTable] = None) -> bool:
    syn = syn or SynonymTable()
    if syn.related(w, w_hat):
        return True
    return len(w) > 2 and len(w_hat) > 2 and (w.startswith(w_hat) or w_hat.startswith(w))


def _matched(xs: set, ys: set, syn: SynonymTable) -> int:
    return sum(1 for x in xs if any(token_match(y, x, syn) for y in ys))


def precision(W: Iterable[str], W_hat: Iterable[str], syn: Optional[SynonymTable] = None) -> float:
    W, W_hat = set(W), set(W_hat)
    if not W_hat:
        return 0.0
    return _matched(W_hat, W, syn or SynonymTable()) / len(W_hat)


def recall(W: Iterable[str], W_hat: Iterable[str], syn: Optional[SynonymTable] = None) -> float:
    W, W_hat = set(W), set(W_hat)
    if not W:
        return 0.0
    return _matched(W, W_hat, syn or SynonymTable()) / len(W)


def exact_match(n: str, n_hat: Optional[str]) -> bool:
    return n_hat is not None and n == n_hat


# -- in-train identity ---------------------------------------------------------------


def canonicalize(text: str, renames: Mapping[str, str]) -> str:
    """Rename identifiers, fold global addresses, and join tokens by single spaces."""
    out = []
    for t in tokenize(text):
        s = t.text
        if t.kind == "ident":
            s = renames.get(s, s)
            if GLOBAL_ADDR_RE.fullmatch(s):
                s = GLOBAL_ADDR
        out.append(s)
    return " ".join(out)


def normalize_for_identity(f: DecompiledFunction, gt: NameMap) -> str:
    """Body text with groundtruth names substituted and globals folded.

    Function names and named globals are taken from ``gt[GLOBALS_FID]``.
    """
    renames = dict(gt.get(GLOBALS_FID, {}))
    renames.update(gt.get(f.fid, {}))
    text = f.raw_text if f.raw_text is not None else ir.print_function(f.fid, f.params, f.body)
    try:
        return canonicalize(text, renames)
    except ParseError:
        # raw text that does not lex still gets whitespace-level normalization
        s = " ".join(text.split())
        for old, new in renames.items():
            s = re.sub(rf"\b{re.escape(old)}\b", new, s)
        return GLOBAL_ADDR_RE.sub(GLOBAL_ADDR, s)


def _canonical_set(data) -> set:
    return {normalize_for_identity(f, gt) for b, gt in data for f in b.funcs}


def mark_in_train(test, train) -> Dict[Tuple[str, str], bool]:
    """``{(bid, fid): in_train}`` for every test function."""
    seen = _canonical_set(train)
    return {(b.bid, f.fid): normalize_for_identity(f, gt) in seen for b, gt in test for f in b.funcs}


def split_dataset(binaries: Sequence, ratio: Tuple[int, int] = (9, 1), seed: int = 0):
    """Assign whole binaries to train/test; both lists keep the input order."""
    n = len(binaries)
    if n < 2:
        log.warning("split_dataset: %d binary(ies); everything goes to train", n)
        return list(binaries), []
    train_w, test_w = ratio
    n_test = min(n - 1, max(1, (n * test_w) // (train_w + test_w)))
    order = list(range(n))
    random.Random(seed).shuffle(order)
    test_idx = set(order[:n_test])
    train = [x for i, x in enumerate(binaries) if i not in test_idx]
    test = [x for i, x in enumerate(binaries) if i in test_idx]
    return train, test


def jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def dedup_binaries(items: Sequence, threshold: float = 0.95) -> list:
    """Drop binaries whose canonical function set overlaps an earlier kept one.

    ``items`` holds ``(binary, groundtruth)`` pairs (groundtruth may be empty).
    """
    kept: list = []
    kept_sets: List[set] = []
    for b, gt in items:
        s = {normalize_for_identity(f, gt or {}) for f in b.funcs}
        if any(jaccard(s, k) >= threshold for k in kept_sets):
            continue
        kept.append((b, gt))
        kept_sets.append(s)
    return kept


def name_frequency(gt_maps: Iterable[NameMap]) -> Counter:
    c: Counter = Counter()
    for gt in gt_maps:
        for fid, vs in gt.items():
            if fid != GLOBALS_FID:
                c.update(vs.values())
    return c


# -- reports -----------------------------------------------------------------------


@dataclass
class VariableScore:
    bid: str
    fid: str
    vid: str
    gt: str
    pred: Optional[str]
    exact: bool
    precision: float
    recall: float
    gt_freq: int
    in_train: bool


def _aggregate(rows: Sequence[VariableScore]) -> dict:
    n = len(rows)
    if not n:
        return {"count": 0, "precision": None, "recall": None, "exact": None}
    return {
        "count": n,
        "precision": math.fsum(r.precision for r in rows) / n,
        "recall": math.fsum(r.recall for r in rows) / n,
        "exact": sum(r.exact for r in rows) / n,
    }


@dataclass
class EvalReport:
    per_variable: List[VariableScore] = field(default_factory=list)
    boundaries: tuple = DEFAULT_BOUNDARIES

    @property
    def overall(self) -> dict:
        return _aggregate(self.per_variable)

    @property
    def in_train(self) -> dict:
        return _aggregate([r for r in self.per_variable if r.in_train])

    @property
    def not_in_train(self) -> dict:
        return _aggregate([r for r in self.per_variable if not r.in_train])

    @property
    def buckets(self) -> list:
        return frequency_buckets(self, self.boundaries)

    def to_doc(self) -> dict:
        def bound(x):
            return None if x == math.inf else x

        return {
            "overall": self.overall,
            "in_train": self.in_train,
            "not_in_train": self.not_in_train,
            "buckets": [dict(b, lo=bound(b["lo"]), hi=bound(b["hi"])) for b in self.buckets],
            "per_variable": [vars(r) for r in self.per_variable],
        }

    def format_table(self) -> str:
        def pct(x):
            return "   -  " if x is None else f"{100 * x:6.1f}"

        lines = [f"{'':<14}{'count':>7}  {'Prec%':>6}  {'Rec%':>6}  {'Exact%':>6}"]
        for label, agg in (("Overall", self.overall), ("In-Train", self.in_train), ("Not-In-Train", self.not_in_train)):
            lines.append(f"{label:<14}{agg['count']:>7}  {pct(agg['precision'])}  {pct(agg['recall'])}  {pct(agg['exact'])}")
        lines.append("")
        lines.append("by groundtruth name frequency in train")
        for b in self.buckets:
            hi = "inf" if b["hi"] == math.inf else b["hi"]
            label = f"  [{b['lo']}, {hi})"
            lines.append(f"{label:<14}{b['count']:>7}  {pct(b['precision'])}  {pct(b['recall'])}  {pct(b['exact'])}")
        return "\n".join(lines) + "\n"


def frequency_buckets(report: EvalReport, boundaries: Sequence[float] = DEFAULT_BOUNDARIES) -> list:
    out = []
    for lo, hi in zip(boundaries, boundaries[1:]):
        rows = [r for r in report.per_variable if lo <= r.gt_freq < hi]
        out.append(dict(_aggregate(rows), lo=lo, hi=hi))
    return out


class EvalError(ValueError):
    pass


def score_name(gt: str, pred: Optional[str], syn: Optional[SynonymTable] = None) -> Tuple[bool, float, float]:
    if pred is None:
        return False, 0.0, 0.0
    W, W_hat = set(tokenize_name(gt)), set(tokenize_name(pred))
    return exact_match(gt, pred), precision(W, W_hat, syn), recall(W, W_hat, syn)


def evaluate(
    pred,
    gt,
    syn: Optional[SynonymTable] = None,
    train_freqs: Optional[Mapping[str, int]] = None,
    in_train_flags: Optional[Mapping[Tuple[str, str], bool]] = None,
    boundaries: Sequence[float] = DEFAULT_BOUNDARIES,
) -> EvalReport:
    """Score predictions against groundtruth; both are ``[(binary, names)]``.

    Every groundtruth variable is scored; a missing prediction scores zero.
    """
    syn = syn or SynonymTable()
    train_freqs = train_freqs or {}
    in_train_flags = in_train_flags or {}
    gt_by_bid = {b.bid: names for b, names in gt}
    pred_by_bid = {}
    for b, names in pred:
        if b.bid not in gt_by_bid:
            raise EvalError(f"binary {b.bid!r} has predictions but no groundtruth")
        pred_by_bid[b.bid] = names
    rows = []
    for b, names in gt:
        p = pred_by_bid.get(b.bid, {})
        for fid in sorted(names):
            if fid == GLOBALS_FID:
                continue
            for vid in sorted(names[fid]):
                g = names[fid][vid]
                guess = p.get(fid, {}).get(vid)
                exact, prec, rec = score_name(g, guess, syn)
                rows.append(
                    VariableScore(
                        b.bid, fid, vid, g, guess, exact, prec, rec,
                        int(train_freqs.get(g, 0)), bool(in_train_flags.get((b.bid, fid), False)),
                    )
                )
    return EvalReport(rows, tuple(boundaries))

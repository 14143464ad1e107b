"""Data-flow correlation extraction.

For every variable the analysis accumulates a set of origin triples
``(src_fid, src_vid, name)``: the names of variables connected to it by
direct copies, argument passing and return values.  Recording the origin
keeps a name that reaches a variable along several paths from being
counted more than once.

Rules, for a statement in function ``f`` with current names ``n_in``:

``a = b``
    ``sigma[f][a] |= sigma[f][b]`` and ``sigma[f][b] |= {(f, a, n_in[f][a])}``
``g(..., x, ...)`` (x is the i-th argument, p the i-th parameter of g)
    ``sigma[g][p] |= sigma[f][x]`` and ``sigma[f][x] |= {(g, p, n_in[g][p])}``
``return r`` (for each call site ``d = f(...)`` in some function h)
    ``sigma[h][d] |= sigma[f][r]`` and ``sigma[f][r] |= {(h, d, n_in[h][d])}``

Sequences thread the state left to right, both branches of a conditional
start from the same state and are joined pointwise, and loop bodies are
iterated to a fixpoint.  Whole-program iteration repeats until nothing
changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, NamedTuple, Optional

from . import ir
from .core import BinaryProgram, DecompiledFunction, NameMap


class OriginTriple(NamedTuple):
    src_fid: str
    src_vid: str
    name: str


class CorrelationState:
    """``sigma``: (fid, vid) -> set of :class:`OriginTriple`.

    A state may be an overlay on a parent state: reads fall through, writes
    stay local.  Overlays let both branches of a conditional start from the
    same state without copying it.
    """

    def __init__(self, sigma: Optional[dict] = None, parent: Optional["CorrelationState"] = None):
        self.local: Dict[tuple, frozenset] = dict(sigma or {})
        self.parent = parent

    def get(self, fid: str, vid: str) -> frozenset:
        key = (fid, vid)
        s = self
        while s is not None:
            if key in s.local:
                return s.local[key]
            s = s.parent
        return frozenset()

    def add(self, fid: str, vid: str, triples) -> bool:
        cur = self.get(fid, vid)
        if not triples or cur.issuperset(triples):
            return False
        self.local[(fid, vid)] = cur.union(triples)
        return True

    def overlay(self) -> "CorrelationState":
        return CorrelationState(parent=self)

    def keys(self) -> set:
        out = set(self.local)
        if self.parent is not None:
            out |= self.parent.keys()
        return out

    def flatten(self) -> "CorrelationState":
        return CorrelationState({k: self.get(*k) for k in self.keys()})

    def as_dict(self) -> dict:
        """Nested ``{fid: {vid: set}}`` view, keys sorted."""
        out: dict = {}
        for fid, vid in sorted(self.keys()):
            v = self.get(fid, vid)
            out.setdefault(fid, {})[vid] = set(v)
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, CorrelationState):
            return NotImplemented
        a = {k: v for k, v in ((k, self.get(*k)) for k in self.keys()) if v}
        b = {k: v for k, v in ((k, other.get(*k)) for k in other.keys()) if v}
        return a == b

    def total(self) -> int:
        return sum(len(self.get(*k)) for k in self.keys())


@dataclass
class CorrelatedNames:
    pi: Dict[str, Dict[str, list]]
    sigma: CorrelationState
    passes: int = 0
    truncated: bool = False
    diagnostics: list = field(default_factory=list)

    def names(self, fid: str, vid: str) -> list:
        return self.pi.get(fid, {}).get(vid, [])

    def dump(self, n_in: Mapping) -> dict:
        """Debug document ``{fid: {vid: [{"src_fid", "src_vid", "name"}]}}`` in pi order."""
        out: dict = {}
        for fid, vid in sorted(self.sigma.keys()):
            triples = ordered_triples(fid, vid, self.sigma.get(fid, vid), n_in)
            if triples:
                out.setdefault(fid, {})[vid] = [t._asdict() for t in triples]
        return out


def init_state(b: BinaryProgram, n_in: NameMap) -> CorrelationState:
    sigma = {}
    for f in b.funcs:
        for vid in sorted(f.ids):
            name = n_in.get(f.fid, {}).get(vid)
            sigma[(f.fid, vid)] = frozenset({OriginTriple(f.fid, vid, name)}) if name else frozenset()
    return CorrelationState(sigma)


class _Analysis:
    def __init__(self, b: BinaryProgram, n_in: NameMap):
        self.b = b
        self.n_in = n_in
        # callee fid -> [(caller fid, dst vid)] for call sites that keep the result
        self.ret_sites: Dict[str, list] = {}
        for f in b.funcs:
            for c in ir.call_sites(f.body):
                if c.dst is not None and self.resolves(c):
                    self.ret_sites.setdefault(c.callee, []).append((f.fid, c.dst))
        for sites in self.ret_sites.values():
            sites.sort()

    def name(self, fid: str, vid: str) -> Optional[str]:
        return self.n_in.get(fid, {}).get(vid)

    def resolves(self, c: ir.Call) -> bool:
        return not c.external and c.callee in self.b

    def origin(self, fid: str, vid: str) -> frozenset:
        n = self.name(fid, vid)
        return frozenset({OriginTriple(fid, vid, n)}) if n else frozenset()

    def apply(self, st: CorrelationState, f: DecompiledFunction, s: ir.Stmt) -> bool:
        """Apply the rules for ``s`` to ``st`` in place; True if anything was added."""
        if isinstance(s, ir.Seq):
            changed = False
            for x in s.stmts:
                changed |= self.apply(st, f, x)
            return changed
        if isinstance(s, ir.Assign):
            if isinstance(s.lhs, ir.Var) and isinstance(s.rhs, ir.Var):
                dst, src = s.lhs.vid, s.rhs.vid
                changed = st.add(f.fid, dst, st.get(f.fid, src))
                changed |= st.add(f.fid, src, self.origin(f.fid, dst))
                return changed
            return False
        if isinstance(s, ir.Call):
            if not self.resolves(s):
                return False
            callee = self.b.func(s.callee)
            changed = False
            for arg, param in zip(s.args, callee.params):
                if isinstance(arg, ir.Var):
                    changed |= st.add(callee.fid, param, st.get(f.fid, arg.vid))
                    changed |= st.add(f.fid, arg.vid, self.origin(callee.fid, param))
            return changed
        if isinstance(s, ir.Return):
            if not isinstance(s.value, ir.Var):
                return False
            r = s.value.vid
            changed = False
            for caller, dst in self.ret_sites.get(f.fid, ()):
                changed |= st.add(caller, dst, st.get(f.fid, r))
                changed |= st.add(f.fid, r, self.origin(caller, dst))
            return changed
        if isinstance(s, ir.If):
            left, right = st.overlay(), st.overlay()
            self.apply(left, f, s.then)
            self.apply(right, f, s.orelse)
            changed = False
            for key in sorted(set(left.local) | set(right.local)):
                changed |= st.add(*key, left.get(*key) | right.get(*key))
            return changed
        if isinstance(s, ir.While):
            changed = False
            while self.apply(st, f, s.body):
                changed = True
            return changed
        return False


def apply_stmt(
    state: CorrelationState, f: DecompiledFunction, s: ir.Stmt, n_in: NameMap, b: BinaryProgram
) -> CorrelationState:
    """One application of the rules for ``s``; returns a new state."""
    out = state.flatten()
    _Analysis(b, n_in).apply(out, f, s)
    return out


def ordered_triples(fid: str, vid: str, triples, n_in: Mapping) -> list:
    """The variable's own initial name first, then by (src_fid, src_vid, name)."""
    own = n_in.get(fid, {}).get(vid)
    head = [t for t in triples if t == (fid, vid, own)]
    return head + sorted(t for t in triples if t != (fid, vid, own))


def correlated_names(b: BinaryProgram, n_current: NameMap, max_passes: Optional[int] = None) -> CorrelatedNames:
    """Saturate the rules over every function body and read out name lists.

    Passes are bounded by ``1 + number of variables`` unless ``max_passes``
    is given; hitting the bound sets ``truncated``.
    """
    analysis = _Analysis(b, n_current)
    st = init_state(b, n_current)
    bound = max_passes if max_passes is not None else 1 + sum(len(f.ids) for f in b.funcs)
    passes = 0
    changed = True
    while changed and passes < bound:
        passes += 1
        changed = False
        for f in b.funcs:
            changed |= analysis.apply(st, f, f.body)
    truncated = changed
    st = st.flatten()
    pi: Dict[str, Dict[str, list]] = {}
    for fid, vid in sorted(st.keys()):
        triples = st.get(fid, vid)
        if triples:
            pi.setdefault(fid, {})[vid] = [t.name for t in ordered_triples(fid, vid, triples, n_current)]
    diagnostics = [f"fixpoint bound of {bound} passes exceeded"] if truncated else []
    return CorrelatedNames(pi, st, passes, truncated, diagnostics)

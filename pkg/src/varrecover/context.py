"""Calling-context propagation and model query construction.

Names predicted for the callers and callees of a function are gathered into
two flat sets and rendered into the rename query for that function.  The
same machinery produces training records: the query carries context names
from a provider's predictions, the response carries the groundtruth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from string import Formatter
from typing import Iterable, Mapping, Optional, Tuple

from .core import BinaryProgram, DecompiledFunction, GLOBALS_FID, NameMap
from . import ir


@dataclass(frozen=True)
class ContextNames:
    caller_names: frozenset = frozenset()
    callee_names: frozenset = frozenset()

    @property
    def all(self) -> frozenset:
        return self.caller_names | self.callee_names

    def __bool__(self) -> bool:
        return bool(self.caller_names or self.callee_names)


DEFAULT_PREAMBLE = (
    "You are reverse engineering a stripped binary. Below is one decompiled "
    "function. Suggest a descriptive source-level name for each identifier "
    "listed after Q:, and answer with a JSON object that maps every listed "
    "identifier to one name."
)

DEFAULT_BODY = "{preamble}\n\n```c\n{code}```\n{context}Q:[{variables}]\n"

DEFAULT_CONTEXT = (
    "Names used by callers of this function: [{caller_names}]\n"
    "Names used by functions it calls: [{callee_names}]\n"
)


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class QueryTemplate:
    """Prompt layout.  ``body`` needs ``{code}``, ``{variables}`` and
    ``{context}``; ``context`` may use ``{caller_names}`` and ``{callee_names}``."""

    body: str = DEFAULT_BODY
    context: str = DEFAULT_CONTEXT
    preamble: str = DEFAULT_PREAMBLE

    def __post_init__(self):
        fields = {name for _, name, _, _ in Formatter().parse(self.body) if name}
        missing = {"code", "variables", "context"} - fields
        if missing:
            raise TemplateError(f"query template missing placeholders: {sorted(missing)}")

    @classmethod
    def from_doc(cls, doc: Mapping) -> "QueryTemplate":
        return cls(
            body=doc.get("body", DEFAULT_BODY),
            context=doc.get("context", DEFAULT_CONTEXT),
            preamble=doc.get("preamble", DEFAULT_PREAMBLE),
        )


@dataclass(frozen=True)
class Query:
    preamble: str
    code: str
    variables: tuple
    context: Optional[ContextNames] = None
    template: QueryTemplate = field(default_factory=QueryTemplate, compare=False)
    round_index: int = 1

    @property
    def text(self) -> str:
        ctx = ""
        if self.context:
            ctx = self.template.context.format(
                caller_names=",".join(sorted(self.context.caller_names)),
                callee_names=",".join(sorted(self.context.callee_names)),
            )
        return self.template.body.format(
            preamble=self.preamble, code=self.code, variables=",".join(self.variables), context=ctx
        )


def _names_of(n: Mapping, fids: Iterable[str]) -> frozenset:
    return frozenset(name for fid in fids for name in n.get(fid, {}).values())


def caller_ctx(b: BinaryProgram, n: NameMap, f: DecompiledFunction) -> frozenset:
    return _names_of(n, b.callers(f.fid))


def callee_ctx(b: BinaryProgram, n: NameMap, f: DecompiledFunction) -> frozenset:
    return _names_of(n, b.callees(f.fid))


def ctx(b: BinaryProgram, n: NameMap, f: DecompiledFunction) -> ContextNames:
    return ContextNames(caller_ctx(b, n, f), callee_ctx(b, n, f))


def query_variables(f: DecompiledFunction) -> tuple:
    """Parameters in declaration order, then the remaining ids sorted."""
    return tuple(f.params) + tuple(f.locals)


def build_query(
    f: DecompiledFunction,
    context: Optional[ContextNames] = None,
    template: Optional[QueryTemplate] = None,
    round_index: int = 1,
) -> Query:
    template = template or QueryTemplate()
    code = f.raw_text if f.raw_text is not None else ir.print_function(f.fid, f.params, f.body)
    if not code.endswith("\n"):
        code += "\n"
    return Query(template.preamble, code, query_variables(f), context or None, template, round_index)


def export_training_corpus(
    dataset, n_pred: Mapping[str, NameMap], template: Optional[QueryTemplate] = None
) -> Tuple[list, int]:
    """One ``{"query", "resp"}`` record per function with groundtruth.

    ``dataset`` is a list of ``(binary, groundtruth map)``; ``n_pred`` maps a
    binary id to the predicted names used for context.  Returns the records
    and the number of functions skipped for lack of groundtruth.
    """
    records = []
    skipped = 0
    for b, gt in dataset:
        pred = n_pred.get(b.bid, {})
        for f in b.funcs:
            resp = gt.get(f.fid)
            if not resp or f.fid == GLOBALS_FID:
                skipped += 1
                continue
            q = build_query(f, ctx(b, pred, f), template)
            records.append({"query": q.text, "resp": {v: resp[v] for v in sorted(resp)}})
    return records, skipped

"""Simplified statement language that correlation extraction runs on.

Every expression is either a direct use of a variable (:class:`Var`) or an
opaque :class:`Other`.  Statements cover sequencing, assignment, calls,
returns, loops and conditionals; anything else lowers to :class:`Skip`.

The module also owns the JSON encoding of the IR (``{"t": "assign", ...}``)
and a canonical pretty-printer whose output the C parser reads back to the
same tree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterator, Optional, Union


@dataclass(frozen=True)
class Var:
    vid: str


@dataclass(frozen=True)
class Other:
    # diagnostic payload only; two Others always compare equal
    text: str = field(default="", compare=False)
    vids: frozenset = field(default=frozenset(), compare=False)


Expr = Union[Var, Other]


@dataclass(frozen=True)
class Skip:
    """A statement the analysis ignores (empty block, break, goto, asm, ...)."""

    note: str = field(default="", compare=False)


@dataclass(frozen=True)
class Seq:
    stmts: tuple


@dataclass(frozen=True)
class Assign:
    lhs: Expr
    rhs: Expr


@dataclass(frozen=True)
class Call:
    dst: Optional[str]
    callee: str
    args: tuple = ()
    external: bool = False


@dataclass(frozen=True)
class Return:
    value: Optional[Expr] = None


@dataclass(frozen=True)
class While:
    cond: Expr
    body: "Stmt"


@dataclass(frozen=True)
class If:
    cond: Expr
    then: "Stmt"
    orelse: "Stmt" = field(default_factory=Skip)


Stmt = Union[Skip, Seq, Assign, Call, Return, While, If]


class IRDecodeError(ValueError):
    pass


def seq(*stmts: Stmt) -> Stmt:
    """Build a normalized sequence: nested sequences flattened, skips dropped."""
    flat: list = []
    for s in stmts:
        if isinstance(s, Seq):
            flat.extend(s.stmts)
        elif not isinstance(s, Skip):
            flat.append(s)
    if not flat:
        return Skip()
    if len(flat) == 1:
        return flat[0]
    return Seq(tuple(flat))


def iter_stmts(stmt: Stmt) -> Iterator[Stmt]:
    """Yield every statement node in pre-order."""
    yield stmt
    if isinstance(stmt, Seq):
        for s in stmt.stmts:
            yield from iter_stmts(s)
    elif isinstance(stmt, While):
        yield from iter_stmts(stmt.body)
    elif isinstance(stmt, If):
        yield from iter_stmts(stmt.then)
        yield from iter_stmts(stmt.orelse)


def _expr_vids(e: Optional[Expr]) -> Iterator[str]:
    if isinstance(e, Var):
        yield e.vid


def stmt_vids(stmt: Stmt) -> set:
    """All variable ids occurring in Var nodes or call destinations."""
    out: set = set()
    for s in iter_stmts(stmt):
        if isinstance(s, Assign):
            out.update(_expr_vids(s.lhs))
            out.update(_expr_vids(s.rhs))
        elif isinstance(s, Call):
            if s.dst is not None:
                out.add(s.dst)
            for a in s.args:
                out.update(_expr_vids(a))
        elif isinstance(s, Return):
            out.update(_expr_vids(s.value))
        elif isinstance(s, (While, If)):
            out.update(_expr_vids(s.cond))
    return out


def call_sites(stmt: Stmt) -> list:
    return [s for s in iter_stmts(stmt) if isinstance(s, Call)]


# -- JSON encoding -----------------------------------------------------------


def expr_to_doc(e: Expr) -> dict:
    if isinstance(e, Var):
        return {"t": "var", "id": e.vid}
    doc: dict = {"t": "other"}
    if e.text:
        doc["text"] = e.text
    return doc


def stmt_to_doc(s: Stmt) -> dict:
    if isinstance(s, Seq):
        return {"t": "seq", "body": [stmt_to_doc(x) for x in s.stmts]}
    if isinstance(s, Assign):
        return {"t": "assign", "lhs": expr_to_doc(s.lhs), "rhs": expr_to_doc(s.rhs)}
    if isinstance(s, Call):
        doc = {
            "t": "call",
            "dst": s.dst,
            "callee": s.callee,
            "args": [expr_to_doc(a) for a in s.args],
        }
        if s.external:
            doc["external"] = True
        return doc
    if isinstance(s, Return):
        return {"t": "return", "value": None if s.value is None else expr_to_doc(s.value)}
    if isinstance(s, While):
        return {"t": "while", "cond": expr_to_doc(s.cond), "body": stmt_to_doc(s.body)}
    if isinstance(s, If):
        return {
            "t": "if",
            "cond": expr_to_doc(s.cond),
            "then": stmt_to_doc(s.then),
            "else": stmt_to_doc(s.orelse),
        }
    if isinstance(s, Skip):
        return {"t": "skip"}
    raise TypeError(f"not an IR statement: {s!r}")


def _need(doc: Any, key: str, where: str) -> Any:
    if not isinstance(doc, dict) or key not in doc:
        raise IRDecodeError(f"{where}: missing field {key!r}")
    return doc[key]


def expr_from_doc(doc: Any) -> Expr:
    tag = _need(doc, "t", "expr")
    if tag == "var":
        vid = _need(doc, "id", "var")
        if not isinstance(vid, str) or not vid:
            raise IRDecodeError("var: id must be a non-empty string")
        return Var(vid)
    if tag == "other":
        return Other(text=str(doc.get("text", "")))
    raise IRDecodeError(f"unknown expression tag {tag!r}")


def stmt_from_doc(doc: Any) -> Stmt:
    tag = _need(doc, "t", "stmt")
    if tag == "seq":
        body = _need(doc, "body", "seq")
        if not isinstance(body, list):
            raise IRDecodeError("seq: body must be a list")
        return seq(*(stmt_from_doc(x) for x in body))
    if tag == "assign":
        return Assign(expr_from_doc(_need(doc, "lhs", "assign")), expr_from_doc(_need(doc, "rhs", "assign")))
    if tag == "call":
        dst = doc.get("dst")
        if dst is not None and (not isinstance(dst, str) or not dst):
            raise IRDecodeError("call: dst must be a non-empty string or null")
        callee = _need(doc, "callee", "call")
        if not isinstance(callee, str) or not callee:
            raise IRDecodeError("call: callee must be a non-empty string")
        args = doc.get("args", [])
        if not isinstance(args, list):
            raise IRDecodeError("call: args must be a list")
        return Call(dst, callee, tuple(expr_from_doc(a) for a in args), bool(doc.get("external", False)))
    if tag == "return":
        value = doc.get("value")
        return Return(None if value is None else expr_from_doc(value))
    if tag == "while":
        return While(expr_from_doc(_need(doc, "cond", "while")), stmt_from_doc(_need(doc, "body", "while")))
    if tag == "if":
        orelse = doc.get("else")
        return If(
            expr_from_doc(_need(doc, "cond", "if")),
            stmt_from_doc(_need(doc, "then", "if")),
            Skip() if orelse is None else stmt_from_doc(orelse),
        )
    if tag == "skip":
        return Skip()
    raise IRDecodeError(f"unknown statement tag {tag!r}")


# -- pretty-printer ----------------------------------------------------------


def _pexpr(e: Optional[Expr]) -> str:
    return e.vid if isinstance(e, Var) else "0"


def _plvalue(e: Expr) -> str:
    return e.vid if isinstance(e, Var) else "*0"


def _block(body: Stmt, depth: int) -> list:
    return [line for s in (body.stmts if isinstance(body, Seq) else (body,)) for line in _pstmt(s, depth)]


def _pstmt(s: Stmt, depth: int) -> list:
    pad = "  " * depth
    if isinstance(s, Skip):
        return []
    if isinstance(s, Seq):
        return _block(s, depth)
    if isinstance(s, Assign):
        return [f"{pad}{_plvalue(s.lhs)} = {_pexpr(s.rhs)};"]
    if isinstance(s, Call):
        call = f"{s.callee}({', '.join(_pexpr(a) for a in s.args)})"
        return [f"{pad}{s.dst} = {call};" if s.dst is not None else f"{pad}{call};"]
    if isinstance(s, Return):
        return [f"{pad}return;" if s.value is None else f"{pad}return {_pexpr(s.value)};"]
    if isinstance(s, While):
        return [f"{pad}while ({_pexpr(s.cond)}) {{", *_block(s.body, depth + 1), f"{pad}}}"]
    if isinstance(s, If):
        lines = [f"{pad}if ({_pexpr(s.cond)}) {{", *_block(s.then, depth + 1)]
        if isinstance(s.orelse, Skip):
            lines.append(f"{pad}}}")
        else:
            lines += [f"{pad}}} else {{", *_block(s.orelse, depth + 1), f"{pad}}}"]
        return lines
    raise TypeError(f"not an IR statement: {s!r}")


def print_function(fid: str, params, body: Stmt) -> str:
    """Render IR as C source that :func:`varrecover.parser.parse_function` reads back identically."""
    sig = ", ".join(f"int {p}" for p in params)
    return "\n".join([f"int {fid}({sig})", "{", *_block(body, 1), "}"]) + "\n"

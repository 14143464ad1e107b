"""Parse decompiler-style C into the simplified statement IR.

The surface grammar is the C99 statement/expression subset that Hex-Rays
emits.  Lowering keeps only what matters for name correlation:

* an expression is a :class:`~varrecover.ir.Var` only when it is a bare
  identifier (casts and parentheses stripped); everything else is ``Other``;
* calls nested inside larger expressions are hoisted into their own
  ``Call`` statements (destination absent) ahead of the enclosing statement;
* ``for``/``do``/``switch`` are desugared into ``While``/``If``;
* ``break``, ``continue``, ``goto``, labels and inline assembly become
  ``Skip``.

Declarations are recognised heuristically (type keywords, IDA type names,
``T *name`` shapes) since no typedef table is available.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, List, Mapping, Optional, Tuple

from . import ir
from .core import DecompiledFunction


class ParseError(ValueError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {message}" if line else message)
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Token:
    kind: str  # ident | number | string | char | op
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\f\v]+)
  | (?P<nl>\n)
  | (?P<lcomment>//[^\n]*)
  | (?P<bcomment>/\*)
  | (?P<pp>\#[^\n]*)
  | (?P<loc>@<[^>\n]*>)
  | (?P<number>0[xX][0-9A-Fa-f]+[uUlL]*(?:i(?:8|16|32|64))?
      | (?:\d+\.\d*|\.\d+)(?:[eE][+-]?\d+)?[fFlL]?
      | \d+(?:[eE][+-]?\d+)?[uUlLfF]*(?:i(?:8|16|32|64))?)
  | (?P<ident>[A-Za-z_$][A-Za-z0-9_$]*(?:::~?[A-Za-z_$][A-Za-z0-9_$]*)*)
  | (?P<string>L?"(?:\\.|[^"\\\n])*")
  | (?P<char>L?'(?:\\.|[^'\\\n])+')
  | (?P<op>\.\.\.|>>=|<<=|->|\+\+|--|<<|>>|<=|>=|==|!=|&&|\|\||\+=|-=|\*=|/=|%=|&=|\^=|\|=|[{}()\[\];,.?:+\-*/%&|^!~<>=])
    """,
    re.VERBOSE,
)

_OPEN = {"(": ")", "[": "]", "{": "}"}
_CLOSE = {v: k for k, v in _OPEN.items()}


def tokenize(source: str) -> List[Token]:
    """Lex C source into tokens; comments and preprocessor lines are dropped."""
    toks: List[Token] = []
    pos, line, line_start = 0, 1, 0
    n = len(source)
    while pos < n:
        m = _TOKEN_RE.match(source, pos)
        col = pos - line_start + 1
        if m is None:
            if source[pos] in "\"'":
                raise ParseError("unterminated literal", line, col)
            raise ParseError(f"unexpected character {source[pos]!r}", line, col)
        kind = m.lastgroup
        text = m.group()
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "bcomment":
            end = source.find("*/", m.end())
            if end < 0:
                raise ParseError("unterminated comment", line, col)
            chunk = source[pos : end + 2]
            nls = chunk.count("\n")
            if nls:
                line += nls
                line_start = pos + chunk.rfind("\n") + 1
            pos = end + 2
            continue
        elif kind not in ("ws", "lcomment", "pp", "loc"):
            toks.append(Token(kind, text, line, col))
        pos = m.end()
    _check_balanced(toks)
    return toks


def _check_balanced(toks: List[Token]) -> None:
    stack: List[Token] = []
    for t in toks:
        if t.kind != "op":
            continue
        if t.text in _OPEN:
            stack.append(t)
        elif t.text in _CLOSE:
            if not stack:
                raise ParseError(f"unbalanced {t.text!r}", t.line, t.col)
            top = stack.pop()
            if _OPEN[top.text] != t.text:
                raise ParseError(f"{t.text!r} does not close {top.text!r} from line {top.line}", t.line, t.col)
    if stack:
        t = stack[-1]
        raise ParseError(f"unclosed {t.text!r}", t.line, t.col)


# -- vocabulary ----------------------------------------------------------------

TYPE_WORDS = frozenset(
    """
    void char short int long float double signed unsigned bool _Bool size_t ssize_t
    __int8 __int16 __int32 __int64 __int128 _BYTE _WORD _DWORD _QWORD _OWORD _TBYTE
    _BOOL1 _BOOL2 _BOOL4 _BOOL8 _UNKNOWN BYTE WORD DWORD QWORD BOOL FILE wchar_t
    __m64 __m128 __m128i __m128d __m256 __m256i __m256d
    """.split()
)
QUALIFIERS = frozenset(
    """
    const volatile static register extern inline restrict __restrict __unaligned
    __cdecl __stdcall __fastcall __thiscall __usercall __userpurge __noreturn __hidden __return_ptr
    __struct_ptr __spoils __ptr32 __ptr64 __far __near __shifted
    """.split()
)
TAG_WORDS = frozenset({"struct", "union", "enum"})
KEYWORDS = frozenset(
    "if else while do for switch case default return break continue goto sizeof __asm __asm__ asm".split()
)

#: Hex-Rays helper macros; their results are opaque to the analysis.
HELPER_MACROS = frozenset(
    """
    LOBYTE HIBYTE LOWORD HIWORD LODWORD HIDWORD BYTE1 BYTE2 BYTE3 BYTE4 BYTE5 BYTE6 BYTE7
    WORD1 WORD2 WORD3 DWORD1 DWORD2 SLOBYTE SHIBYTE SLOWORD SHIWORD SLODWORD SHIDWORD
    SBYTE1 SBYTE2 SBYTE3 SWORD1 SWORD2 __PAIR16__ __PAIR32__ __PAIR64__ __PAIR128__
    __ROL1__ __ROL2__ __ROL4__ __ROL8__ __ROR1__ __ROR2__ __ROR4__ __ROR8__
    __CFADD__ __CFSHL__ __CFSHR__ __OFADD__ __OFSUB__ __SETP__ __MKCADD__ __MKCSHL__ __MKCSHR__
    COERCE_FLOAT COERCE_DOUBLE COERCE_UNSIGNED_INT COERCE_UNSIGNED_INT64 __readfsqword __writefsqword
    __readgsqword __rdtsc __halt _byteswap_ulong _byteswap_uint64 __bswap_32 __bswap_64
    abs8 abs16 abs32 abs64 qmemcpy
    """.split()
)


def _typeish(name: str) -> bool:
    return name in TYPE_WORDS or name in QUALIFIERS or name.endswith("_t")


# -- expression AST --------------------------------------------------------------


@dataclass
class _E:
    kind: str  # name lit call cast unary post binary assign ternary index member comma sizeof
    parts: tuple = ()
    op: str = ""
    text: str = ""
    tok: Optional[Token] = None


_BINARY_PREC = {
    "||": 1, "&&": 2, "|": 3, "^": 4, "&": 5, "==": 6, "!=": 6,
    "<": 7, ">": 7, "<=": 7, ">=": 7, "<<": 8, ">>": 8, "+": 9, "-": 9, "*": 10, "/": 10, "%": 10,
}
_ASSIGN_OPS = frozenset({"=", "+=", "-=", "*=", "/=", "%=", "&=", "^=", "|=", "<<=", ">>="})
_UNARY_OPS = frozenset({"-", "+", "!", "~", "*", "&"})


@dataclass
class _Ctx:
    fid: str
    known_fids: frozenset
    ids: set = field(default_factory=set)
    notes: List[str] = field(default_factory=list)


class _Parser:
    def __init__(self, toks: List[Token], ctx: _Ctx):
        self.toks = toks
        self.i = 0
        self.ctx = ctx

    # token helpers
    def peek(self, k: int = 0) -> Optional[Token]:
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else None

    def at(self, text: str, k: int = 0) -> bool:
        t = self.peek(k)
        return t is not None and t.text == text and t.kind in ("op", "ident")

    def next(self) -> Token:
        t = self.peek()
        if t is None:
            last = self.toks[-1] if self.toks else None
            raise ParseError("unexpected end of input", last.line if last else 0, last.col if last else 0)
        self.i += 1
        return t

    def expect(self, text: str) -> Token:
        t = self.peek()
        if t is None or t.text != text:
            where = t or (self.toks[-1] if self.toks else None)
            got = repr(t.text) if t else "end of input"
            raise ParseError(f"expected {text!r}, got {got}", where.line if where else 0, where.col if where else 0)
        self.i += 1
        return t

    def matching(self, j: int) -> int:
        """Index of the delimiter closing the one at ``j``."""
        depth = 0
        for k in range(j, len(self.toks)):
            t = self.toks[k]
            if t.kind == "op" and t.text in _OPEN:
                depth += 1
            elif t.kind == "op" and t.text in _CLOSE:
                depth -= 1
                if depth == 0:
                    return k
        raise ParseError("unbalanced delimiter", self.toks[j].line, self.toks[j].col)

    def span_text(self, start: int, end: int) -> str:
        return " ".join(t.text for t in self.toks[start:end])

    # -- expressions -------------------------------------------------------------

    def expression(self) -> _E:
        start = self.i
        first = self.assignment()
        if not self.at(","):
            return first
        items = [first]
        while self.at(","):
            self.next()
            items.append(self.assignment())
        return _E("comma", tuple(items), text=self.span_text(start, self.i))

    def assignment(self) -> _E:
        start = self.i
        lhs = self.ternary()
        t = self.peek()
        if t is not None and t.kind == "op" and t.text in _ASSIGN_OPS:
            self.next()
            rhs = self.assignment()
            return _E("assign", (lhs, rhs), op=t.text, text=self.span_text(start, self.i))
        return lhs

    def ternary(self) -> _E:
        start = self.i
        cond = self.binary(1)
        if self.at("?"):
            self.next()
            a = self.expression()
            self.expect(":")
            b = self.assignment()
            return _E("ternary", (cond, a, b), text=self.span_text(start, self.i))
        return cond

    def binary(self, min_prec: int) -> _E:
        start = self.i
        lhs = self.unary()
        while True:
            t = self.peek()
            prec = _BINARY_PREC.get(t.text) if t is not None and t.kind == "op" else None
            if prec is None or prec < min_prec:
                return lhs
            self.next()
            rhs = self.binary(prec + 1)
            lhs = _E("binary", (lhs, rhs), op=t.text, text=self.span_text(start, self.i))

    def _cast_end(self) -> Optional[int]:
        """If a cast starts at the current '(' return the index of its ')'."""
        j = self.i
        close = self.matching(j)
        inner = self.toks[j + 1 : close]
        if not inner:
            return None
        allowed = all(t.kind == "ident" or t.text in ("*", "&", "(", ")", "[", "]", ",", "...") or t.kind == "number"
                      for t in inner)
        if not allowed:
            return None
        head = inner[0]
        after = self.toks[close + 1] if close + 1 < len(self.toks) else None
        if after is None or not _starts_operand(after):
            return None
        if head.kind == "ident" and (head.text in TAG_WORDS or _typeish(head.text)):
            return close
        if head.kind == "ident" and len(inner) > 1 and all(t.text == "*" for t in inner[1:]):
            return close
        return None

    def unary(self) -> _E:
        start = self.i
        t = self.peek()
        if t is None:
            return self.primary()
        if t.kind == "op" and t.text in ("++", "--"):
            self.next()
            operand = self.unary()
            return _E("unary", (operand,), op=t.text, text=self.span_text(start, self.i))
        if t.kind == "op" and t.text in _UNARY_OPS:
            self.next()
            operand = self.unary()
            return _E("unary", (operand,), op=t.text, text=self.span_text(start, self.i))
        if t.kind == "ident" and t.text == "sizeof":
            self.next()
            if self.at("(") and self._sizeof_type():
                self.i = self.matching(self.i) + 1
                return _E("sizeof", (), text=self.span_text(start, self.i))
            operand = self.unary()
            return _E("sizeof", (operand,), text=self.span_text(start, self.i))
        if t.kind == "op" and t.text == "(":
            close = self._cast_end()
            if close is not None:
                self.i = close + 1
                operand = self.unary()
                return _E("cast", (operand,), text=self.span_text(start, self.i))
        return self.postfix()

    def _sizeof_type(self) -> bool:
        close = self.matching(self.i)
        inner = self.toks[self.i + 1 : close]
        return bool(inner) and inner[0].kind == "ident" and (inner[0].text in TAG_WORDS or _typeish(inner[0].text)) \
            or (len(inner) > 1 and all(t.text == "*" for t in inner[1:]))

    def postfix(self) -> _E:
        start = self.i
        e = self.primary()
        while True:
            t = self.peek()
            if t is None or t.kind != "op":
                return e
            if t.text == "(":
                self.next()
                args = []
                if not self.at(")"):
                    args.append(self.assignment())
                    while self.at(","):
                        self.next()
                        args.append(self.assignment())
                self.expect(")")
                e = _E("call", (e, *args), text=self.span_text(start, self.i), tok=t)
            elif t.text == "[":
                self.next()
                idx = self.expression()
                self.expect("]")
                e = _E("index", (e, idx), text=self.span_text(start, self.i))
            elif t.text in (".", "->"):
                self.next()
                fld = self.next()
                if fld.kind != "ident":
                    raise ParseError("expected member name", fld.line, fld.col)
                e = _E("member", (e,), op=t.text, text=self.span_text(start, self.i))
            elif t.text in ("++", "--"):
                self.next()
                e = _E("post", (e,), op=t.text, text=self.span_text(start, self.i))
            else:
                return e

    def primary(self) -> _E:
        t = self.next()
        if t.kind == "ident":
            if t.text in KEYWORDS:
                raise ParseError(f"unexpected keyword {t.text!r}", t.line, t.col)
            return _E("name", text=t.text, tok=t)
        if t.kind in ("number", "string", "char"):
            text = t.text
            while t.kind == "string" and self.peek() is not None and self.peek().kind == "string":
                text += " " + self.next().text
            return _E("lit", text=text, tok=t)
        if t.text == "(":
            e = self.expression()
            self.expect(")")
            return _E("paren", (e,), text=e.text)
        if t.text == "{":
            # compound literal / initializer list in expression position
            self.i = self.matching(self.i - 1) + 1
            return _E("lit", text="{...}", tok=t)
        raise ParseError(f"unexpected token {t.text!r}", t.line, t.col)

    # -- lowering ----------------------------------------------------------------

    def strip(self, e: _E) -> _E:
        while e.kind in ("cast", "paren"):
            e = e.parts[0]
        return e

    def var_of(self, e: _E) -> Optional[ir.Var]:
        e = self.strip(e)
        if e.kind == "name" and e.text not in self.ctx.known_fids:
            self.ctx.ids.add(e.text)
            return ir.Var(e.text)
        return None

    def collect_names(self, e: _E, out: set) -> None:
        if e.kind == "name":
            if e.text not in self.ctx.known_fids:
                out.add(e.text)
            return
        parts = e.parts
        if e.kind == "call":
            callee = self.strip(parts[0])
            parts = parts[1:] if callee.kind == "name" else parts
        for p in parts:
            self.collect_names(p, out)

    def other(self, e: _E) -> ir.Other:
        names: set = set()
        self.collect_names(e, names)
        self.ctx.ids.update(names)
        return ir.Other(text=e.text, vids=frozenset(names))

    def lower_call(self, e: _E, dst: Optional[str]) -> Tuple[list, Optional[ir.Call]]:
        """Lower a call; returns hoisted statements and the call (None for helper macros)."""
        callee = self.strip(e.parts[0])
        pre: list = []
        args = []
        for a in e.parts[1:]:
            p, x = self.lower_value(a)
            pre += p
            args.append(x)
        if callee.kind == "name" and callee.text in HELPER_MACROS:
            self.ctx.notes.append(f"helper macro {callee.text} lowered to Other")
            return pre, None
        if callee.kind == "name":
            name = callee.text
            return pre, ir.Call(dst, name, tuple(args), name not in self.ctx.known_fids)
        p, _ = self.lower_value(callee)
        self.ctx.notes.append(f"indirect call through {callee.text!r} treated as external")
        return pre + p, ir.Call(dst, callee.text or "<indirect>", tuple(args), True)

    def lower_value(self, e: _E) -> Tuple[list, ir.Expr]:
        """Lower an expression in value position: (hoisted statements, Expr)."""
        s = self.strip(e)
        if s.kind == "name":
            v = self.var_of(s)
            return [], v if v is not None else ir.Other(text=s.text)
        if s.kind == "call":
            pre, call = self.lower_call(s, None)
            if call is not None:
                pre.append(call)
            return pre, self.other(s)
        if s.kind == "assign":
            pre = self.lower_assign(s)
            target = self.var_of(s.parts[0]) if s.op == "=" else None
            return pre, target if target is not None else self.other(s)
        if s.kind == "comma":
            pre: list = []
            last: ir.Expr = ir.Other()
            for item in s.parts:
                p, last = self.lower_value(item)
                pre += p
            return pre, last
        if s.kind in ("unary", "post") and s.op in ("++", "--"):
            return self.lower_incdec(s), self.other(s)
        pre = []
        for part in s.parts:
            pre += self.lower_value(part)[0]
        return pre, self.other(s)

    def lower_incdec(self, e: _E) -> list:
        target = self.var_of(e.parts[0])
        if target is not None:
            return [ir.Assign(target, ir.Other(text=e.text))]
        pre = self.lower_value(e.parts[0])[0]
        return pre

    def lower_lvalue(self, e: _E) -> Tuple[list, ir.Expr]:
        v = self.var_of(e)
        if v is not None:
            return [], v
        s = self.strip(e)
        pre = []
        if s.kind == "call":
            c = self.strip(s.parts[0])
            if c.kind == "name" and c.text in HELPER_MACROS:
                self.ctx.notes.append(f"helper macro {c.text} lowered to Other")
            for a in s.parts[1:]:
                pre += self.lower_value(a)[0]
        else:
            for part in s.parts:
                pre += self.lower_value(part)[0]
        return pre, self.other(s)

    def lower_assign(self, e: _E) -> list:
        lhs_e, rhs_e = e.parts
        pre, lhs = self.lower_lvalue(lhs_e)
        rhs_s = self.strip(rhs_e)
        if e.op == "=" and rhs_s.kind == "call":
            p, call = self.lower_call(rhs_s, lhs.vid if isinstance(lhs, ir.Var) else None)
            if call is not None:
                if isinstance(lhs, ir.Var):
                    return pre + p + [call]
                return pre + p + [call, ir.Assign(lhs, self.other(rhs_s))]
            return pre + p + [ir.Assign(lhs, self.other(rhs_s))]
        p, rhs = self.lower_value(rhs_e)
        if e.op != "=":
            rhs = self.other(e)
        return pre + p + [ir.Assign(lhs, rhs)]

    def lower_expr_stmt(self, e: _E) -> list:
        s = self.strip(e)
        if s.kind == "assign":
            return self.lower_assign(s)
        if s.kind == "call":
            pre, call = self.lower_call(s, None)
            return pre + ([call] if call is not None else [])
        if s.kind in ("unary", "post") and s.op in ("++", "--"):
            return self.lower_incdec(s)
        if s.kind == "comma":
            out: list = []
            for item in s.parts:
                out += self.lower_expr_stmt(item)
            return out
        return self.lower_value(s)[0]

    def condition(self) -> Tuple[list, ir.Expr]:
        self.expect("(")
        if self.at(")"):
            raise ParseError("empty condition", self.peek().line, self.peek().col)
        e = self.expression()
        self.expect(")")
        pre, value = self.lower_value(e)
        return pre, _as_cond(value)

    # -- statements ----------------------------------------------------------------

    def block(self) -> ir.Stmt:
        self.expect("{")
        stmts = []
        while not self.at("}"):
            if self.peek() is None:
                raise ParseError("unexpected end of input in block")
            stmts.append(self.statement())
        self.expect("}")
        return ir.seq(*stmts)

    def statement(self) -> ir.Stmt:
        t = self.peek()
        if t is None:
            raise ParseError("unexpected end of input")
        if t.text == "{" and t.kind == "op":
            return self.block()
        if t.text == ";" and t.kind == "op":
            self.next()
            return ir.Skip()
        if t.kind == "ident":
            word = t.text
            if word == "if":
                self.next()
                pre, cond = self.condition()
                then = self.statement()
                orelse: ir.Stmt = ir.Skip()
                if self.at("else"):
                    self.next()
                    orelse = self.statement()
                return ir.seq(*pre, ir.If(cond, then, orelse))
            if word == "while":
                self.next()
                pre, cond = self.condition()
                body = self.statement()
                return ir.seq(*pre, ir.While(cond, ir.seq(body, *pre)))
            if word == "do":
                self.next()
                body = self.statement()
                self.expect("while")
                pre, cond = self.condition()
                self.expect(";")
                return ir.seq(body, *pre, ir.While(cond, ir.seq(body, *pre)))
            if word == "for":
                return self.for_stmt()
            if word == "switch":
                return self.switch_stmt()
            if word == "return":
                self.next()
                if self.at(";"):
                    self.next()
                    return ir.Return(None)
                e = self.expression()
                self.expect(";")
                pre, value = self.lower_value(e)
                return ir.seq(*pre, ir.Return(value))
            if word in ("break", "continue"):
                self.next()
                self.expect(";")
                return ir.Skip(word)
            if word == "goto":
                self.next()
                self.next()
                self.expect(";")
                return ir.Skip("goto")
            if word in ("__asm", "__asm__", "asm"):
                return self.asm_stmt()
            if word in ("case", "default"):
                raise ParseError(f"{word!r} outside switch", t.line, t.col)
            nxt = self.peek(1)
            if nxt is not None and nxt.text == ":" and word not in KEYWORDS:
                self.i += 2
                if self.at("}"):
                    return ir.Skip("label")
                return self.statement()
            if self.is_declaration():
                return self.declaration()
        e = self.expression()
        self.expect(";")
        return ir.seq(*self.lower_expr_stmt(e))

    def for_stmt(self) -> ir.Stmt:
        self.next()
        self.expect("(")
        if self.at(";"):
            self.next()
            init: ir.Stmt = ir.Skip()
        elif self.peek().kind == "ident" and self.is_declaration():
            init = self.declaration()
        else:
            e = self.expression()
            self.expect(";")
            init = ir.seq(*self.lower_expr_stmt(e))
        if self.at(";"):
            pre, cond = [], ir.Other(text="1")
        else:
            e = self.expression()
            pre, cond = self.lower_value(e)
            cond = _as_cond(cond)
        self.expect(";")
        step: ir.Stmt = ir.Skip()
        if not self.at(")"):
            step = ir.seq(*self.lower_expr_stmt(self.expression()))
        self.expect(")")
        body = self.statement()
        return ir.seq(init, *pre, ir.While(cond, ir.seq(body, step, *pre)))

    def switch_stmt(self) -> ir.Stmt:
        self.next()
        pre, _ = self.condition()
        self.expect("{")
        groups: List[Tuple[bool, list]] = []
        while not self.at("}"):
            if self.at("case"):
                self.next()
                self.ternary()
                self.expect(":")
                groups.append((False, []))
            elif self.at("default") and self.at(":", 1):
                self.i += 2
                groups.append((True, []))
            else:
                if self.peek() is None:
                    raise ParseError("unexpected end of input in switch")
                s = self.statement()
                if not groups:
                    groups.append((False, []))
                groups[-1][1].append(s)
        self.expect("}")
        default = next((ir.seq(*b) for is_def, b in groups if is_def), ir.Skip())
        cases = [ir.seq(*b) for is_def, b in groups if not is_def]
        out = default
        for body in reversed(cases):
            out = ir.If(ir.Other(text="case"), body, out)
        return ir.seq(*pre, out)

    def asm_stmt(self) -> ir.Stmt:
        t = self.next()
        while self.at("volatile") or self.at("__volatile__"):
            self.next()
        if self.at("{") or self.at("("):
            self.i = self.matching(self.i) + 1
        else:
            while self.peek() is not None and not self.at(";") and self.peek().line == t.line:
                self.next()
        if self.at(";"):
            self.next()
        self.ctx.notes.append(f"inline assembly at line {t.line} ignored")
        return ir.Skip("asm")

    def is_declaration(self) -> bool:
        t = self.peek()
        w = t.text
        if w in TAG_WORDS or _typeish(w):
            nxt = self.peek(1)
            # `size_t(x)`-style is never emitted; a typeish word followed by an
            # assignment/operator is a variable named like a type.
            return nxt is not None and (nxt.kind == "ident" or nxt.text in ("*", "("))
        k = 1
        while self.at("*", k):
            k += 1
        name = self.peek(k)
        after = self.peek(k + 1)
        return (
            name is not None
            and name.kind == "ident"
            and name.text not in KEYWORDS
            and after is not None
            and after.text in (";", "=", "[", ",")
        )

    def declaration(self) -> ir.Stmt:
        stmts: list = []
        seen_type = False
        while True:
            t = self.peek()
            if t is None:
                raise ParseError("unexpected end of input in declaration")
            if t.text == "*" or t.text in QUALIFIERS or t.text == "&":
                self.next()
                continue
            if t.text in TAG_WORDS:
                self.next()
                if self.peek() is not None and self.peek().kind == "ident":
                    self.next()
                if self.at("{"):
                    self.i = self.matching(self.i) + 1
                seen_type = True
                continue
            if t.text == "(":
                name = self.fnptr_declarator()
                stmts += self.declarator_tail(name)
            elif t.kind == "ident":
                nxt = self.peek(1)
                if seen_type and nxt is not None and nxt.text in (";", "=", "[", ",", ")", ":"):
                    self.next()
                    stmts += self.declarator_tail(t.text)
                else:
                    self.next()
                    seen_type = True
                    continue
            else:
                raise ParseError(f"unexpected {t.text!r} in declaration", t.line, t.col)
            if self.at(","):
                self.next()
                continue
            self.expect(";")
            return ir.seq(*stmts)

    def fnptr_declarator(self) -> str:
        close = self.matching(self.i)
        names = [t for t in self.toks[self.i + 1 : close] if t.kind == "ident" and t.text not in QUALIFIERS]
        if not names:
            t = self.peek()
            raise ParseError("declarator without a name", t.line, t.col)
        self.i = close + 1
        if self.at("("):
            self.i = self.matching(self.i) + 1
        return names[-1].text

    def declarator_tail(self, name: str) -> list:
        self.ctx.ids.add(name)
        while self.at("["):
            self.i = self.matching(self.i) + 1
        if self.at(":"):  # bit-field width, never emitted for locals but harmless
            self.next()
            self.next()
        if not self.at("="):
            return []
        self.next()
        if self.at("{"):
            self.i = self.matching(self.i) + 1
            return [ir.Assign(ir.Var(name), ir.Other(text="{...}"))]
        e = self.assignment()
        return self.lower_assign(_E("assign", (_E("name", text=name), e), op="=", text=e.text))


def _as_cond(e: ir.Expr) -> ir.Expr:
    # branch and loop conditions carry no name flow
    if isinstance(e, ir.Var):
        return ir.Other(text=e.vid, vids=frozenset({e.vid}))
    return e


def _starts_operand(t: Token) -> bool:
    if t.kind in ("ident", "number", "string", "char"):
        return t.text not in KEYWORDS or t.text == "sizeof"
    return t.text in ("(", "*", "&", "-", "+", "!", "~", "++", "--")


def _split_params(toks: List[Token]) -> List[List[Token]]:
    groups: List[List[Token]] = [[]]
    depth = 0
    for t in toks:
        if t.text in _OPEN:
            depth += 1
        elif t.text in _CLOSE:
            depth -= 1
        if t.text == "," and depth == 0:
            groups.append([])
        else:
            groups[-1].append(t)
    return [g for g in groups if g]


def _param_name(group: List[Token]) -> Optional[str]:
    if len(group) == 1 and group[0].text in ("void", "..."):
        return None
    for k, t in enumerate(group):
        # function-pointer parameter: `ret (__cc *name)(...)`
        if t.text == "(":
            depth, inner = 0, []
            for x in group[k:]:
                depth += x.text in _OPEN
                depth -= x.text in _CLOSE
                if depth == 0:
                    break
                inner.append(x)
            if any(x.text == "*" for x in inner):
                names = [x for x in inner if x.kind == "ident" and x.text not in QUALIFIERS]
                if names:
                    return names[-1].text
            break
    depth = 0
    last = None
    for t in group:
        if t.text in _OPEN:
            depth += 1
        elif t.text in _CLOSE:
            depth -= 1
        elif depth == 0 and t.kind == "ident" and t.text not in QUALIFIERS and t.text not in TAG_WORDS:
            last = t
    if last is None or (len(group) == 1 and _typeish(last.text)):
        return None
    return last.text


def parse_function(source: str, fid: str, known_fids: Iterable[str] = ()) -> DecompiledFunction:
    """Parse one decompiled function (signature plus body) into IR.

    ``known_fids`` names the functions of the enclosing binary; calls to any
    other name are marked external.
    """
    toks = tokenize(source)
    brace = next((k for k, t in enumerate(toks) if t.kind == "op" and t.text == "{"), None)
    if brace is None or brace == 0 or toks[brace - 1].text != ")":
        where = toks[0] if toks else None
        raise ParseError("missing function signature", where.line if where else 1, where.col if where else 1)
    close = brace - 1
    depth = 0
    open_idx = None
    for k in range(close, -1, -1):
        if toks[k].text == ")":
            depth += 1
        elif toks[k].text == "(":
            depth -= 1
            if depth == 0:
                open_idx = k
                break
    if open_idx is None or open_idx == 0 or toks[open_idx - 1].kind != "ident":
        t = toks[close]
        raise ParseError("missing function signature", t.line, t.col)
    params = [p for p in (_param_name(g) for g in _split_params(toks[open_idx + 1 : close])) if p is not None]
    ctx = _Ctx(fid, frozenset(known_fids) | {fid})
    ctx.ids.update(params)
    p = _Parser(toks, ctx)
    p.i = brace
    body = p.block()
    if p.peek() is not None and not p.at(";"):
        t = p.peek()
        raise ParseError(f"unexpected {t.text!r} after function body", t.line, t.col)
    if fid in ctx.ids:
        ctx.ids.discard(fid)
    return DecompiledFunction(
        fid=fid,
        params=tuple(params),
        body=body,
        ids=frozenset(ctx.ids),
        raw_text=source,
        diagnostics=tuple(ctx.notes),
    )


def desugar(source: str, known_fids: Iterable[str] = ()) -> ir.Stmt:
    """Lower a sequence of C statements (no signature) to IR."""
    toks = tokenize("{" + source + "\n}")
    p = _Parser(toks, _Ctx("<fragment>", frozenset(known_fids)))
    return p.block()


def count_other(stmt: ir.Stmt) -> int:
    """Number of Other expressions in a lowered body (parse diagnostics)."""
    n = 0
    for s in ir.iter_stmts(stmt):
        exprs: list = []
        if isinstance(s, ir.Assign):
            exprs = [s.lhs, s.rhs]
        elif isinstance(s, ir.Call):
            exprs = list(s.args)
        elif isinstance(s, ir.Return) and s.value is not None:
            exprs = [s.value]
        elif isinstance(s, (ir.While, ir.If)):
            exprs = [s.cond]
        n += sum(isinstance(e, ir.Other) for e in exprs)
    return n


def rename_source(source: str, renames: Mapping[str, str]) -> str:
    """Substitute identifiers in ``source``; layout, comments and literals are kept."""
    out = []
    pos, n = 0, len(source)
    while pos < n:
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            out.append(source[pos])
            pos += 1
            continue
        if m.lastgroup == "bcomment":
            end = source.find("*/", m.end())
            end = n if end < 0 else end + 2
            out.append(source[pos:end])
            pos = end
            continue
        text = m.group()
        out.append(renames.get(text, text) if m.lastgroup == "ident" else text)
        pos = m.end()
    return "".join(out)

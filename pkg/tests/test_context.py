from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from gen import random_binary, random_names, seeded
from varrecover import ir
from varrecover.context import (
    ContextNames,
    QueryTemplate,
    TemplateError,
    build_query,
    callee_ctx,
    caller_ctx,
    ctx,
    export_training_corpus,
)
from varrecover.core import BinaryProgram, DecompiledFunction, load_binary, read_json

FIX = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="module")
def demo():
    return load_binary(read_json(FIX / "ctxdemo.json")), read_json(FIX / "ctxdemo.names.json")


def fn(fid, params=(), locals_=()):
    return DecompiledFunction(fid, tuple(params), ir.Skip(), frozenset(params) | frozenset(locals_), None)


def prog(funcs, edges):
    return BinaryProgram("b", tuple(funcs), frozenset(edges))


def test_caller_and_callee_context(demo):
    b, n = demo
    foo = b.func("foo")
    assert caller_ctx(b, n, foo) == {"err_msg", "err_location", "fd", "buf"}
    assert callee_ctx(b, n, foo) == {"fp"}
    assert ctx(b, n, foo) == ContextNames(frozenset({"err_msg", "err_location", "fd", "buf"}), frozenset({"fp"}))


def test_isolated_function():
    b = prog([fn("f")], [])
    assert ctx(b, {"f": {"a": "x"}}, b.func("f")) == ContextNames()
    assert not ctx(b, {}, b.func("f"))


def test_set_semantics():
    b = prog([fn("f"), fn("c1"), fn("c2"), fn("g1"), fn("g2")],
             [("c1", "f"), ("c2", "f"), ("f", "g1"), ("f", "g2")])
    n = {"c1": {"x": "size"}, "c2": {"y": "size"}, "g1": {"a": "len"}, "g2": {"a": "len", "b": "buf"}}
    assert caller_ctx(b, n, b.func("f")) == {"size"}
    assert callee_ctx(b, n, b.func("f")) == {"len", "buf"}


def test_name_in_both_directions():
    b = prog([fn("f"), fn("g")], [("f", "g"), ("g", "f")])
    n = {"g": {"a": "fd"}}
    c = ctx(b, n, b.func("f"))
    assert c.caller_names == c.callee_names == {"fd"}


def test_self_recursion_included():
    b = prog([fn("f", ["a"])], [("f", "f")])
    assert ctx(b, {"f": {"a": "n"}}, b.func("f")).all == {"n"}


def test_query_without_context():
    q = build_query(fn("f", ["a1"], ["v2"]))
    assert "Q:[a1,v2]" in q.text
    assert "callers" not in q.text


def test_query_with_context():
    q = build_query(fn("f", ["a1"], ["v2"]), ContextNames(frozenset({"key_file_name"})))
    assert "key_file_name" in q.text
    assert q.text.index("key_file_name") < q.text.index("Q:[")


def test_variable_order():
    assert build_query(fn("f", ["a1", "a2"], ["v9", "v3"])).variables == ("a1", "a2", "v3", "v9")


def test_query_is_deterministic():
    f = fn("f", ["a"], ["b", "c"])
    c = ContextNames(frozenset({"z", "y", "x"}), frozenset({"w"}))
    assert build_query(f, c).text == build_query(f, ContextNames(frozenset(["x", "z", "y"]), frozenset("w"))).text


def test_template_needs_placeholders():
    with pytest.raises(TemplateError):
        QueryTemplate(body="{code}")
    t = QueryTemplate(body="{variables}|{context}|{code}", preamble="")
    assert build_query(fn("f", ["a"]), template=t).text.startswith("a||int f(int a)")


def test_export_records(demo):
    b, n = demo
    gt = {"foo": {"a1": "id", "a2": "path", "v3": "fp"}, "bar1": {"v1": "msg"}}
    records, skipped = export_training_corpus([(b, gt)], {b.bid: n})
    assert len(records) == 2 and skipped == 2
    foo = next(r for r in records if "foo(" in r["query"])
    assert foo["resp"] == {"a1": "id", "a2": "path", "v3": "fp"}
    for name in ("err_msg", "err_location", "fd", "buf", "fp"):
        assert name in foo["query"]


def test_export_empty():
    assert export_training_corpus([], {}) == ([], 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**9))
def test_context_monotone_in_names(seed):
    rng = seeded(seed)
    b = random_binary(rng)
    small = random_names(rng, b, 0.4)
    big = {fid: dict(vs) for fid, vs in small.items()}
    for fid, vs in random_names(rng, b, 0.6).items():
        for vid, name in vs.items():
            big.setdefault(fid, {}).setdefault(vid, name)
    for f in b.funcs:
        assert ctx(b, small, f).all <= ctx(b, big, f).all

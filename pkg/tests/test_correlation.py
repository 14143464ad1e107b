from pathlib import Path

from hypothesis import given, settings, strategies as st

import oracles
from gen import random_binary, random_block, random_names, seeded
from varrecover import ir
from varrecover.core import BinaryProgram, DecompiledFunction, load_binary, read_json, top1
from varrecover.correlation import (
    CorrelationState,
    OriginTriple as T,
    apply_stmt,
    correlated_names,
    init_state,
)
from varrecover.ir import Assign, Call, If, Other, Return, Var

FIX = Path(__file__).parent / "fixtures"


def single(body, ids, fid="f", params=()):
    f = DecompiledFunction(fid, tuple(params), body, frozenset(ids), None)
    return BinaryProgram("b", (f,)), f


def test_init():
    b, f = single(ir.Skip(), {"a", "b"})
    st_ = init_state(b, {"f": {"a": "ptr"}})
    assert st_.get("f", "a") == {T("f", "a", "ptr")}
    assert st_.get("f", "b") == frozenset()
    assert init_state(b, {}).total() == 0


def test_init_independent_per_function():
    f1 = DecompiledFunction("f1", (), ir.Skip(), frozenset({"a"}), None)
    f2 = DecompiledFunction("f2", (), ir.Skip(), frozenset({"a"}), None)
    st_ = init_state(BinaryProgram("b", (f1, f2)), {"f1": {"a": "x"}})
    assert st_.get("f1", "a") == {T("f1", "a", "x")} and st_.get("f2", "a") == frozenset()


def test_assign_rules():
    b, f = single(Assign(Var("a"), Var("b")), {"a", "b"})
    n = {"f": {"a": "ptr", "b": "msg"}}
    out = correlated_names(b, n)
    both = {T("f", "a", "ptr"), T("f", "b", "msg")}
    assert out.sigma.get("f", "a") == both
    assert out.sigma.get("f", "b") == both
    assert out.pi == {"f": {"a": ["ptr", "msg"], "b": ["msg", "ptr"]}}


def test_assign_with_other_does_nothing():
    for s in (Assign(Var("a"), Other()), Assign(Other(), Var("a"))):
        b, f = single(s, {"a"})
        assert correlated_names(b, {"f": {"a": "x"}}).pi == {"f": {"a": ["x"]}}


def test_call_rules():
    g = DecompiledFunction("g", ("p",), ir.Skip(), frozenset({"p"}), None)
    f = DecompiledFunction("f", (), Call(None, "g", (Var("x"),)), frozenset({"x"}), None)
    b = BinaryProgram("b", (f, g), frozenset({("f", "g")}))
    n = {"f": {"x": "ptr"}, "g": {"p": "key_buffer"}}
    st_ = apply_stmt(init_state(b, n), f, f.body, n, b)
    assert T("f", "x", "ptr") in st_.get("g", "p")
    assert T("g", "p", "key_buffer") in st_.get("f", "x")


def test_external_call_ignored():
    f = DecompiledFunction("f", (), Call(None, "g", (Var("x"),), external=True), frozenset({"x"}), None)
    b = BinaryProgram("b", (f,), external=frozenset({"g"}))
    assert correlated_names(b, {"f": {"x": "a"}}).pi == {"f": {"x": ["a"]}}


def test_return_rules():
    g = DecompiledFunction("g", (), Return(Var("r")), frozenset({"r"}), None)
    f = DecompiledFunction("f", (), Call("d", "g", ()), frozenset({"d"}), None)
    b = BinaryProgram("b", (f, g), frozenset({("f", "g")}))
    out = correlated_names(b, {"f": {"d": "res"}, "g": {"r": "val"}})
    assert out.pi == {"f": {"d": ["res", "val"]}, "g": {"r": ["val", "res"]}}


def test_return_skipped_without_destination():
    g = DecompiledFunction("g", (), Return(Var("r")), frozenset({"r"}), None)
    f = DecompiledFunction("f", (), Call(None, "g", ()), frozenset(), None)
    b = BinaryProgram("b", (f, g), frozenset({("f", "g")}))
    assert correlated_names(b, {"g": {"r": "val"}}).pi == {"g": {"r": ["val"]}}


def test_if_unions_branches():
    s = If(Other(), Assign(Var("a"), Var("b")), Assign(Var("a"), Var("d")))
    b, f = single(s, {"a", "b", "d"})
    n = {"f": {"b": "x", "d": "y"}}
    assert correlated_names(b, n).sigma.get("f", "a") == {T("f", "b", "x"), T("f", "d", "y")}


def test_straight_line_without_flow():
    b, f = single(ir.seq(Assign(Var("a"), Other()), Return(Other())), {"a", "b"})
    n = {"f": {"a": "x", "b": "y"}}
    assert correlated_names(b, n).pi == {"f": {"a": ["x"], "b": ["y"]}}


def test_chain_needs_second_pass():
    b, f = single(ir.seq(Assign(Var("c"), Var("a")), Assign(Var("a"), Var("b"))), {"a", "b", "c"})
    out = correlated_names(b, {"f": {"a": "pa", "b": "pb", "c": "pc"}})
    assert out.pi["f"]["c"] == ["pc", "pa", "pb"]
    assert out.passes >= 2


def test_pass_bound_truncates():
    b, f = single(ir.seq(Assign(Var("c"), Var("a")), Assign(Var("a"), Var("b"))), {"a", "b", "c"})
    out = correlated_names(b, {"f": {"a": "pa", "b": "pb", "c": "pc"}}, max_passes=1)
    assert out.truncated and out.diagnostics


def test_motivating_example_shape():
    b = load_binary(read_json(FIX / "keyload.json"))
    n = top1(read_json(FIX / "keyload.candidates.json"))
    out = correlated_names(b, n)
    assert out.pi["sub_401639"]["ptr"] == ["key_bytes", "key_buffer", "key_buffer"]
    origins = {(t.src_fid, t.src_vid) for t in out.sigma.get("sub_401639", "ptr") if t.name == "key_buffer"}
    assert origins == {("sub_414976", "a2"), ("sub_411B94", "a1")}


def test_dump_format():
    b, f = single(Assign(Var("a"), Var("b")), {"a", "b"})
    n = {"f": {"a": "ptr", "b": "msg"}}
    assert correlated_names(b, n).dump(n) == {
        "f": {
            "a": [{"src_fid": "f", "src_vid": "a", "name": "ptr"}, {"src_fid": "f", "src_vid": "b", "name": "msg"}],
            "b": [{"src_fid": "f", "src_vid": "b", "name": "msg"}, {"src_fid": "f", "src_vid": "a", "name": "ptr"}],
        }
    }


def test_overlay_state():
    base = CorrelationState({("f", "a"): frozenset({T("f", "a", "x")})})
    top = base.overlay()
    assert top.add("f", "a", {T("f", "b", "y")})
    assert base.get("f", "a") == {T("f", "a", "x")}
    assert top.flatten() == CorrelationState({("f", "a"): frozenset({T("f", "a", "x"), T("f", "b", "y")})})


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10**9))
def test_matches_saturation_oracle(seed):
    rng = seeded(seed)
    b = random_binary(rng)
    n = random_names(rng, b)
    assert correlated_names(b, n).pi == oracles.expected_pi(b, n, seeded(seed + 1))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**9))
def test_monotone_and_deterministic(seed):
    rng = seeded(seed)
    b = random_binary(rng)
    n = random_names(rng, b)
    start = init_state(b, n)
    out = correlated_names(b, n)
    for key in start.keys():
        assert start.get(*key) <= out.sigma.get(*key)
    assert correlated_names(b, n).pi == out.pi


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**9))
def test_one_triple_per_origin(seed):
    rng = seeded(seed)
    b = random_binary(rng)
    n = random_names(rng, b)
    out = correlated_names(b, n)
    for fid, vs in out.pi.items():
        for vid, names in vs.items():
            assert len(names) == len(out.sigma.get(fid, vid))
            assert not out.truncated


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**9))
def test_if_is_union_of_branches(seed):
    rng = seeded(seed)
    b = random_binary(rng, max_funcs=2)
    n = random_names(rng, b)
    f = b.funcs[0]
    vids = sorted(f.ids) or ["v0"]
    s1 = random_block(rng, vids, b.fids, ["ext_a"], 1, [6])
    s2 = random_block(rng, vids, b.fids, ["ext_a"], 1, [6])
    start = init_state(b, n)
    joined = apply_stmt(start, f, If(Other(), s1, s2), n, b)
    left = apply_stmt(start, f, s1, n, b)
    right = apply_stmt(start, f, s2, n, b)
    for key in joined.keys() | left.keys() | right.keys():
        assert joined.get(*key) == left.get(*key) | right.get(*key)

"""Independent reference implementations used to check the engine.

Nothing here imports the engine's analysis or voting code: the correlation
oracle flattens every body into atomic rule instances and saturates them in
shuffled order, and the vote oracle rebuilds the hashed embedding from its
documented definition with plain Python lists.
"""

import hashlib
import math
import random

from varrecover import ir


# -- correlation --------------------------------------------------------------------


def _atoms(stmt):
    if isinstance(stmt, ir.Seq):
        for s in stmt.stmts:
            yield from _atoms(s)
    elif isinstance(stmt, ir.If):
        yield from _atoms(stmt.then)
        yield from _atoms(stmt.orelse)
    elif isinstance(stmt, ir.While):
        yield from _atoms(stmt.body)
    elif isinstance(stmt, (ir.Assign, ir.Call, ir.Return)):
        yield stmt


def rule_instances(b, names):
    """List of ("copy", dst, src) and ("origin", dst, triple) instances."""
    funcs = {f.fid: f for f in b.funcs}

    def nm(fid, vid):
        return names.get(fid, {}).get(vid)

    rules = []
    sites = []  # (caller, dst, callee)
    for f in b.funcs:
        for s in _atoms(f.body):
            if isinstance(s, ir.Call) and s.dst is not None and not s.external and s.callee in funcs:
                sites.append((f.fid, s.dst, s.callee))
    for f in b.funcs:
        for s in _atoms(f.body):
            if isinstance(s, ir.Assign) and isinstance(s.lhs, ir.Var) and isinstance(s.rhs, ir.Var):
                a, c = s.lhs.vid, s.rhs.vid
                rules.append(("copy", (f.fid, a), (f.fid, c)))
                if nm(f.fid, a):
                    rules.append(("origin", (f.fid, c), (f.fid, a, nm(f.fid, a))))
            elif isinstance(s, ir.Call) and not s.external and s.callee in funcs:
                g = funcs[s.callee]
                for arg, p in zip(s.args, g.params):
                    if isinstance(arg, ir.Var):
                        rules.append(("copy", (g.fid, p), (f.fid, arg.vid)))
                        if nm(g.fid, p):
                            rules.append(("origin", (f.fid, arg.vid), (g.fid, p, nm(g.fid, p))))
            elif isinstance(s, ir.Return) and isinstance(s.value, ir.Var):
                r = s.value.vid
                for caller, dst, callee in sites:
                    if callee == f.fid:
                        rules.append(("copy", (caller, dst), (f.fid, r)))
                        if nm(caller, dst):
                            rules.append(("origin", (f.fid, r), (caller, dst, nm(caller, dst))))
    return rules


def saturate(b, names, rng=None):
    """``{(fid, vid): set of (src_fid, src_vid, name)}`` at the least fixpoint."""
    rng = rng or random.Random(0)
    sigma = {}
    for f in b.funcs:
        for v in f.ids:
            n = names.get(f.fid, {}).get(v)
            sigma[(f.fid, v)] = {(f.fid, v, n)} if n else set()
    rules = rule_instances(b, names)
    changed = True
    while changed:
        changed = False
        rng.shuffle(rules)
        for kind, dst, x in rules:
            add = sigma.get(x, set()) if kind == "copy" else {x}
            cur = sigma.setdefault(dst, set())
            if not add <= cur:
                cur |= add
                changed = True
    return sigma


def expected_pi(b, names, rng=None):
    sigma = saturate(b, names, rng)
    pi = {}
    for (fid, vid), triples in sorted(sigma.items()):
        if not triples:
            continue
        own = (fid, vid, names.get(fid, {}).get(vid))
        ordered = ([own] if own in triples else []) + sorted(t for t in triples if t != own)
        pi.setdefault(fid, {})[vid] = [t[2] for t in ordered]
    return pi


# -- voting -------------------------------------------------------------------------


def _subtokens(name):
    segs, cur = [], ""
    for ch in name:
        if ch.isalnum():
            cur += ch
        else:
            if cur:
                segs.append(cur)
            cur = ""
    if cur:
        segs.append(cur)
    toks = []
    for seg in segs:
        piece = seg[0]
        for prev, ch in zip(seg, seg[1:]):
            split = (prev.islower() and ch.isupper()) or (prev.isalpha() != ch.isalpha())
            if split:
                toks.append(piece.lower())
                piece = ch
            else:
                piece += ch
        toks.append(piece.lower())
    return toks


def hashed_vector(name, dim=256, seed=0):
    counts = [0.0] * dim
    salt = seed.to_bytes(8, "little")
    for tok in _subtokens(name):
        marked = "^" + tok + "$"
        feats = ["t:" + tok] + ["g:" + marked[i : i + 3] for i in range(len(marked) - 2)]
        for feat in feats:
            h = hashlib.blake2b(feat.encode("utf-8"), digest_size=8, salt=salt).digest()
            counts[int.from_bytes(h, "little") % dim] += 1.0
    norm = math.sqrt(math.fsum(x * x for x in counts))
    return [x / norm for x in counts] if norm > 0 else counts


def cos(u, v):
    return math.fsum(x * y for x, y in zip(u, v))


def vote_scores(candidates, correlated, dim=256, seed=0):
    cands = [c for c in dict.fromkeys(candidates) if c not in ("<unk>", "unk", "<UNK>", "UNK")]
    relevant = list(correlated) + cands
    vec = {n: hashed_vector(n, dim, seed) for n in set(relevant)}
    return {c: math.fsum(cos(vec[c], vec[m]) for m in relevant) for c in cands}


def vote_select(candidates, correlated):
    scores = vote_scores(candidates, correlated)
    best = max(scores.values())
    return next(c for c in scores if scores[c] == best), scores


def simulate_validation(b, n0, candidates, budget):
    """Algorithm 1 built from the two oracles above."""
    current = n0
    history = []
    for _ in range(budget):
        pi = expected_pi(b, current)
        nxt = {}
        for fid in sorted(candidates):
            for vid in sorted(candidates[fid]):
                lst = candidates[fid][vid]
                if lst:
                    nxt.setdefault(fid, {})[vid] = vote_select(lst, pi.get(fid, {}).get(vid, []))[0]
        history.append(nxt)
        done = nxt == current
        current = nxt
        if done:
            break
    return current, history

"""Semantics voting over candidate names.

Each candidate is scored by its summed cosine similarity to every correlated
name and every candidate (itself included); the best score wins, earlier
candidates win ties.  Similarity comes from an :class:`EmbeddingProvider`.
The default :class:`HashEmbedding` hashes subtokens and their character
trigrams into a fixed-size vector, so it is deterministic and offline.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Protocol, Sequence

import numpy as np

from .core import CandidateMap, NameMap

PLACEHOLDER_NAMES = frozenset({"<unk>", "unk", "<UNK>", "UNK"})

_SEGMENT = re.compile(r"[^\W_]+")
_BOUNDARY = re.compile(r"(?<=[a-z])(?=[A-Z])|(?<=[^\W\d_])(?=\d)|(?<=\d)(?=[^\W\d_])")


def tokenize_name(name: str) -> List[str]:
    """Split an identifier into lowercase subtokens.

    >>> tokenize_name("msgLen2")
    ['msg', 'len', '2']
    """
    out = []
    for seg in _SEGMENT.findall(name):
        out.extend(p.lower() for p in _BOUNDARY.split(seg) if p)
    return out


class EmbeddingProvider(Protocol):
    dim: int

    def embed(self, names: Sequence[str]) -> np.ndarray:
        """Return one row per name; rows are unit vectors (or zero)."""


def dot(a: np.ndarray, b: np.ndarray) -> float:
    """Exactly summed dot product; independent of BLAS summation order."""
    return math.fsum((np.asarray(a, dtype=float) * np.asarray(b, dtype=float)).tolist())


def unit(v: np.ndarray) -> np.ndarray:
    norm = math.sqrt(dot(v, v))
    return v / norm if norm > 0 else np.zeros_like(v, dtype=float)


@dataclass
class HashEmbedding:
    """Bag of hashed subtokens plus hashed boundary-marked character trigrams."""

    dim: int = 256
    seed: int = 0
    _cache: Dict[str, np.ndarray] = field(default_factory=dict, repr=False, compare=False)

    def _bucket(self, feature: str) -> int:
        h = hashlib.blake2b(feature.encode("utf-8"), digest_size=8, salt=self.seed.to_bytes(8, "little"))
        return int.from_bytes(h.digest(), "little") % self.dim

    def features(self, name: str) -> List[str]:
        feats = []
        for tok in tokenize_name(name):
            feats.append("t:" + tok)
            marked = f"^{tok}$"
            feats.extend("g:" + marked[i : i + 3] for i in range(len(marked) - 2))
        return feats

    def vector(self, name: str) -> np.ndarray:
        v = self._cache.get(name)
        if v is None:
            v = np.zeros(self.dim)
            for feat in self.features(name):
                v[self._bucket(feat)] += 1.0
            v = unit(v)
            v.setflags(write=False)
            self._cache[name] = v
        return v

    def embed(self, names: Sequence[str]) -> np.ndarray:
        if not names:
            return np.zeros((0, self.dim))
        return np.vstack([self.vector(n) for n in names])


@dataclass(frozen=True)
class NameEmbedding:
    name: str
    vector: np.ndarray = field(compare=False)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.vector)


def embed_name(name: str, provider: Optional[EmbeddingProvider] = None) -> NameEmbedding:
    provider = provider or HashEmbedding()
    return NameEmbedding(name, provider.embed([name])[0])


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = math.sqrt(dot(a, a)), math.sqrt(dot(b, b))
    if na == 0 or nb == 0:
        return 0.0
    return dot(a, b) / (na * nb)


@dataclass(frozen=True)
class VoteOutcome:
    selected: str
    scores: Dict[str, float]
    tie: bool = False


def strip_placeholders(names: Sequence[str]) -> list:
    return [n for n in names if n not in PLACEHOLDER_NAMES]


def semantics_vote(
    candidates: Sequence[str], correlated: Sequence[str], provider: Optional[EmbeddingProvider] = None
) -> VoteOutcome:
    """Pick the candidate most similar to ``correlated + candidates``."""
    provider = provider or HashEmbedding()
    cands = strip_placeholders(list(dict.fromkeys(candidates)))
    if not cands:
        raise ValueError("semantics_vote needs at least one non-placeholder candidate")
    relevant = list(correlated) + cands
    unique = sorted(set(relevant))
    # providers return unit (or zero) rows, so dot products are cosines
    vecs = dict(zip(unique, np.asarray(provider.embed(unique), dtype=float)))
    scores = {}
    for c in cands:
        sims = {m: dot(vecs[c], vecs[m]) for m in unique}
        # fsum is exact-rounded, so the score does not depend on list order
        scores[c] = math.fsum(sims[m] for m in relevant)
    best = max(scores.values())
    winners = [c for c in cands if scores[c] == best]
    return VoteOutcome(winners[0], scores, len(winners) > 1)


def vote_all(
    candidates: CandidateMap, correlated: Mapping[str, Mapping[str, list]], provider: Optional[EmbeddingProvider] = None
) -> NameMap:
    provider = provider or HashEmbedding()
    out: NameMap = {}
    for fid in sorted(candidates):
        for vid in sorted(candidates[fid]):
            cands = strip_placeholders(candidates[fid][vid])
            if not cands:
                continue
            corr = correlated.get(fid, {}).get(vid, [])
            out.setdefault(fid, {})[vid] = semantics_vote(cands, corr, provider).selected
    return out

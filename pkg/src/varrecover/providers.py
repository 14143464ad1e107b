"""Name-candidate and embedding providers.

A name provider answers a rename query for one function with ordered
candidate lists per variable id; an embedding provider turns names into
vectors.  Replay and stub providers are pure and deterministic; the HTTP
providers talk to a model server.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Protocol, Sequence

import httpx
import numpy as np

from .context import Query
from .core import CandidateMap, CorpusError, DecompiledFunction, dedup, load_candidate_map
from .voting import PLACEHOLDER_NAMES

log = logging.getLogger(__name__)

ENDPOINT_ENV = "VARRECOVER_ENDPOINT"
EMBEDDING_ENDPOINT_ENV = "VARRECOVER_EMBEDDING_ENDPOINT"


class ProviderError(RuntimeError):
    """A provider could not answer for one function."""


class NameProvider(Protocol):
    def propose(self, query: Query, f: DecompiledFunction) -> Dict[str, List[str]]:
        ...


@dataclass
class ReplayProvider:
    """Serves candidates recorded in a candidate file.

    ``rounds`` maps a round index to a candidate map; a round without its own
    entry falls back to the closest earlier round (or the first one).
    """

    rounds: Dict[int, CandidateMap]

    @classmethod
    def from_doc(cls, doc) -> "ReplayProvider":
        if isinstance(doc, dict) and set(doc) == {"rounds"} and isinstance(doc["rounds"], dict):
            try:
                rounds = {int(k): load_candidate_map(v) for k, v in doc["rounds"].items()}
            except ValueError as e:
                raise CorpusError(f"replay store: bad round key ({e})") from None
            if not rounds:
                raise CorpusError("replay store: no rounds")
            return cls(rounds)
        return cls({1: load_candidate_map(doc)})

    def store_for(self, round_index: int) -> CandidateMap:
        earlier = [r for r in self.rounds if r <= round_index]
        return self.rounds[max(earlier) if earlier else min(self.rounds)]

    def propose(self, query: Query, f: DecompiledFunction) -> Dict[str, List[str]]:
        stored = self.store_for(query.round_index).get(f.fid, {})
        return {vid: list(stored.get(vid, [])) for vid in query.variables}


@dataclass
class StubProvider:
    rule: Callable[[str], List[str]]

    @classmethod
    def constant(cls, names: Sequence[str]) -> "StubProvider":
        names = list(names)
        return cls(lambda vid: list(names))

    @classmethod
    def identity(cls) -> "StubProvider":
        return cls(lambda vid: [vid])

    @classmethod
    def empty(cls) -> "StubProvider":
        return cls(lambda vid: [])

    @classmethod
    def from_spec(cls, spec: str) -> "StubProvider":
        """``identity``, ``empty`` or ``constant:name1,name2``."""
        if spec == "identity":
            return cls.identity()
        if spec == "empty":
            return cls.empty()
        if spec.startswith("constant:"):
            return cls.constant([n for n in spec[len("constant:"):].split(",") if n])
        raise ValueError(f"unknown stub rule {spec!r}")

    def propose(self, query: Query, f: DecompiledFunction) -> Dict[str, List[str]]:
        return {vid: dedup(self.rule(vid)) for vid in query.variables}


@dataclass
class FailingProvider:
    """Always fails; exercises per-function degradation."""

    message: str = "provider unavailable"

    def propose(self, query: Query, f: DecompiledFunction) -> Dict[str, List[str]]:
        raise ProviderError(self.message)


@dataclass
class InterleavedProvider:
    """Combine a generative and a classification provider, generative first.

    Lists are interleaved position by position; placeholder answers of the
    classification side are dropped.
    """

    generative: NameProvider
    classification: NameProvider

    def propose(self, query: Query, f: DecompiledFunction) -> Dict[str, List[str]]:
        gen = self.generative.propose(query, f)
        cls_ = self.classification.propose(query, f)
        out = {}
        for vid in dedup(list(gen) + list(cls_)):
            a = gen.get(vid, [])
            b = [n for n in cls_.get(vid, []) if n not in PLACEHOLDER_NAMES]
            merged = []
            for i in range(max(len(a), len(b))):
                merged += a[i : i + 1] + b[i : i + 1]
            out[vid] = dedup(merged)
        return out


@dataclass
class HttpProvider:
    """POST ``{"prompt", "variables"}``; expect ``{"names": {vid: [name, ...]}}``."""

    endpoint: str
    timeout: float = 60.0
    max_in_flight: int = 4
    retries: int = 0
    _gate: threading.BoundedSemaphore = field(init=False, repr=False)

    def __post_init__(self):
        self._gate = threading.BoundedSemaphore(self.max_in_flight)

    @classmethod
    def from_env(cls, endpoint: Optional[str] = None, **kw) -> "HttpProvider":
        endpoint = endpoint or os.environ.get(ENDPOINT_ENV)
        if not endpoint:
            raise ValueError(f"no endpoint given (flag or ${ENDPOINT_ENV})")
        return cls(endpoint, **kw)

    def _post(self, payload: dict) -> dict:
        last: Exception = ProviderError("no attempt made")
        for _ in range(self.retries + 1):
            try:
                with self._gate:
                    resp = httpx.post(self.endpoint, json=payload, timeout=self.timeout)
                resp.raise_for_status()
                return resp.json()
            except (httpx.HTTPError, json.JSONDecodeError) as e:
                last = e
        raise ProviderError(f"request to {self.endpoint} failed: {last}")

    def propose(self, query: Query, f: DecompiledFunction) -> Dict[str, List[str]]:
        doc = self._post({"prompt": query.text, "variables": list(query.variables)})
        names = doc.get("names") if isinstance(doc, dict) else None
        if not isinstance(names, dict):
            raise ProviderError("malformed response: missing 'names' object")
        out = {}
        for vid, lst in names.items():
            if vid not in f.ids:
                log.warning("provider named unknown variable %r in %s; dropped", vid, f.fid)
                continue
            if isinstance(lst, str):
                lst = [lst]
            if not isinstance(lst, list) or not all(isinstance(x, str) for x in lst):
                raise ProviderError(f"malformed response: names for {vid!r} must be a list of strings")
            out[vid] = dedup(x for x in lst if x)
        return out


@dataclass
class HttpEmbedding:
    """POST ``{"names": [...]}``; expect ``{"embeddings": [[float, ...], ...]}``."""

    endpoint: str
    timeout: float = 60.0
    dim: Optional[int] = None
    _cache: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @classmethod
    def from_env(cls, endpoint: Optional[str] = None, **kw) -> "HttpEmbedding":
        endpoint = endpoint or os.environ.get(EMBEDDING_ENDPOINT_ENV)
        if not endpoint:
            raise ValueError(f"no embedding endpoint given (flag or ${EMBEDDING_ENDPOINT_ENV})")
        return cls(endpoint, **kw)

    def embed(self, names: Sequence[str]) -> np.ndarray:
        with self._lock:
            missing = [n for n in dict.fromkeys(names) if n not in self._cache]
            if missing:
                try:
                    resp = httpx.post(self.endpoint, json={"names": missing}, timeout=self.timeout)
                    resp.raise_for_status()
                    doc = resp.json()
                except (httpx.HTTPError, json.JSONDecodeError) as e:
                    raise ProviderError(f"embedding request failed: {e}") from None
                vecs = doc.get("embeddings") if isinstance(doc, dict) else None
                if not isinstance(vecs, list) or len(vecs) != len(missing):
                    raise ProviderError("malformed embedding response")
                m = np.asarray(vecs, dtype=float)
                if m.ndim != 2:
                    raise ProviderError("malformed embedding response")
                if self.dim is None:
                    self.dim = m.shape[1]
                elif m.shape[1] != self.dim:
                    raise ProviderError(f"embedding dimension changed from {self.dim} to {m.shape[1]}")
                norms = np.linalg.norm(m, axis=1, keepdims=True)
                m = np.divide(m, norms, out=np.zeros_like(m), where=norms > 0)
                for n, v in zip(missing, m):
                    self._cache[n] = v
            if not names:
                return np.zeros((0, self.dim or 0))
            return np.vstack([self._cache[n] for n in names])


def replay_propose(store: ReplayProvider, query: Query, f: DecompiledFunction) -> Dict[str, List[str]]:
    return store.propose(query, f)


def stub_propose(rule: Callable[[str], List[str]], query: Query, f: DecompiledFunction) -> Dict[str, List[str]]:
    return StubProvider(rule).propose(query, f)


def http_propose(endpoint: str, query: Query, f: DecompiledFunction, timeout: float = 60.0) -> Dict[str, List[str]]:
    return HttpProvider(endpoint, timeout=timeout).propose(query, f)

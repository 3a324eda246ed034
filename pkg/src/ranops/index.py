"""Delta-fed retrieval index over resource snapshots.

The push path: watch deltas arrive, the current resource spec is
serialized into a compact text snapshot ("<kind> <name>: k=v ...; last
change: ..."), embedded with a deterministic hashing embedder, and
upserted under the resource's identity.  The pull path answers top-k
cosine queries against the full doc matrix (exact scan; desk scale).

The embedder is a fixed feature-hashing bag-of-tokens, so identical text
always yields identical unit-norm vectors and retrieval results are
reproducible run to run.  A model-backed embedder can be slotted in by
replacing ``Embedder`` behind the same two methods.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .store import ABSENT, Delta, NotFoundError, ResourceStore, flatten_spec

logger = logging.getLogger(__name__)

DEFAULT_DIM = 256


class Embedder:
    """Deterministic hashing embedder: tokens -> signed buckets -> L2 norm."""

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        return kernels.embed_text(text, self.dim)


@dataclass
class ContextDoc:
    kind: str
    name: str
    text: str
    vector: np.ndarray
    source_version: int

    @property
    def doc_key(self) -> tuple[str, str]:
        return (self.kind, self.name)


@dataclass(frozen=True)
class RetrievalHit:
    kind: str
    name: str
    score: float
    text: str
    source_version: int

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "name": self.name,
            "score": round(self.score, 6),
            "text": self.text,
            "source_version": self.source_version,
        }


def render_doc_text(kind: str, name: str, spec: dict, delta: Optional[Delta]) -> str:
    """Serialize a resource snapshot plus its last change into index text."""
    pairs = "; ".join(
        f"{path[len('spec.'):]}={_fmt(value)}"
        for path, value in flatten_spec(spec).items()
    )
    text = f"{kind} {name}: {pairs}"
    if delta is not None and delta.op != "create" and delta.changed_fields:
        changes = ", ".join(
            f"{path[len('spec.'):]}: {_fmt(ch.old)} -> {_fmt(ch.new)}"
            for path, ch in sorted(delta.changed_fields.items())
        )
        text += f"; last change: {changes}"
    return text


def _fmt(value) -> str:
    if value is ABSENT:
        return "(none)"
    if isinstance(value, float) and value == int(value):
        return str(int(value))
    if isinstance(value, list):
        return "[" + " ".join(_fmt(v) for v in value) + "]"
    return str(value)


class ContextIndex:
    """Exact-cosine vector index keyed by resource identity.

    One live doc per (kind, name); upserts replace.  Mutations happen on
    the single indexer thread that consumes the watch stream; queries can
    run concurrently and always see the last fully-applied snapshot
    (matrix swaps are atomic under the lock).
    """

    def __init__(self, store: ResourceStore, dim: int = DEFAULT_DIM):
        self._store = store
        self.embedder = Embedder(dim)
        self._docs: dict[tuple[str, str], ContextDoc] = {}
        self._lock = threading.RLock()
        self._matrix: Optional[np.ndarray] = None
        self._order: list[tuple[str, str]] = []
        self.resyncs = 0

    def __len__(self) -> int:
        with self._lock:
            return len(self._docs)

    def doc_keys(self) -> set[tuple[str, str]]:
        with self._lock:
            return set(self._docs)

    def get_doc(self, kind: str, name: str) -> Optional[ContextDoc]:
        with self._lock:
            return self._docs.get((kind, name))

    # -- push path -------------------------------------------------------------

    def on_delta(self, delta: Delta) -> None:
        """Apply one watch delta: upsert on create/update, drop on delete.

        The doc is rebuilt from the resource's *current* spec, so its
        source_version is the latest store version that touched the
        resource (>= delta.version when later writes already landed).
        """
        if not delta.changed_fields:
            raise ValueError("store contract violated: delta without changed fields")
        key = (delta.kind, delta.name)
        if delta.op == "delete":
            with self._lock:
                if self._docs.pop(key, None) is not None:
                    self._matrix = None
            return
        try:
            resource = self._store.get(delta.kind, delta.name)
        except NotFoundError:
            # Deleted again since this delta was emitted, or the store view
            # is inconsistent with the stream: resync from scratch.
            if delta.op == "update":
                logger.warning(
                    "delta for unknown resource %s/%s; resyncing index",
                    delta.kind,
                    delta.name,
                )
                self.full_resync()
            else:
                with self._lock:
                    if self._docs.pop(key, None) is not None:
                        self._matrix = None
            return
        text = render_doc_text(delta.kind, delta.name, resource.spec, delta)
        doc = ContextDoc(
            kind=delta.kind,
            name=delta.name,
            text=text,
            vector=self.embedder.embed(text),
            source_version=resource.version,
        )
        with self._lock:
            self._docs[key] = doc
            self._matrix = None

    def full_resync(self) -> None:
        """Rebuild every doc from the store's live set."""
        docs: dict[tuple[str, str], ContextDoc] = {}
        for resource in self._store.list():
            text = render_doc_text(resource.kind, resource.name, resource.spec, None)
            docs[(resource.kind, resource.name)] = ContextDoc(
                kind=resource.kind,
                name=resource.name,
                text=text,
                vector=self.embedder.embed(text),
                source_version=resource.version,
            )
        with self._lock:
            self._docs = docs
            self._matrix = None
            self.resyncs += 1

    # -- pull path -------------------------------------------------------------

    def query(self, text: str, k: int) -> list[RetrievalHit]:
        """Top-k docs by cosine similarity; ties break on doc key order."""
        if k < 1:
            raise ValueError("k must be >= 1")
        query_vec = self.embedder.embed(text)
        with self._lock:
            if not self._docs:
                return []
            if self._matrix is None:
                self._order = sorted(self._docs)
                self._matrix = np.stack(
                    [self._docs[key].vector for key in self._order]
                )
            matrix = self._matrix
            order = self._order
            docs = {key: self._docs[key] for key in order}
        scores = kernels.dot_scores(matrix, query_vec)
        # self._order is doc-key sorted, so index order == lexicographic tie-break
        ranked = sorted(range(len(order)), key=lambda i: (-scores[i], i))[:k]
        hits = []
        for i in ranked:
            doc = docs[order[i]]
            hits.append(
                RetrievalHit(
                    kind=doc.kind,
                    name=doc.name,
                    score=float(min(1.0, max(-1.0, scores[i]))),
                    text=doc.text,
                    source_version=doc.source_version,
                )
            )
        return hits

    # -- dump / load -------------------------------------------------------------

    def dump(self) -> dict:
        """JSON-able dump (vectors are recomputed on load, not stored)."""
        with self._lock:
            return {
                "dim": self.embedder.dim,
                "docs": [
                    {
                        "kind": doc.kind,
                        "name": doc.name,
                        "text": doc.text,
                        "source_version": doc.source_version,
                    }
                    for _, doc in sorted(self._docs.items())
                ],
            }

    def load(self, doc: dict) -> None:
        dim = int(doc.get("dim", self.embedder.dim))
        embedder = Embedder(dim)
        docs: dict[tuple[str, str], ContextDoc] = {}
        for entry in doc.get("docs", []):
            key = (entry["kind"], entry["name"])
            docs[key] = ContextDoc(
                kind=entry["kind"],
                name=entry["name"],
                text=entry["text"],
                vector=embedder.embed(entry["text"]),
                source_version=int(entry["source_version"]),
            )
        with self._lock:
            self.embedder = embedder
            self._docs = docs
            self._matrix = None

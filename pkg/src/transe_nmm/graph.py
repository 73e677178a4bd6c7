"""In-memory knowledge graph and the tau-filtered neighbor index.

Relations are integer ids in ``[0, 2 * n_relations)``: ids below
``n_relations`` are the stored relations, id ``r + n_relations`` is the
inverse of ``r``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np


def inverse(rel: int, n_relations: int) -> int:
    """Return the id of the inverse of ``rel`` (an involution)."""
    return rel + n_relations if rel < n_relations else rel - n_relations


def is_inverse(rel: int, n_relations: int) -> bool:
    return rel >= n_relations


def relation_name(rel: int, names: list[str]) -> str:
    n = len(names)
    return names[rel] if rel < n else names[rel - n] + "⁻¹"


class Vocabulary:
    """Dense string <-> id mapping assigned in first-seen order."""

    def __init__(self, names: Iterable[str] = ()):
        self._index: dict[str, int] = {}
        self.names: list[str] = []
        for name in names:
            self.add(name)

    def add(self, name: str) -> int:
        idx = self._index.get(name)
        if idx is None:
            if not name:
                raise ValueError("vocabulary names must be non-empty strings")
            idx = len(self.names)
            self._index[name] = idx
            self.names.append(name)
        return idx

    def __getitem__(self, name: str) -> int:
        return self._index[name]

    def get(self, name: str, default=None):
        return self._index.get(name, default)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __len__(self) -> int:
        return len(self.names)


@dataclass
class KnowledgeGraph:
    entities: Vocabulary
    relations: Vocabulary
    train: np.ndarray  # (n, 3) int64 rows of (head, relation, tail)
    _train_set: set = field(default_factory=set, repr=False)

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.int64).reshape(-1, 3)
        if not self._train_set:
            self._train_set = set(map(tuple, self.train.tolist()))

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def contains(self, head: int, rel: int, tail: int) -> bool:
        """Exact membership in the train triples (the closure is not consulted)."""
        return (head, rel, tail) in self._train_set

    def closure(self) -> np.ndarray:
        """Symmetric closure: every train triple plus its inverse reversal."""
        if len(self.train) == 0:
            return np.zeros((0, 3), dtype=np.int64)
        h, r, t = self.train.T
        back = np.stack([t, r + self.n_relations, h], axis=1)
        both = np.concatenate([self.train, back])
        return np.unique(both, axis=0)


def build_graph(
    triples: Iterable[tuple[str, str, str]],
    entities: Optional[Vocabulary] = None,
    relations: Optional[Vocabulary] = None,
) -> KnowledgeGraph:
    """Build a graph from named triples, deduplicating repeats.

    Pre-populated vocabularies may be passed so that ids already assigned
    (e.g. from other splits) are reused.
    """
    entities = entities if entities is not None else Vocabulary()
    relations = relations if relations is not None else Vocabulary()
    seen: set = set()
    rows = []
    for h, r, t in triples:
        row = (entities.add(h), relations.add(r), entities.add(t))
        if row not in seen:
            seen.add(row)
            rows.append(row)
    return KnowledgeGraph(entities, relations, np.array(rows, dtype=np.int64).reshape(-1, 3), seen)


class NeighborIndex:
    """Per-entity neighbor pairs ``(e', r)`` with ``(e', r, e)`` in the closure.

    Only relation-specific sets with ``|N_{e,r}| <= tau`` are kept; larger
    sets are dropped whole. The filtered pairs are stored in CSR form
    (``ptr``, ``ent``, ``rel``), each row sorted by relation id then entity id.
    """

    def __init__(self, sets: dict[tuple[int, int], list[int]], n_entities: int,
                 n_relations: int, tau: int):
        self.sets = sets
        self.n_entities = n_entities
        self.n_relations = n_relations
        self.tau = tau
        rows: list[list[tuple[int, int]]] = [[] for _ in range(n_entities)]
        for (e, r), members in sorted(sets.items()):
            if len(members) <= tau:
                rows[e].extend((r, e2) for e2 in members)
        counts = np.array([len(row) for row in rows], dtype=np.int64)
        self.ptr = np.zeros(n_entities + 1, dtype=np.int64)
        np.cumsum(counts, out=self.ptr[1:])
        flat = [pair for row in rows for pair in row]
        pairs = np.array(flat, dtype=np.int64).reshape(-1, 2)
        self.rel = np.ascontiguousarray(pairs[:, 0])
        self.ent = np.ascontiguousarray(pairs[:, 1])

    def neighbors(self, e: int, rel: int) -> list[int]:
        """The unfiltered set N_{e,rel}."""
        return self.sets.get((e, rel), [])

    def pairs(self, e: int) -> list[tuple[int, int]]:
        lo, hi = self.ptr[e], self.ptr[e + 1]
        return list(zip(self.ent[lo:hi].tolist(), self.rel[lo:hi].tolist()))

    def effective_neighborhood(self, e: int, exclude: Optional[int] = None) -> list[tuple[int, int]]:
        """Filtered pairs of ``e`` with every pair whose entity is ``exclude`` removed."""
        return [(e2, r) for e2, r in self.pairs(e) if e2 != exclude]

    def __len__(self) -> int:
        return int(self.ptr[-1])


def build_neighbor_index(g: KnowledgeGraph, tau: int) -> NeighborIndex:
    if tau < 0:
        raise ValueError("tau must be non-negative")
    sets: dict[tuple[int, int], set] = {}
    for e2, r, e in g.closure().tolist():
        sets.setdefault((e, r), set()).add(e2)
    return NeighborIndex({k: sorted(v) for k, v in sets.items()},
                         g.n_entities, g.n_relations, tau)

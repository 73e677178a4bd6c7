"""Benchmark dataset files and Bernoulli corruption statistics."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import KnowledgeGraph, Vocabulary, build_graph

log = logging.getLogger(__name__)

LABELS = {"1": True, "-1": False}


class DatasetFormatError(ValueError):
    pass


@dataclass
class LabeledTriples:
    """Id-level triples of an evaluation split with their correctness labels."""

    triples: np.ndarray  # (n, 3) int64
    labels: np.ndarray  # (n,) bool

    def __len__(self) -> int:
        return len(self.triples)

    @property
    def positives(self) -> np.ndarray:
        return self.triples[self.labels]


@dataclass
class Dataset:
    graph: KnowledgeGraph
    valid: LabeledTriples
    test: LabeledTriples

    def known_positives(self) -> set:
        """Filter set for ranking: correct triples of train, valid and test."""
        known = set(self.graph._train_set)
        for split in (self.valid, self.test):
            known.update(map(tuple, split.positives.tolist()))
        return known


def read_triples(path, format: str = "tsv-labeled") -> list[tuple[str, str, str, bool]]:
    """Parse a tab-separated triple file.

    Lines carry ``head, relation, tail`` and an optional fourth label column
    (``1`` or ``-1``); unlabeled rows default to correct. With
    ``format="tsv-unlabeled"`` a fourth column is rejected.
    """
    if format not in ("tsv-labeled", "tsv-unlabeled"):
        raise ValueError(f"unknown triple file format {format!r}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) == 4 and format == "tsv-labeled":
                label = LABELS.get(cols[3].strip())
                if label is None:
                    raise DatasetFormatError(
                        f"{path}: unknown label {cols[3]!r} at line {lineno}")
            elif len(cols) == 3:
                label = True
            else:
                expected = "3 or 4" if format == "tsv-labeled" else "3"
                raise DatasetFormatError(
                    f"{path}: expected {expected} columns at line {lineno}, got {len(cols)}")
            h, r, t = (c.strip() for c in cols[:3])
            if not (h and r and t):
                raise DatasetFormatError(f"{path}: empty field at line {lineno}")
            rows.append((h, r, t, label))
    return rows


def _index(rows, entities: Vocabulary, relations: Vocabulary) -> LabeledTriples:
    ids = [(entities.add(h), relations.add(r), entities.add(t)) for h, r, t, _ in rows]
    return LabeledTriples(np.array(ids, dtype=np.int64).reshape(-1, 3),
                          np.array([lab for *_, lab in rows], dtype=bool))


def load_dataset(train_path, valid_path, test_path, format: str = "tsv-labeled") -> Dataset:
    """Load the three splits; the vocabulary spans all of them, the graph holds train only."""
    for p in (train_path, valid_path, test_path):
        if not Path(p).is_file():
            raise FileNotFoundError(f"dataset file not found: {p}")
    train_rows = read_triples(train_path, format)
    negatives = sum(1 for *_, lab in train_rows if not lab)
    if negatives:
        log.warning("%s: dropping %d train rows labeled incorrect", train_path, negatives)
    graph = build_graph((h, r, t) for h, r, t, lab in train_rows if lab)
    valid = _index(read_triples(valid_path, format), graph.entities, graph.relations)
    test = _index(read_triples(test_path, format), graph.entities, graph.relations)
    for name, split in (("valid", valid), ("test", test)):
        n_pos = int(split.labels.sum())
        if n_pos != len(split) - n_pos and n_pos != len(split):
            log.warning("%s split is unbalanced: %d correct vs %d incorrect",
                        name, n_pos, len(split) - n_pos)
    return Dataset(graph, valid, test)


def write_triples(path, triples: np.ndarray, graph: KnowledgeGraph, labels=None) -> None:
    ents, rels = graph.entities.names, graph.relations.names
    with open(path, "w", encoding="utf-8") as fh:
        for i, (h, r, t) in enumerate(np.asarray(triples).tolist()):
            cols = [ents[h], rels[r], ents[t]]
            if labels is not None:
                cols.append("1" if labels[i] else "-1")
            fh.write("\t".join(cols) + "\n")


@dataclass
class BernoulliStats:
    tph: np.ndarray  # mean distinct tails per head, per relation
    hpt: np.ndarray  # mean distinct heads per tail, per relation
    p_head: np.ndarray  # probability of corrupting the head


def bernoulli_stats(g: KnowledgeGraph) -> BernoulliStats:
    n = g.n_relations
    tph = np.zeros(n)
    hpt = np.zeros(n)
    p_head = np.full(n, 0.5)
    if len(g.train):
        uniq = np.unique(g.train, axis=0)
        rel = uniq[:, 1]
        # distinct (r, h) pairs = heads per relation; |G_r| / heads = mean tails per head
        n_per_rel = np.bincount(rel, minlength=n)
        heads = np.bincount(np.unique(uniq[:, :2], axis=0)[:, 1], minlength=n)
        tails = np.bincount(np.unique(uniq[:, 1:], axis=0)[:, 0], minlength=n)
        present = n_per_rel > 0
        tph[present] = n_per_rel[present] / heads[present]
        hpt[present] = n_per_rel[present] / tails[present]
        denom = tph + hpt
        pos = denom > 0
        p_head[pos] = tph[pos] / denom[pos]
    return BernoulliStats(tph, hpt, p_head)

"""Triple classification, entity prediction and relation prediction."""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .data import LabeledTriples

SLOTS = ("head", "tail", "relation")


@dataclass
class ThresholdTable:
    per_relation: dict[int, float]
    fallback: float

    def get(self, r: int) -> float:
        return self.per_relation.get(r, self.fallback)


def best_threshold(scores, labels) -> tuple[float, float]:
    """Exhaustive threshold sweep for the rule "correct iff score < theta".

    Candidates are midpoints between consecutive distinct sorted scores plus
    sentinels one unit below and above the range. Returns ``(theta,
    accuracy)``; ties go to the smaller theta.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    order = np.argsort(scores, kind="stable")
    s, lab = scores[order], labels[order]
    distinct, first = np.unique(s, return_index=True)
    # predicted-correct prefix ends at each distinct value boundary
    cut = np.append(first, len(s))
    pos_prefix = np.concatenate([[0], np.cumsum(lab)])
    neg_total = len(s) - pos_prefix[-1]
    neg_prefix = np.arange(len(s) + 1) - pos_prefix
    correct = pos_prefix[cut] + (neg_total - neg_prefix[cut])
    thetas = np.concatenate([[distinct[0] - 1.0],
                             (distinct[:-1] + distinct[1:]) / 2.0,
                             [distinct[-1] + 1.0]])
    best = int(np.argmax(correct))  # first maximum = smallest theta
    return float(thetas[best]), float(correct[best]) / len(s)


def fit_thresholds_from_scores(relations, scores, labels) -> ThresholdTable:
    relations = np.asarray(relations)
    if len(relations) == 0:
        raise ValueError("cannot fit thresholds on an empty validation set")
    table = {}
    for r in np.unique(relations).tolist():
        m = relations == r
        table[r] = best_threshold(np.asarray(scores)[m], np.asarray(labels)[m])[0]
    return ThresholdTable(table, float(np.median(list(table.values()))))


def fit_thresholds(scorer, valid: LabeledTriples) -> ThresholdTable:
    scores = scorer.score_triples(valid.triples)
    return fit_thresholds_from_scores(valid.triples[:, 1], scores, valid.labels)


@dataclass
class ClassificationResult:
    micro: float
    macro: float
    per_relation: dict[int, float]


def classify_scores(relations, scores, labels, thresholds: ThresholdTable) -> ClassificationResult:
    relations = np.asarray(relations)
    theta = np.array([thresholds.get(r) for r in relations.tolist()])
    hit = (np.asarray(scores) < theta) == np.asarray(labels, dtype=bool)
    per = {r: float(hit[relations == r].mean()) for r in np.unique(relations).tolist()}
    return ClassificationResult(float(hit.mean()), float(np.mean(list(per.values()))), per)


def classify(scorer, thresholds: ThresholdTable, test: LabeledTriples) -> ClassificationResult:
    scores = scorer.score_triples(test.triples)
    return classify_scores(test.triples[:, 1], scores, test.labels, thresholds)


@dataclass
class RankResult:
    triple: tuple[int, int, int]
    slot: str
    raw_rank: int
    filtered_rank: int


class FilterSet:
    """Known-correct triples indexed by each query pattern."""

    def __init__(self, known):
        self.tails = defaultdict(list)
        self.heads = defaultdict(list)
        self.rels = defaultdict(list)
        for h, r, t in known:
            self.tails[(h, r)].append(t)
            self.heads[(r, t)].append(h)
            self.rels[(h, t)].append(r)
        for d in (self.tails, self.heads, self.rels):
            for key in d:
                d[key] = np.array(d[key], dtype=np.int64)


_EMPTY = np.zeros(0, dtype=np.int64)


def _ranks(scores: np.ndarray, gold: int, known: np.ndarray) -> tuple[int, int]:
    # gold wins ties: only strictly smaller scores outrank it
    g = scores[gold]
    raw = 1 + int(np.count_nonzero(scores < g))
    others = known[known != gold]
    filtered = raw - int(np.count_nonzero(scores[others] < g))
    return raw, filtered


def _map_ordered(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def entity_ranks(scorer, positives, filters: FilterSet, workers: int = 1) -> list[RankResult]:
    """Head and tail ranks of each test triple against all entity substitutions."""
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    # group by relation so cached unexcluded representations are reused
    order = np.argsort(positives[:, 1], kind="stable")

    def one(i):
        h, r, t = positives[i].tolist()
        head_scores = scorer.candidate_scores(t, r, corrupt_head=True)
        tail_scores = scorer.candidate_scores(h, r, corrupt_head=False)
        rh = _ranks(head_scores, h, filters.heads.get((r, t), _EMPTY))
        rt = _ranks(tail_scores, t, filters.tails.get((h, r), _EMPTY))
        return i, [RankResult((h, r, t), "head", *rh), RankResult((h, r, t), "tail", *rt)]

    done = dict(_map_ordered(one, order.tolist(), workers))
    return [res for i in range(len(positives)) for res in done[i]]


def relation_ranks(scorer, positives, filters: FilterSet, workers: int = 1) -> list[RankResult]:
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)

    def one(row):
        h, r, t = row
        scores = scorer.relation_candidate_scores(h, t)
        return RankResult((h, r, t), "relation",
                          *_ranks(scores, r, filters.rels.get((h, t), _EMPTY)))

    return _map_ordered(one, positives.tolist(), workers)


@dataclass
class RankMetrics:
    mr: float
    mrr: float
    hits10: float


def aggregate(ranks: list[RankResult]) -> dict[str, RankMetrics]:
    if not ranks:
        raise ValueError("cannot aggregate an empty rank list")
    out = {}
    for setting, attr in (("raw", "raw_rank"), ("filtered", "filtered_rank")):
        r = np.array([getattr(x, attr) for x in ranks], dtype=np.float64)
        out[setting] = RankMetrics(float(r.mean()), float((1.0 / r).mean()),
                                   float((r <= 10).mean()))
    return out


@dataclass
class EvalReport:
    classification: Optional[ClassificationResult] = None
    entity: Optional[dict[str, RankMetrics]] = None
    relation: Optional[dict[str, RankMetrics]] = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"meta": self.meta}
        if self.classification is not None:
            c = self.classification
            out["classification"] = {"micro": c.micro, "macro": c.macro,
                                     "per_relation": {str(k): v for k, v in c.per_relation.items()}}
        for name in ("entity", "relation"):
            sec = getattr(self, name)
            if sec is not None:
                out[name] = {k: asdict(v) for k, v in sec.items()}
        return out

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def csv_rows(self) -> list[dict]:
        """Rows in the results-table layout: one per setting (R/F)."""
        rows = []
        for setting, tag in (("raw", "R"), ("filtered", "F")):
            row = {"setting": tag, "mic": "", "mac": ""}
            if self.classification is not None and tag == "R":
                row["mic"] = self.classification.micro
                row["mac"] = self.classification.macro
            for name in ("entity", "relation"):
                sec = getattr(self, name)
                m = sec[setting] if sec is not None else None
                row[f"{name}_mr"] = m.mr if m else ""
                row[f"{name}_mrr"] = m.mrr if m else ""
                row[f"{name}_h10"] = m.hits10 if m else ""
            rows.append(row)
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        rows = self.csv_rows()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue()


def evaluate(scorer, dataset, task: str, split: str = "test", filters: Optional[FilterSet] = None,
             thresholds: Optional[ThresholdTable] = None, workers: int = 1) -> EvalReport:
    """Run one task on ``split``; classification fits thresholds on valid unless given."""
    data = getattr(dataset, split)
    report = EvalReport(meta={"task": task, "split": split})
    if task == "classification":
        if thresholds is None:
            thresholds = fit_thresholds(scorer, dataset.valid)
        report.classification = classify(scorer, thresholds, data)
        return report
    filters = filters if filters is not None else FilterSet(dataset.known_positives())
    if task == "entity-prediction":
        report.entity = aggregate(entity_ranks(scorer, data.positives, filters, workers))
    elif task == "relation-prediction":
        report.relation = aggregate(relation_ranks(scorer, data.positives, filters, workers))
    else:
        raise ValueError(f"unknown task {task!r}")
    return report

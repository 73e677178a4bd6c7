"""Minibatch SGD with RMSProp, Bernoulli negatives and alternating optimization.

Stages run in the order vectors -> mixing -> vectors. Vector stages update
entity and relation vectors only; the mixing stage updates ``alpha`` and
``beta`` only, with the L2 penalty on them.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .data import BernoulliStats, Dataset, bernoulli_stats
from .evaluation import ClassificationResult, FilterSet, aggregate, classify_scores, \
    entity_ranks, fit_thresholds_from_scores, relation_ranks
from .graph import KnowledgeGraph, NeighborIndex, build_neighbor_index
from .kernels import Scorer, get_backend
from .model import Hyperparams, ModelParams

log = logging.getLogger(__name__)

STAGES = ("vectors", "mixing", "vectors")
MAX_CORRUPTION_ATTEMPTS = 100

SELECTION_METRICS = {
    "classification": "micro_accuracy",
    "entity-prediction": "filtered_mrr",
    "relation-prediction": "filtered_mrr",
}


class TrainingError(RuntimeError):
    pass


def sample_corruption(pos, stats: BernoulliStats, g: KnowledgeGraph, rng: np.random.Generator):
    """Replace the head (prob. ``p_head[r]``) or the tail with a random entity not giving a train triple."""
    h, r, t = (int(x) for x in pos)
    corrupt_head = rng.random() < stats.p_head[r]
    n = g.n_entities
    cand = None
    for _ in range(MAX_CORRUPTION_ATTEMPTS):
        e = int(rng.integers(n - 1))
        e += e >= (h if corrupt_head else t)  # skip the original entity
        cand = (e, r, t) if corrupt_head else (h, r, e)
        if not g.contains(*cand):
            return cand
    log.warning("no corruption outside the train set for %s after %d attempts",
                (h, r, t), MAX_CORRUPTION_ATTEMPTS)
    return cand


class RMSProp:
    """Per-element RMSProp; one accumulator per parameter block."""

    def __init__(self, shapes: dict[str, tuple], rho: float = 0.9, eps: float = 1e-8):
        self.rho = rho
        self.eps = eps
        self.acc = {name: np.zeros(shape) for name, shape in shapes.items()}

    def update(self, name: str, param: np.ndarray, grad: np.ndarray, eta: float, rows=None) -> None:
        """Step ``param`` (or only ``param[rows]``) against ``grad`` of the same selection."""
        if not np.all(np.isfinite(grad)):
            raise TrainingError(f"non-finite gradient in block {name!r}")
        acc = self.acc[name]
        if rows is None:
            acc *= self.rho
            acc += (1.0 - self.rho) * grad * grad
            param -= eta * grad / (np.sqrt(acc) + self.eps)
        else:
            a = self.rho * acc[rows] + (1.0 - self.rho) * grad * grad
            acc[rows] = a
            param[rows] -= eta * grad / (np.sqrt(a) + self.eps)


def rmsprop_update(acc: np.ndarray, param: np.ndarray, grad: np.ndarray, eta: float,
                   rho: float = 0.9, eps: float = 1e-8) -> None:
    """In-place RMSProp step on matching arrays."""
    acc *= rho
    acc += (1.0 - rho) * grad * grad
    param -= eta * grad / (np.sqrt(acc) + eps)


def project_constraints(p: ModelParams) -> None:
    """Rescale entity and relation vectors with l2 norm above one onto the unit sphere."""
    for block in (p.ent, p.rel):
        norms = np.sqrt(np.einsum("ij,ij->i", block, block))
        over = norms > 1.0
        if over.any():
            block[over] /= norms[over, None]


@dataclass
class EpochLog:
    epoch: int
    stage: int
    stage_name: str
    mean_loss: float
    val_metric: Optional[float]
    seconds: float


@dataclass
class TrainReport:
    selection_metric: str
    epochs: list[EpochLog] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_metric: Optional[float] = None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "stage", "stage_name", "mean_loss", "val_metric", "seconds"])
            for e in self.epochs:
                w.writerow([e.epoch, e.stage, e.stage_name, repr(e.mean_loss),
                            "" if e.val_metric is None else repr(e.val_metric), f"{e.seconds:.4f}"])


class Validator:
    """Computes the model-selection metric on the validation split."""

    def __init__(self, dataset: Dataset, index: NeighborIndex, hp: Hyperparams, task: str,
                 max_triples: Optional[int] = None, backend: str = "auto", workers: int = 1):
        self.dataset = dataset
        self.index = index
        self.hp = hp
        self.task = task
        self.backend = backend
        self.workers = workers
        valid = dataset.valid
        if task == "classification":
            if not (valid.labels.any() and (~valid.labels).any()):
                raise ValueError("classification selection needs both labels in the validation split")
            self.triples, self.labels = valid.triples, valid.labels
        else:
            self.triples = valid.positives
            if max_triples is not None and len(self.triples) > max_triples:
                pick = np.random.default_rng(hp.seed).choice(len(self.triples), max_triples,
                                                             replace=False)
                self.triples = self.triples[np.sort(pick)]
            self.filters = FilterSet(dataset.known_positives())

    def __call__(self, params: ModelParams) -> float:
        scorer = Scorer(params, self.index, self.hp.delta, self.hp.norm, self.backend)
        if self.task == "classification":
            scores = scorer.score_triples(self.triples)
            rels = self.triples[:, 1]
            table = fit_thresholds_from_scores(rels, scores, self.labels)
            return classify_scores(rels, scores, self.labels, table).micro
        if self.task == "entity-prediction":
            ranks = entity_ranks(scorer, self.triples, self.filters, self.workers)
        else:
            ranks = relation_ranks(scorer, self.triples, self.filters, self.workers)
        return aggregate(ranks)["filtered"].mrr


class Trainer:
    def __init__(self, graph: KnowledgeGraph, hp: Hyperparams, index: Optional[NeighborIndex] = None,
                 backend: str = "auto"):
        if len(graph.train) == 0:
            raise ValueError("cannot train on an empty train set")
        self.graph = graph
        self.hp = hp
        self.index = index if index is not None else build_neighbor_index(graph, hp.tau)
        self.kern = get_backend(backend)
        self.stats = bernoulli_stats(graph)
        self.rng = np.random.default_rng(hp.seed)
        self.params = ModelParams.initialize(graph.n_entities, graph.n_relations, hp.k, self.rng)
        p = self.params
        self.opt = RMSProp({"ent": p.ent.shape, "rel": p.rel.shape, "alpha": p.alpha.shape,
                            "beta": p.beta.shape}, hp.rho, hp.eps)
        self._g_ent = np.zeros_like(p.ent)
        self._g_rel = np.zeros_like(p.rel)
        self._g_alpha = np.zeros_like(p.alpha)
        self._g_beta = np.zeros_like(p.beta)
        self._t_ent = np.zeros(p.n_entities, dtype=np.uint8)
        self._t_rel = np.zeros(p.n_relations, dtype=np.uint8)

    def corruptions(self, positives: np.ndarray) -> np.ndarray:
        return np.array([sample_corruption(x, self.stats, self.graph, self.rng) for x in positives],
                        dtype=np.int64).reshape(-1, 3)

    def run_epoch(self, stage_name: str) -> float:
        """One pass over shuffled train triples; returns the mean hinge loss per positive."""
        hp, p, g = self.hp, self.params, self.graph
        vectors, mixing = stage_name == "vectors", stage_name == "mixing"
        n = len(g.train)
        order = self.rng.permutation(n)
        total = 0.0
        for start in range(0, n, hp.batch_size):
            pos = np.ascontiguousarray(g.train[order[start:start + hp.batch_size]])
            neg = self.corruptions(pos)
            loss, active = self.kern.batch_gradients(
                p.ent, p.rel, p.alpha, p.beta, self.index.ptr, self.index.ent, self.index.rel,
                pos, neg, hp.delta, hp.gamma, hp.norm == "l1", vectors, mixing,
                self._g_ent, self._g_rel, self._g_alpha, self._g_beta, self._t_ent, self._t_rel)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss in batch starting at {start}")
            total += loss
            if vectors and active:
                for name, param, grad, touched in (("ent", p.ent, self._g_ent, self._t_ent),
                                                   ("rel", p.rel, self._g_rel, self._t_rel)):
                    rows = np.flatnonzero(touched)
                    self.opt.update(name, param, grad[rows], hp.eta, rows)
                    grad[rows] = 0.0
                    touched[:] = 0
                project_constraints(p)
            elif mixing:
                # L2 penalty split over the batches of an epoch
                frac = len(pos) / n
                if hp.lam > 0:
                    self._g_alpha += hp.lam * frac * p.alpha
                    self._g_beta += hp.lam * frac * p.beta
                if active or hp.lam > 0:
                    self.opt.update("alpha", p.alpha, self._g_alpha, hp.eta)
                    self.opt.update("beta", p.beta, self._g_beta, hp.eta)
                self._g_alpha[:] = 0.0
                self._g_beta[:] = 0.0
        return total / n

    def train(self, validate: Optional[Callable[[ModelParams], float]] = None,
              selection_metric: str = "micro_accuracy", higher_is_better: bool = True,
              eval_every: int = 1, stages=STAGES,
              on_epoch: Optional[Callable[[EpochLog], None]] = None) -> tuple[ModelParams, TrainReport]:
        """Run every stage for ``epochs_per_stage`` epochs, returning the best validated snapshot.

        Without ``validate`` the final parameters are returned.
        """
        report = TrainReport(selection_metric)
        best = None
        epoch = 0
        for stage_no, stage_name in enumerate(stages, 1):
            for _ in range(self.hp.epochs_per_stage):
                epoch += 1
                t0 = time.perf_counter()
                mean_loss = self.run_epoch(stage_name)
                metric = None
                if validate is not None and (epoch % eval_every == 0):
                    metric = float(validate(self.params))
                    better = (best is None or (metric > report.best_metric if higher_is_better
                                               else metric < report.best_metric))
                    if better:
                        best = self.params.copy()
                        report.best_epoch, report.best_metric = epoch, metric
                entry = EpochLog(epoch, stage_no, stage_name, mean_loss, metric,
                                 time.perf_counter() - t0)
                report.epochs.append(entry)
                log.debug("epoch %d stage %s loss %.6f val %s", epoch, stage_name, mean_loss, metric)
                if on_epoch is not None:
                    on_epoch(entry)
        return (best if best is not None else self.params.copy()), report


def train(dataset: Dataset, hp: Hyperparams, task: str = "classification",
          stages=STAGES, selection_metric: Optional[str] = None, eval_every: int = 1,
          val_max_triples: Optional[int] = None, backend: str = "auto", workers: int = 1,
          on_epoch=None) -> tuple[ModelParams, TrainReport]:
    """Train on ``dataset.graph`` and select the best epoch on the validation split."""
    trainer = Trainer(dataset.graph, hp, backend=backend)
    metric_name = selection_metric or SELECTION_METRICS[task]
    validate = None
    if metric_name != "none" and len(dataset.valid):
        validate = Validator(dataset, trainer.index, hp, task, val_max_triples, backend, workers)
    return trainer.train(validate, metric_name, True, eval_every, stages, on_epoch)

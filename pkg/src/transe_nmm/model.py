"""TransE-NMM parameters, neighborhood-mixture representations and scores.

Everything here works one triple at a time and is written for clarity; the
batched hot paths live in :mod:`transe_nmm.kernels`. With ``tau = 0`` every
neighbor set is filtered out and the score is plain TransE.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .graph import NeighborIndex, inverse

NORMS = ("l1", "l2")


@dataclass
class Hyperparams:
    k: int = 50
    gamma: float = 1.0
    eta: float = 0.01
    lam: float = 0.01
    delta: float = 0.0
    tau: int = 10
    norm: str = "l2"
    batch_size: int = 100
    epochs_per_stage: int = 200
    seed: int = 0
    rho: float = 0.9
    eps: float = 1e-8

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if not self.eta > 0:
            raise ValueError("eta must be > 0")
        if self.lam < 0 or self.delta < 0:
            raise ValueError("lam and delta must be >= 0")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}")
        if self.batch_size < 1 or self.epochs_per_stage < 1:
            raise ValueError("batch_size and epochs_per_stage must be >= 1")
        if not 0 <= self.rho < 1 or not self.eps > 0:
            raise ValueError("rho must be in [0, 1) and eps > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class ModelParams:
    ent: np.ndarray  # (n_entities, k)
    rel: np.ndarray  # (n_relations, k); inverse vectors are -rel, never stored
    alpha: np.ndarray  # (n_entities,)
    beta: np.ndarray  # (2 n_relations, 2 n_relations), [query, neighbor relation]

    @classmethod
    def initialize(cls, n_entities: int, n_relations: int, k: int,
                   rng: np.random.Generator) -> "ModelParams":
        bound = 6.0 / np.sqrt(k)
        ent = rng.uniform(-bound, bound, size=(n_entities, k))
        rel = rng.uniform(-bound, bound, size=(n_relations, k))
        norms = np.linalg.norm(rel, axis=1, keepdims=True)
        rel = rel / np.where(norms > 0, norms, 1.0)
        return cls(ent, rel, np.zeros(n_entities), np.zeros((2 * n_relations, 2 * n_relations)))

    @property
    def k(self) -> int:
        return self.ent.shape[1]

    @property
    def n_entities(self) -> int:
        return self.ent.shape[0]

    @property
    def n_relations(self) -> int:
        return self.rel.shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams(self.ent.copy(), self.rel.copy(), self.alpha.copy(), self.beta.copy())

    def relation_vector(self, r: int) -> np.ndarray:
        n = self.n_relations
        return self.rel[r] if r < n else -self.rel[r - n]

    def equals(self, other: "ModelParams") -> bool:
        """Bit-level equality of every block."""
        return all(np.array_equal(a, b) for a, b in
                   zip((self.ent, self.rel, self.alpha, self.beta),
                       (other.ent, other.rel, other.alpha, other.beta)))


@dataclass
class MixtureWeights:
    a: float
    b: np.ndarray


def mixture_weights(p: ModelParams, hp: Hyperparams, e: int, query: int,
                    nbrs: list[tuple[int, int]]) -> MixtureWeights:
    """Normalized weights of the entity's own vector and each neighbor pair."""
    own = hp.delta + np.exp(p.alpha[e])
    nb = np.array([np.exp(p.beta[query, r2]) for _, r2 in nbrs])
    z = own + nb.sum()
    return MixtureWeights(own / z, nb / z)


def relation_dependent_vector(p: ModelParams, e: int, r: int) -> np.ndarray:
    return p.ent[e] + p.relation_vector(r)


def neighbor_repr(p: ModelParams, hp: Hyperparams, idx: NeighborIndex, e: int,
                  query: int, exclude: Optional[int] = None) -> np.ndarray:
    nbrs = idx.effective_neighborhood(e, exclude)
    w = mixture_weights(p, hp, e, query, nbrs)
    out = w.a * p.ent[e]
    for bi, (e2, r2) in zip(w.b, nbrs):
        out = out + bi * relation_dependent_vector(p, e2, r2)
    return out


def _norm(d: np.ndarray, norm: str) -> float:
    return float(np.abs(d).sum()) if norm == "l1" else float(np.sqrt(d @ d))


def _norm_grad(d: np.ndarray, norm: str) -> np.ndarray:
    if norm == "l1":
        return np.sign(d)
    n = np.sqrt(d @ d)
    return d / n if n > 0 else np.zeros_like(d)


def score(p: ModelParams, hp: Hyperparams, idx: NeighborIndex, h: int, r: int, t: int) -> float:
    """Implausibility of ``(h, r, t)``; lower is more plausible."""
    if r >= p.n_relations:
        raise ValueError("score expects a non-inverse relation")
    d = (neighbor_repr(p, hp, idx, h, r, exclude=t) + p.rel[r]
         - neighbor_repr(p, hp, idx, t, inverse(r, p.n_relations), exclude=h))
    return _norm(d, hp.norm)


@dataclass
class Gradients:
    """Sparse gradient: only touched rows / entries are present."""

    ent: dict = field(default_factory=lambda: defaultdict(float))
    rel: dict = field(default_factory=lambda: defaultdict(float))
    alpha: dict = field(default_factory=lambda: defaultdict(float))
    beta: dict = field(default_factory=lambda: defaultdict(float))

    def add(self, other: "Gradients", scale: float = 1.0) -> None:
        for mine, theirs in ((self.ent, other.ent), (self.rel, other.rel),
                             (self.alpha, other.alpha), (self.beta, other.beta)):
            for key, val in theirs.items():
                mine[key] = mine[key] + scale * val

    def is_zero(self) -> bool:
        return not any(np.any(v != 0) for d in (self.ent, self.rel, self.alpha, self.beta)
                       for v in d.values())

    def to_dense(self, p: ModelParams) -> ModelParams:
        out = ModelParams(np.zeros_like(p.ent), np.zeros_like(p.rel),
                          np.zeros_like(p.alpha), np.zeros_like(p.beta))
        for i, v in self.ent.items():
            out.ent[i] += v
        for i, v in self.rel.items():
            out.rel[i] += v
        for i, v in self.alpha.items():
            out.alpha[i] += v
        for key, v in self.beta.items():
            out.beta[key] += v
        return out


def _side_gradient(p, hp, idx, e, query, exclude, g, grads: Gradients) -> None:
    # accumulate d<g, theta_{e,query}>/d(params) into grads
    n = p.n_relations
    nbrs = idx.effective_neighborhood(e, exclude)
    w = mixture_weights(p, hp, e, query, nbrs)
    us = [relation_dependent_vector(p, e2, r2) for e2, r2 in nbrs]
    theta = w.a * p.ent[e]
    for bi, u in zip(w.b, us):
        theta = theta + bi * u
    grads.ent[e] = grads.ent[e] + w.a * g
    if nbrs:
        z = (hp.delta + np.exp(p.alpha[e])) / w.a
        grads.alpha[e] += float(g @ (p.ent[e] - theta)) * np.exp(p.alpha[e]) / z
    for bi, u, (e2, r2) in zip(w.b, us, nbrs):
        grads.ent[e2] = grads.ent[e2] + bi * g
        base, sign = (r2, 1.0) if r2 < n else (r2 - n, -1.0)
        grads.rel[base] = grads.rel[base] + sign * bi * g
        grads.beta[(query, r2)] += float(g @ (u - theta)) * bi


def score_and_gradients(p: ModelParams, hp: Hyperparams, idx: NeighborIndex,
                        h: int, r: int, t: int) -> tuple[float, Gradients]:
    """Score of one triple and its exact partial derivatives.

    The l1 subgradient at zero is taken as zero. ``alpha`` entries only
    appear for entities with a non-empty effective neighborhood, because
    otherwise the own-vector weight is identically one.
    """
    n = p.n_relations
    inv = inverse(r, n)
    th_h = neighbor_repr(p, hp, idx, h, r, exclude=t)
    th_t = neighbor_repr(p, hp, idx, t, inv, exclude=h)
    d = th_h + p.rel[r] - th_t
    g = _norm_grad(d, hp.norm)
    grads = Gradients()
    grads.rel[r] = grads.rel[r] + g
    _side_gradient(p, hp, idx, h, r, t, g, grads)
    _side_gradient(p, hp, idx, t, inv, h, -g, grads)
    return _norm(d, hp.norm), grads


def loss_and_gradients(p: ModelParams, hp: Hyperparams, idx: NeighborIndex,
                       pos, neg) -> tuple[float, Gradients]:
    """Hinge loss ``[gamma + f(pos) - f(neg)]+`` for one pair and its gradient.

    The L2 penalty on the mixing parameters is applied by the trainer.
    """
    h, r, t = (int(x) for x in pos)
    h2, r2, t2 = (int(x) for x in neg)
    if r != r2 or r >= p.n_relations:
        raise ValueError("negative must share the (non-inverse) relation of the positive")
    if (h != h2) + (t != t2) != 1:
        raise ValueError("negative must differ from the positive in exactly one entity slot")
    f_pos, g_pos = score_and_gradients(p, hp, idx, h, r, t)
    f_neg, g_neg = score_and_gradients(p, hp, idx, h2, r, t2)
    loss = hp.gamma + f_pos - f_neg
    if loss <= 0:
        return 0.0, Gradients()
    g_pos.add(g_neg, -1.0)
    return loss, g_pos

"""Backend selection for the hot kernels.

The compiled extension is used when it imports; set
``TRANSE_NMM_PURE_PYTHON=1`` to force the numpy fallback.
"""

from __future__ import annotations

import os
from types import ModuleType

import numpy as np

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def get_backend(name: str = "auto") -> ModuleType:
    if name == "python":
        return _fallback
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        return _compiled
    if name != "auto":
        raise ValueError(f"unknown backend {name!r}")
    if _compiled is None or os.environ.get("TRANSE_NMM_PURE_PYTHON", "") not in ("", "0"):
        return _fallback
    return _compiled


backend = get_backend()
BACKEND = "compiled" if backend is _compiled else "python"


def _args(params, index):
    return (params.ent, params.rel, params.alpha, params.beta, index.ptr, index.ent, index.rel)


class Scorer:
    """Scores triples for frozen parameters and a neighbor index."""

    def __init__(self, params, index, delta: float, norm: str, backend_name: str = "auto"):
        self.params = params
        self.index = index
        self.delta = float(delta)
        self.l1 = norm == "l1"
        self.kern = get_backend(backend_name)
        self._theta_cache: dict[int, np.ndarray] = {}

    def score_triples(self, triples) -> np.ndarray:
        triples = np.ascontiguousarray(np.asarray(triples, dtype=np.int64).reshape(-1, 3))
        return self.kern.score_triples(*_args(self.params, self.index), triples, self.delta, self.l1)

    def theta_all(self, query: int) -> np.ndarray:
        cached = self._theta_cache.get(query)
        if cached is None:
            if len(self.index) == 0:
                cached = self.params.ent
            else:
                cached = self.kern.theta_all(*_args(self.params, self.index), query, self.delta)
            if len(self._theta_cache) >= 4:
                self._theta_cache.pop(next(iter(self._theta_cache)))
            self._theta_cache[query] = cached
        return cached

    def candidate_scores(self, fixed: int, r: int, corrupt_head: bool) -> np.ndarray:
        """Scores of ``(c, r, fixed)`` (head corruption) or ``(fixed, r, c)`` for all ``c``."""
        n_rel = self.params.n_relations
        theta_var = self.theta_all(r if corrupt_head else r + n_rel)
        return self.kern.candidate_scores(*_args(self.params, self.index), int(fixed), int(r),
                                          bool(corrupt_head), theta_var, self.delta, self.l1)

    def relation_candidate_scores(self, h: int, t: int) -> np.ndarray:
        n_rel = self.params.n_relations
        triples = np.column_stack([np.full(n_rel, h), np.arange(n_rel), np.full(n_rel, t)])
        return self.score_triples(triples)

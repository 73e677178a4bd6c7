"""Compare the compiled and pure-Python kernel backends on a synthetic KB.

    python3 benchmarks/bench_kernels.py [--entities 2000] [--triples 20000] [--dim 50]
"""

import argparse
import time

import numpy as np

from transe_nmm.graph import build_graph, build_neighbor_index
from transe_nmm.kernels import get_backend
from transe_nmm.model import ModelParams


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--entities", type=int, default=2000)
    ap.add_argument("--relations", type=int, default=20)
    ap.add_argument("--triples", type=int, default=20000)
    ap.add_argument("--dim", type=int, default=50)
    ap.add_argument("--tau", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    g = build_graph((f"e{rng.integers(args.entities)}", f"r{rng.integers(args.relations)}",
                     f"e{rng.integers(args.entities)}") for _ in range(args.triples))
    idx = build_neighbor_index(g, args.tau)
    p = ModelParams.initialize(g.n_entities, g.n_relations, args.dim, rng)
    p.alpha[:] = rng.normal(size=p.alpha.shape)
    p.beta[:] = rng.normal(size=p.beta.shape)
    common = (p.ent, p.rel, p.alpha, p.beta, idx.ptr, idx.ent, idx.rel)
    triples = np.ascontiguousarray(g.train[:5000])
    neg = triples.copy()
    neg[:, 2] = rng.integers(g.n_entities, size=len(neg))
    batch_pos, batch_neg = triples[:100], neg[:100]

    print(f"KB: {g.n_entities} entities, {g.n_relations} relations, {len(g.train)} triples, "
          f"{len(idx.ent)} neighbor pairs, k={args.dim}")
    print(f"{'kernel':<28}{'python (s)':>12}{'compiled (s)':>14}{'speedup':>10}")
    try:
        backends = {"python": get_backend("python"), "compiled": get_backend("compiled")}
    except ImportError:
        print("compiled extension not built; nothing to compare")
        return 1

    def cases(k):
        theta_var = k.theta_all(*common, 0, 0.0)
        grads = [np.zeros_like(p.ent), np.zeros_like(p.rel), np.zeros_like(p.alpha),
                 np.zeros_like(p.beta)]
        t_ent = np.zeros(g.n_entities, dtype=np.uint8)
        t_rel = np.zeros(g.n_relations, dtype=np.uint8)
        return {
            "score_triples (5000)": lambda: k.score_triples(*common, triples, 0.0, False),
            "theta_all": lambda: k.theta_all(*common, 0, 0.0),
            "candidate_scores": lambda: k.candidate_scores(*common, 0, 0, False, theta_var, 0.0, False),
            "batch_gradients (100)": lambda: k.batch_gradients(
                *common, batch_pos, batch_neg, 0.0, 1.0, False, True, True, *grads, t_ent, t_rel),
        }

    py, cc = cases(backends["python"]), cases(backends["compiled"])
    for name in py:
        a, b = best_of(py[name], args.repeat), best_of(cc[name], args.repeat)
        print(f"{name:<28}{a:>12.5f}{b:>14.5f}{a / b:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

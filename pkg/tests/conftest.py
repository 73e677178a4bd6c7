import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from transe_nmm.data import load_dataset  # noqa: E402
from transe_nmm.graph import build_graph  # noqa: E402
from transe_nmm.model import ModelParams  # noqa: E402


def random_kb(rng, n_ent=12, n_rel=3, n_triples=40):
    names = [(f"e{rng.integers(n_ent)}", f"r{rng.integers(n_rel)}", f"e{rng.integers(n_ent)}")
             for _ in range(n_triples)]
    return build_graph(names)


def random_params(g, k, rng, mixing=True):
    p = ModelParams.initialize(g.n_entities, g.n_relations, k, rng)
    if mixing:
        p.alpha = rng.normal(size=p.alpha.shape)
        p.beta = rng.normal(size=p.beta.shape)
    return p


@pytest.fixture
def toy_graph():
    return build_graph([("A", "r1", "B"), ("C", "r1", "B"), ("B", "r2", "D")])


def structured_dataset(tmp_path, seed=0, n_ent=20, n_rel=2, n_train=60, n_eval=10):
    """Write a small dataset with balanced labeled valid/test splits; return the paths."""
    rng = np.random.default_rng(seed)
    # a noisy "successor" structure so that the model has something to learn
    triples = set()
    while len(triples) < n_train + 2 * n_eval:
        h = int(rng.integers(n_ent))
        r = int(rng.integers(n_rel))
        t = (h + 1 + r) % n_ent if rng.random() < 0.9 else int(rng.integers(n_ent))
        triples.add((f"e{h}", f"r{r}", f"e{t}"))
    triples = sorted(triples)
    rng.shuffle(triples)
    train, valid_pos, test_pos = (triples[:n_train], triples[n_train:n_train + n_eval],
                                  triples[n_train + n_eval:])
    every = set(triples)

    def negatives(pos):
        out = []
        for h, r, t in pos:
            while True:
                cand = (h, r, f"e{rng.integers(n_ent)}")
                if cand not in every:
                    out.append(cand)
                    break
        return out

    paths = {}
    for name, rows in (("train", [(h, r, t, None) for h, r, t in train]),
                       ("valid", [(*x, "1") for x in valid_pos] + [(*x, "-1") for x in negatives(valid_pos)]),
                       ("test", [(*x, "1") for x in test_pos] + [(*x, "-1") for x in negatives(test_pos)])):
        p = tmp_path / f"{name}.txt"
        p.write_text("".join("\t".join(c for c in row if c is not None) + "\n" for row in rows))
        paths[name] = p
    return paths


@pytest.fixture
def toy_paths(tmp_path):
    return structured_dataset(tmp_path)


@pytest.fixture
def toy_dataset(toy_paths):
    return load_dataset(toy_paths["train"], toy_paths["valid"], toy_paths["test"])

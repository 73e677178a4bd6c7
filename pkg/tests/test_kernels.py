import numpy as np
import pytest

from transe_nmm import kernels
from transe_nmm.graph import build_neighbor_index
from transe_nmm.kernels import Scorer, get_backend
from transe_nmm.model import Gradients, Hyperparams, loss_and_gradients, score

from conftest import random_kb, random_params

BACKENDS = ["python"] + (["compiled"] if kernels._compiled is not None else [])


@pytest.fixture(params=[(1.0, "l2"), (0.0, "l1"), (5.0, "l2")], ids=["d1-l2", "d0-l1", "d5-l2"])
def setup(request):
    delta, norm = request.param
    rng = np.random.default_rng(21)
    g = random_kb(rng, n_ent=15, n_rel=3, n_triples=70)
    p = random_params(g, 5, rng)
    hp = Hyperparams(k=5, tau=4, delta=delta, norm=norm)
    return g, p, hp, build_neighbor_index(g, 4)


def test_compiled_backend_available():
    # the package is built with the extension in this environment
    assert kernels._compiled is not None


def test_env_forces_fallback(monkeypatch):
    monkeypatch.setenv("TRANSE_NMM_PURE_PYTHON", "1")
    assert get_backend() is kernels._fallback


@pytest.mark.parametrize("backend", BACKENDS)
def test_score_triples_matches_model(setup, backend):
    g, p, hp, idx = setup
    ref = np.array([score(p, hp, idx, *x) for x in g.train.tolist()])
    got = Scorer(p, idx, hp.delta, hp.norm, backend).score_triples(g.train)
    np.testing.assert_allclose(got, ref, rtol=0, atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("corrupt_head", [True, False])
def test_candidate_scores_match_model(setup, backend, corrupt_head):
    g, p, hp, idx = setup
    s = Scorer(p, idx, hp.delta, hp.norm, backend)
    for h, r, t in g.train[:6].tolist():
        fixed = t if corrupt_head else h
        got = s.candidate_scores(fixed, r, corrupt_head)
        ref = [score(p, hp, idx, c, r, t) if corrupt_head else score(p, hp, idx, h, r, c)
               for c in range(g.n_entities)]
        np.testing.assert_allclose(got, ref, rtol=0, atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_theta_all_tau_zero_exact(backend):
    rng = np.random.default_rng(4)
    g = random_kb(rng)
    p = random_params(g, 3, rng)
    idx = build_neighbor_index(g, 0)
    k = get_backend(backend)
    out = k.theta_all(p.ent, p.rel, p.alpha, p.beta, idx.ptr, idx.ent, idx.rel, 0, 1.0)
    assert np.array_equal(out, p.ent)


def _batch(backend, p, idx, pos, neg, hp, vectors=True, mixing=True):
    k = get_backend(backend)
    bufs = [np.zeros_like(p.ent), np.zeros_like(p.rel), np.zeros_like(p.alpha), np.zeros_like(p.beta)]
    te, tr = np.zeros(p.n_entities, np.uint8), np.zeros(p.n_relations, np.uint8)
    loss, active = k.batch_gradients(p.ent, p.rel, p.alpha, p.beta, idx.ptr, idx.ent, idx.rel,
                                     pos, neg, hp.delta, hp.gamma, hp.norm == "l1", vectors, mixing,
                                     *bufs, te, tr)
    return loss, active, bufs, te, tr


@pytest.mark.parametrize("backend", BACKENDS)
def test_batch_gradients_match_model(setup, backend):
    g, p, hp, idx = setup
    hp.gamma = 3.0
    pos = np.ascontiguousarray(g.train[:20])
    neg = pos.copy()
    neg[::2, 0] = (neg[::2, 0] + 3) % g.n_entities
    neg[1::2, 2] = (neg[1::2, 2] + 5) % g.n_entities
    loss, active, bufs, te, tr = _batch(backend, p, idx, pos, neg, hp)
    total, acc = 0.0, Gradients()
    for a, b in zip(pos, neg):
        l, gr = loss_and_gradients(p, hp, idx, a, b)
        total += l
        acc.add(gr)
    dense = acc.to_dense(p)
    assert loss == pytest.approx(total, abs=1e-10)
    for got, ref in zip(bufs, (dense.ent, dense.rel, dense.alpha, dense.beta)):
        np.testing.assert_allclose(got, ref, rtol=0, atol=1e-12)
    assert set(np.flatnonzero(te)) >= {int(i) for i in np.flatnonzero(np.abs(dense.ent).sum(1))}


@pytest.mark.parametrize("backend", BACKENDS)
def test_batch_gradients_respect_blocks(setup, backend):
    g, p, hp, idx = setup
    hp.gamma = 3.0
    pos = np.ascontiguousarray(g.train[:10])
    neg = pos.copy()
    neg[:, 2] = (neg[:, 2] + 1) % g.n_entities
    _, _, (ge, gr, ga, gb), _, _ = _batch(backend, p, idx, pos, neg, hp, vectors=False)
    assert not ge.any() and not gr.any() and gb.any()
    _, _, (ge, gr, ga, gb), _, _ = _batch(backend, p, idx, pos, neg, hp, mixing=False)
    assert ge.any() and not ga.any() and not gb.any()

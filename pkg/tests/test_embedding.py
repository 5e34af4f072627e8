import numpy as np
import pytest

import deepsc.embedding as emb_mod
from deepsc.embedding import (
    DrlimConfig,
    EmbeddingMap,
    LabeledPair,
    LinearDRLIM,
    contrastive_loss,
    dumps_embedding,
    embed_grid,
    generate_pairs,
    loads_embedding,
    loss_gradient,
    pair_label,
    train_embedding,
)
from deepsc.exceptions import InvalidInputError, NumericalError, TruncatedPayloadError
from deepsc.grid import CodeGrid, build_grid, coarsen_grid

from .oracles import central_difference


def spacing8_grid():
    g = coarsen_grid(build_grid(64, 64))
    assert (g.spacing, g.receptive_field) == (8, 28)
    return g


def test_single_point_grid_has_no_pairs():
    assert generate_pairs(build_grid(16, 16), 16) == []


def test_label_table_spacing8():
    g = spacing8_grid()
    by_offset = {}
    for p in generate_pairs(g, 16):
        (ax, ay), (bx, by) = g.lattice_coords(p.i), g.lattice_coords(p.j)
        by_offset[(abs(ax - bx), abs(ay - by))] = p.label
    assert by_offset[(1, 0)] == by_offset[(0, 1)] == 0
    assert by_offset[(1, 1)] == 0
    assert by_offset[(2, 0)] == by_offset[(0, 2)] == 1
    assert by_offset[(3, 3)] == 1
    # R = 28 allows lattice offsets up to 3 (24 px) but not 4 (32 px)
    assert max(max(o) for o in by_offset) == 3


def test_pairs_satisfy_contracts():
    g = spacing8_grid()
    c = g.centers()
    R = g.receptive_field
    pairs = generate_pairs(g, 16)
    assert pairs
    for p in pairs:
        assert p.i != p.j
        dx, dy = np.abs(c[p.i] - c[p.j])
        assert dx < R and dy < R
        assert p.distance == pytest.approx(np.hypot(dx, dy))
        assert p.label == pair_label(p.distance, 16)


def test_tie_at_sigma_is_dissimilar():
    assert pair_label(16.0, 16.0) == 1
    assert pair_label(15.999, 16.0) == 0
    pairs = generate_pairs(spacing8_grid(), 16)
    ties = [p for p in pairs if p.distance == 16.0]
    assert ties and all(p.label == 1 for p in ties)


def test_exhaustive_candidate_count():
    g = build_grid(40, 36)
    c = g.centers()
    R = g.receptive_field
    want = sum(1 for a in range(g.n_points) for b in range(a + 1, g.n_points)
               if abs(c[a, 0] - c[b, 0]) < R and abs(c[a, 1] - c[b, 1]) < R)
    assert len(generate_pairs(g, 10)) == want


def test_capped_pairs_keep_ratio_and_seed():
    g = spacing8_grid()
    full = generate_pairs(g, 16)
    capped = generate_pairs(g, 16, cap=60, seed=3)
    assert len(capped) == 60
    assert set(capped) <= set(full)
    frac_full = np.mean([p.label for p in full])
    frac_cap = np.mean([p.label for p in capped])
    assert abs(frac_full - frac_cap) <= 1 / 60
    assert capped == generate_pairs(g, 16, cap=60, seed=3)


def test_loss_cases():
    rng = np.random.RandomState(0)
    W = rng.randn(3, 5)
    y = rng.randn(5)
    assert contrastive_loss(W, 0, y, y, 2.0) == 0.0
    assert contrastive_loss(W, 1, y, y, 2.0) == 4.0
    far = y + 100 * rng.randn(5)
    assert np.linalg.norm(W @ (far - y)) >= 2.0
    assert contrastive_loss(W, 1, far, y, 2.0) == 0.0
    pair = LabeledPair(0, 1, 0, 8.0)
    d = np.linalg.norm(W @ (far - y))
    assert contrastive_loss(W, pair, far, y, 2.0) == pytest.approx(0.5 * d * d)
    with pytest.raises(NumericalError):
        contrastive_loss(W, 0, [np.nan] * 5, y, 2.0)


def test_loss_nonnegative_and_zero_set():
    rng = np.random.RandomState(1)
    for _ in range(200):
        W = rng.randn(2, 3)
        yi, yj = rng.randn(3), rng.randn(3)
        beta = rng.uniform(0.1, 5)
        for label in (0, 1):
            loss = contrastive_loss(W, label, yi, yj, beta)
            d = np.linalg.norm(W @ (yi - yj))
            assert loss >= 0
            assert (loss == 0) == ((label == 0 and d == 0) or (label == 1 and d >= beta))


def test_gradient_flat_cases():
    W = np.random.RandomState(2).randn(3, 4)
    y = np.ones(4)
    for label in (0, 1):
        assert not loss_gradient(W, label, y, y, 1.0).any()
    far = y + np.array([50.0, 0, 0, 0])
    assert not loss_gradient(W, 1, far, y, 1.0).any()


def test_gradient_matches_finite_differences():
    rng = np.random.RandomState(3)
    checked = 0
    while checked < 120:
        D, K = rng.randint(1, 5), rng.randint(1, 6)
        W = rng.randn(D, K)
        yi, yj = rng.randn(K), rng.randn(K)
        label = checked % 2
        d = np.linalg.norm(W @ (yi - yj))
        # dissimilar pairs are drawn with d near beta half the time
        beta = d * rng.uniform(0.9, 1.1) if label and checked % 4 == 1 else rng.uniform(0.5, 4)
        if abs(d - beta) < 1e-4 or d == 0:
            continue
        scale = max(np.abs(W).max(), 1.0)
        fd = central_difference(lambda M: contrastive_loss(M, label, yi, yj, beta), W, 1e-6 * scale)
        g = loss_gradient(W, label, yi, yj, beta)
        denom = max(np.linalg.norm(g), np.linalg.norm(fd), 1e-12)
        assert np.linalg.norm(g - fd) / denom < 1e-5
        checked += 1


def two_cluster_pairs(seed=0, n=150, K=20):
    rng = np.random.RandomState(seed)
    centers = rng.randn(2, K) * 3
    pts = [c + 0.3 * rng.randn(n, K) for c in centers]
    yi, yj, labels = [], [], []
    for _ in range(400):
        a = rng.randint(2)
        yi.append(pts[a][rng.randint(n)])
        yj.append(pts[a][rng.randint(n)])
        labels.append(0)
        yi.append(pts[0][rng.randint(n)])
        yj.append(pts[1][rng.randint(n)])
        labels.append(1)
    return np.array(yi), np.array(yj), np.array(labels)


def pair_distances(W, yi, yj):
    return np.linalg.norm((yi - yj) @ W.T, axis=1)


def test_two_cluster_training(monkeypatch):
    yi, yj, labels = two_cluster_pairs()
    worst = []
    original = emb_mod.unit_ball_project

    def tracked(M, axis=0):
        out = original(M, axis)
        worst.append(np.linalg.norm(M, axis=0).max())
        return out

    monkeypatch.setattr(emb_mod, "unit_ball_project", tracked)
    cfg = DrlimConfig(beta=1.0, step_size=0.05, epochs=15, seed=0, batch_size=32)
    emb = train_embedding(yi, yj, labels, 5, cfg)
    assert max(worst) <= 1 + 1e-12
    assert len(worst) == 1 + 15 * int(np.ceil(len(labels) / 32))
    d = pair_distances(emb.W, yi, yj)
    assert d[labels == 0].mean() < d[labels == 1].mean()
    assert len(emb.loss_history) == 16
    assert emb.loss_history[-1] < emb.loss_history[0]


def test_training_deterministic():
    yi, yj, labels = two_cluster_pairs(seed=1, n=40)
    cfg = DrlimConfig(beta=1.0, epochs=3, seed=9)
    a = train_embedding(yi, yj, labels, 4, cfg)
    b = train_embedding(yi, yj, labels, 4, cfg)
    assert a.W.tobytes() == b.W.tobytes()
    assert a.loss_history == b.loss_history


def test_single_similar_pair_shrinks():
    rng = np.random.RandomState(4)
    yi, yj = rng.randn(1, 6), rng.randn(1, 6)
    yj = yi + 0.5 * (yj - yi) / np.linalg.norm(yj - yi)
    cfg = DrlimConfig(epochs=30, step_size=0.5, batch_size=1)
    with pytest.warns(RuntimeWarning):
        emb = train_embedding(yi, yj, [0], 3, cfg)
    h = emb.loss_history
    assert all(b <= a for a, b in zip(h, h[1:]))
    assert h[-1] < 0.5 * h[0]


def test_train_rejects_bad_labels():
    yi = np.zeros((2, 3))
    with pytest.raises(InvalidInputError):
        train_embedding(yi, yi, [0, 2], 2, DrlimConfig())
    with pytest.raises(InvalidInputError):
        train_embedding(yi, yi[:1], [0, 1], 2, DrlimConfig())


def test_config_validation():
    for bad in ({"sigma": 0}, {"beta": -1}, {"epochs": 0}):
        with pytest.raises(InvalidInputError):
            DrlimConfig(**bad)


def test_embedding_map_invariant():
    with pytest.raises(InvalidInputError):
        EmbeddingMap(np.array([[1.0, 0.0], [0.5, 0.0]]))
    m = EmbeddingMap(np.eye(3)[:2])
    assert (m.out_dim, m.in_dim) == (2, 3)


def test_embed_grid():
    rng = np.random.RandomState(5)
    g = build_grid(32, 24)
    pg = CodeGrid(g, rng.randn(g.n_points, 6) * (rng.rand(g.n_points, 6) < 0.4))
    assert not embed_grid(pg, np.zeros((4, 6))).data.any()
    np.testing.assert_array_equal(embed_grid(pg, np.eye(6)).data, pg.data)
    W = rng.randn(4, 6)
    W /= np.maximum(1, np.linalg.norm(W, axis=0))
    out = embed_grid(pg, EmbeddingMap(W))
    assert out.grid == g and out.dim == 4
    for m in range(g.n_points):
        naive = [sum(W[r, k] * pg.data[m, k] for k in range(6)) for r in range(4)]
        np.testing.assert_allclose(out.data[m], naive, rtol=1e-12, atol=1e-12)
    with pytest.raises(InvalidInputError):
        embed_grid(pg, np.zeros((4, 5)))


def test_estimator():
    yi, yj, labels = two_cluster_pairs(seed=2, n=30)
    est = LinearDRLIM(n_components=3, beta=1.0, n_epochs=2).fit(np.stack([yi, yj], axis=1), labels)
    assert est.transform(yi).shape == (len(yi), 3)
    assert len(est.loss_history_) == 3
    assert est.get_params()["n_components"] == 3


def test_file_roundtrip():
    W = np.random.RandomState(6).randn(3, 7)
    W /= np.maximum(1, np.linalg.norm(W, axis=0))
    m = EmbeddingMap(W, sigma=16.0, beta=2.0)
    back = loads_embedding(dumps_embedding(m))
    assert back.W.tobytes() == m.W.tobytes()
    assert (back.sigma, back.beta) == (16.0, 2.0)
    text = dumps_embedding(m)
    assert text.startswith("DEEPSC-EMB v1 out=3 in=7 ")
    with pytest.raises(TruncatedPayloadError):
        loads_embedding("\n".join(text.splitlines()[:-1]))

import math

import numpy as np
import pytest
from conftest import toy_model
from oracles import fd_gradient, random_instance, reference_operator, reference_probs

from hgattack.construction import Hypergraph, build_knn
from hgattack.dataset import Dataset, gen_synthetic, make_split
from hgattack.errors import ShapeError, TrainingError
from hgattack.hgnn import (TargetEngine, TrainConfig, accuracies, forward, grad_target_row,
                           load_model, normalized_operator, save_model, target_loss, train)


def test_operator_pair_example():
    hb = normalized_operator(Hypergraph.from_dense([[1.0], [1.0]], [1.0]))
    assert np.allclose(hb, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)


def test_operator_single_node():
    assert normalized_operator(Hypergraph.from_dense([[1.0]])).tolist() == [[1.0]]


def test_operator_isolated_node():
    hb = normalized_operator(Hypergraph.from_dense([[1.0], [1.0], [0.0]]))
    assert np.all(hb[2] == 0) and np.all(hb[:, 2] == 0)


@pytest.mark.parametrize("seed", range(5))
def test_operator_matches_reference(seed):
    _, _, h, _ = random_instance(seed)
    w = np.random.default_rng(seed).uniform(0.5, 2.0, h.shape[1])
    hb = normalized_operator(Hypergraph.from_dense(h, w))
    assert np.allclose(hb, reference_operator(h, w), atol=1e-13)
    assert np.allclose(hb, hb.T, atol=1e-15)


def test_forward_hand_toy():
    h = Hypergraph.from_dense([[1.0], [1.0]])
    model = toy_model(np.eye(2), np.array([[2.0, 0.0], [0.0, 0.0]]))
    p = forward(model, h, np.eye(2))
    e = math.e
    assert np.allclose(p, [[e / (e + 1), 1 / (e + 1)]] * 2, atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_forward_matches_reference(seed):
    w0, w1, h, x = random_instance(seed)
    p = forward(toy_model(w0, w1), Hypergraph.from_dense(h), x)
    assert np.allclose(p, reference_probs(w0, w1, h, x), atol=1e-12)
    assert np.all(np.abs(p.sum(axis=1) - 1) <= 1e-9)


def test_forward_isolated_node_uniform():
    w0, w1, h, x = random_instance(0)
    h[3] = 0.0
    p = forward(toy_model(w0, w1), Hypergraph.from_dense(h), x)
    assert np.allclose(p[3], 1.0 / 3.0)


def test_forward_column_permutation_invariance():
    w0, w1, h, x = random_instance(1)
    w = np.linspace(0.5, 1.5, h.shape[1])
    perm = np.random.default_rng(0).permutation(h.shape[1])
    model = toy_model(w0, w1)
    a = forward(model, Hypergraph.from_dense(h, w), x)
    b = forward(model, Hypergraph.from_dense(h[:, perm], w[perm]), x)
    assert np.allclose(a, b, atol=1e-13)


def test_forward_shape_mismatch():
    w0, w1, h, x = random_instance(2)
    with pytest.raises(ShapeError):
        forward(toy_model(w0, w1), Hypergraph.from_dense(h), x[:, :3])
    with pytest.raises(ShapeError):
        forward(toy_model(w0, w1), Hypergraph.from_dense(h[:5]), x)


def test_target_loss_values():
    w0, _, h, x = random_instance(3)
    hg = Hypergraph.from_dense(h)
    uniform = toy_model(w0, np.zeros((6, 4)))
    assert target_loss(uniform, hg, x, 0, 2) == pytest.approx(math.log(4))
    assert target_loss(uniform, hg, x, 0, 1) == pytest.approx(1.3863, abs=1e-4)
    # one-hot label vector equals the class id
    assert target_loss(uniform, hg, x, 0, [0, 0, 1, 0]) == target_loss(uniform, hg, x, 0, 2)


def test_target_loss_confident_and_clamped():
    h = Hypergraph.from_dense([[1.0], [1.0]])
    model = toy_model(np.eye(2), np.array([[1e4, 0.0], [1e4, 0.0]]))
    assert target_loss(model, h, np.eye(2), 0, 0) == pytest.approx(0.0, abs=1e-12)
    wrong = target_loss(model, h, np.eye(2), 0, 1)
    assert wrong == pytest.approx(-math.log(1e-12))


@pytest.mark.parametrize("seed", range(4))
def test_gradient_matches_finite_differences(seed):
    w0, w1, h, x = random_instance(seed)
    t, y = seed % 12, seed % 3
    g = grad_target_row(toy_model(w0, w1), Hypergraph.from_dense(h), x, t, y)
    fd = fd_gradient(w0, w1, h, x, t, y)
    assert np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-6)) <= 1e-4


def test_gradient_at_binary_point():
    w0, w1, h, x = random_instance(9, fractional=False)
    g = grad_target_row(toy_model(w0, w1), Hypergraph.from_dense(h), x, 4, 1)
    fd = fd_gradient(w0, w1, h, x, 4, 1)
    mask = np.abs(fd) > 1e-8
    assert np.max(np.abs(g - fd)[mask] / np.abs(fd[mask])) <= 1e-4


def test_gradient_finite_at_zero_degree_column():
    w0, w1, h, x = random_instance(4)
    h[:, 2] = 0.0  # edge 2 empty everywhere, target entry 0 included
    g = grad_target_row(toy_model(w0, w1), Hypergraph.from_dense(h), x, 0, 0)
    assert np.all(np.isfinite(g))


def test_frozen_gradient_differs():
    w0, w1, h, x = random_instance(5)
    model, hg = toy_model(w0, w1), Hypergraph.from_dense(h)
    full = grad_target_row(model, hg, x, 1, 0)
    frozen = grad_target_row(model, hg, x, 1, 0, frozen=True)
    assert frozen.shape == full.shape and not np.allclose(frozen, full)


def test_engine_consistency():
    w0, w1, h, x = random_instance(6)
    model, hg = toy_model(w0, w1), Hypergraph.from_dense(h)
    eng = TargetEngine(model, hg, x, 3, 2)
    assert eng.loss() == pytest.approx(target_loss(model, hg, x, 3, 2), abs=1e-13)
    r = np.random.default_rng(0).random(h.shape[1])
    h2 = h.copy()
    h2[3] = r
    assert eng.loss(r) == pytest.approx(target_loss(model, Hypergraph.from_dense(h2), x, 3, 2),
                                        abs=1e-13)
    edges = np.flatnonzero(r > 0.3)
    r_sub = np.where(r > 0.3, r, 0.0)
    local = eng.restricted(edges)
    loss_l, grad_l = local.loss_and_grad(r_sub[edges][None])
    loss_f, grad_f = eng.loss_and_grad(r_sub)
    assert loss_l[0] == pytest.approx(loss_f, abs=1e-13)
    assert np.allclose(grad_l[0], grad_f[edges], atol=1e-13)


def test_overtrained_gradient_vanishes():
    d = gen_synthetic(12, 3, 5, 0.1, 1)
    h = build_knn(d.features, 3)
    split = make_split(d, 4, 0, 0, 0)
    model = train(d, h, split, TrainConfig(learning_rate=0.1, epochs=3000, weight_decay=0.0))
    g = grad_target_row(model, h, d.features, 0, d.labels[0])
    assert np.linalg.norm(g) <= 1e-6


def test_train_separable_fits():
    d = gen_synthetic(80, 4, 8, 0.0, 0)
    h = build_knn(d.features, 4)
    split = make_split(d, 5, 10, 20, 0)
    model = train(d, h, split)
    assert accuracies(model, d, h, split)["train"] == 1.0


def test_train_deterministic_and_fixture_accuracy(synth):
    again = train(synth.d, synth.h, synth.split)
    assert np.array_equal(again.w0, synth.model.w0)
    assert np.array_equal(again.w1, synth.model.w1)
    assert accuracies(synth.model, synth.d, synth.h, synth.split)["test"] >= 0.9


def test_train_loss_non_increasing(synth):
    losses = np.array([r["loss"] for r in synth.model.history])
    assert np.all(np.diff(losses) <= 1e-6)


def test_train_nan_names_epoch():
    d = gen_synthetic(20, 2, 3, 0.5, 0)
    bad = Dataset(np.full_like(d.features, np.nan), d.labels, d.node_ids, 2)
    h = build_knn(d.features, 3)
    with pytest.raises(TrainingError) as err:
        train(bad, h, make_split(d, 2, 2, 2, 0), TrainConfig(epochs=3))
    assert err.value.epoch == 0


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def test_checkpoint_round_trip(tmp_path, synth):
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_model(synth.model, p1, extra={"note": 1})
    loaded, meta = load_model(p1)
    assert loaded == synth.model and meta == {"note": 1}
    assert loaded.config == synth.model.config
    save_model(loaded, p2, extra={"note": 1})
    assert p1.read_bytes() == p2.read_bytes()

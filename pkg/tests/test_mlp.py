from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lcsurrogate import dataset, mlp, qstate
from lcsurrogate.errors import DataError, DimensionMismatch, EmptyDataset
from lcsurrogate.mlp import AdamState, Layer, MlpModel, TrainConfig

H_FD = 1e-5


def rel_err(a, b, floor=1e-6):
    """Entrywise relative error; ``floor`` keeps zero gradients from dividing by zero."""
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numeric_param_grads(model, objective):
    out = []
    for layer in model.layers:
        pair = []
        for p in (layer.weight, layer.bias):
            g = np.zeros_like(p)
            for i in np.ndindex(p.shape):
                old = p[i]
                p[i] = old + H_FD
                up = objective()
                p[i] = old - H_FD
                down = objective()
                p[i] = old
                g[i] = (up - down) / (2 * H_FD)
            pair.append(g)
        out.append(tuple(pair))
    return out


def random_net(rng, n_in, n_out, act="linear"):
    depth = int(rng.integers(1, 4))
    sizes = [n_in] + [int(rng.integers(2, 7)) for _ in range(depth)] + [n_out]
    return mlp.build(sizes, act, rng)


@pytest.mark.parametrize("act", ["linear", "sigmoid_scaled"])
def test_backprop_matches_finite_differences(act):
    rng = np.random.default_rng(11)
    for _ in range(3):
        model = random_net(rng, 3, 4, act)
        x = rng.uniform(0, 1, size=(7, 3))
        y = rng.normal(size=(7, 4))
        _, grads, gx = mlp.backprop_batch(model, x, y)
        num = numeric_param_grads(model, lambda: mlp.mse(mlp.forward(model, x), y)[0])
        for (gw, gb), (nw, nb) in zip(grads, num):
            assert rel_err(gw, nw).max() < 1e-5
            assert rel_err(gb, nb).max() < 1e-5
        # input gradient too
        ngx = np.zeros_like(x)
        for i in np.ndindex(x.shape):
            xp, xm = x.copy(), x.copy()
            xp[i] += H_FD
            xm[i] -= H_FD
            ngx[i] = (mlp.mse(mlp.forward(model, xp), y)[0] - mlp.mse(mlp.forward(model, xm), y)[0]) / (2 * H_FD)
        assert rel_err(gx, ngx).max() < 1e-5


def test_compound_gradient_through_frozen_network():
    rng = np.random.default_rng(12)
    for _ in range(2):
        inverse = random_net(rng, 4, 3, "sigmoid_scaled")
        direct = random_net(rng, 3, 4, "linear")
        direct.trainable = False
        states = qstate.random_rho4(6, rng)
        loss, grads, dgrads, _ = mlp.compound_loss_and_grads(inverse, direct, states, logit_bound=0.5, logit_penalty=0.3)
        assert dgrads is None

        def objective():
            return mlp.compound_loss_and_grads(inverse, direct, states, logit_bound=0.5, logit_penalty=0.3)[0]

        assert objective() == loss
        num = numeric_param_grads(inverse, objective)
        for (gw, gb), (nw, nb) in zip(grads, num):
            assert rel_err(gw, nw).max() < 1e-5
            assert rel_err(gb, nb).max() < 1e-5


def test_logit_guard():
    z = np.array([[-5.0, 0.0, 4.5]])
    loss, g = mlp.logit_guard(z, 4.0, 2.0)
    assert loss == pytest.approx(2.0 * (1.0 + 0.25) / 3)
    assert np.allclose(g, 2 * 2.0 * np.array([[-1.0, 0.0, 0.5]]) / 3)
    assert mlp.logit_guard(np.zeros((2, 3)), 4.0, 1.0)[0] == 0.0


def test_build_initialization_bounds():
    model = mlp.build([3, 64, 64, 4], "linear", 0)
    w0, w1, w2 = (l.weight for l in model.layers)
    assert np.abs(w0).max() <= math.sqrt(6 / 3)
    assert np.abs(w1).max() <= math.sqrt(6 / 64)
    assert np.abs(w2).max() <= 1 / 8
    assert np.abs(w1).max() > 0.9 * math.sqrt(6 / 64)
    assert [l.activation for l in model.layers] == ["relu", "relu", "linear"]


def test_build_is_seeded():
    a = mlp.build([3, 8, 4], seed=5)
    b = mlp.build([3, 8, 4], seed=5)
    assert a.weights_digest() == b.weights_digest()


def test_count_params():
    model = mlp.build(mlp.architecture(3, 4, 8, 64))
    expected = 3 * 64 + 64 + 7 * (64 * 64 + 64) + 64 * 4 + 4
    assert mlp.count_params(model) == expected == mlp.count_params_for(3, 4, 8, 64)
    model.trainable = False
    assert mlp.count_params(model) == 0


def test_forward_shapes_and_errors():
    model = mlp.build([3, 5, 4])
    assert model(np.zeros(3)).shape == (4,)
    assert model(np.zeros((2, 3))).shape == (2, 4)
    with pytest.raises(DimensionMismatch):
        model(np.zeros((2, 4)))
    with pytest.raises(DimensionMismatch):
        MlpModel([Layer(np.zeros((3, 5)), np.zeros(5)), Layer(np.zeros((4, 2)), np.zeros(2))])
    with pytest.raises(DataError):
        Layer(np.zeros((1, 1)), np.zeros(1), "tanh")


def test_sigmoid_output_stays_in_unit_interval():
    model = mlp.build([4, 6, 3], "sigmoid_scaled", 0)
    model.layers[-1].weight *= 1e4
    out = model(np.random.default_rng(0).normal(size=(100, 4)))
    assert np.all((out >= 0) & (out <= 1))


def test_dropout_scaling_and_off_switch(rng):
    model = mlp.build([3, 50, 4], seed=1)
    x = rng.uniform(size=(20, 3))
    out, _ = mlp.forward_cache(model, x, 0.0)
    assert np.array_equal(out, mlp.forward(model, x))
    _, (_, _, masks) = mlp.forward_cache(model, x, 0.5, np.random.default_rng(0))
    assert set(np.unique(masks[0])) <= {0.0, 2.0}
    assert masks[-1] is None


def test_adam_matches_hand_computation():
    model = MlpModel([Layer(np.array([[1.0]]), np.array([0.0]), "linear")])
    state = AdamState.zeros_like(model)
    g = [(np.array([[0.5]]), np.array([0.0]))]
    mlp.adam_step(model, g, state, lr=0.1)
    # the first bias-corrected step has magnitude lr regardless of gradient scale
    assert model.layers[0].weight[0, 0] == pytest.approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8))
    mlp.adam_step(model, [(np.array([[-0.5]]), np.array([0.0]))], state, lr=0.1)
    m = 0.9 * 0.05 + 0.1 * -0.5
    v = 0.999 * 0.00025 + 0.001 * 0.25
    step = 0.1 * (m / (1 - 0.81)) / (math.sqrt(v / (1 - 0.999**2)) + 1e-8)
    assert model.layers[0].weight[0, 0] == pytest.approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8) - step)


def test_lr_schedule():
    cfg = TrainConfig(epochs=101, learning_rate=1e-3)
    assert mlp._lr_at(cfg, 0) == 1e-3
    assert mlp._lr_at(cfg, 60) == 1e-3
    assert mlp._lr_at(cfg, 100) == pytest.approx(3e-5)
    lrs = [mlp._lr_at(cfg, e) for e in range(101)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    flat = cfg.replace(lr_final_factor=1.0)
    assert {mlp._lr_at(flat, e) for e in range(101)} == {1e-3}


def test_train_config_validation():
    with pytest.raises(DataError):
        TrainConfig(hidden_layers=0)
    with pytest.raises(DataError):
        TrainConfig(learning_rate=0)
    with pytest.raises(DataError):
        TrainConfig(dropout_rate=1.0)
    with pytest.raises(DataError):
        TrainConfig(lr_decay_start=1.5)
    cfg = TrainConfig(epochs=3)
    assert TrainConfig.from_dict({**cfg.to_dict(), "unknown": 1}) == cfg


def test_hazen_percentiles():
    stats = mlp.infidelity_stats(np.arange(1, 11, dtype=float))
    # Hazen positions put the 5th percentile halfway to the first point at (k - 1/2)/n
    assert stats.p5 == 1.0 and stats.p95 == 10.0
    stats = mlp.infidelity_stats(np.arange(1, 101, dtype=float))
    assert stats.p5 == pytest.approx(5.5) and stats.p95 == pytest.approx(95.5)
    assert stats.mean == 50.5 and stats.n == 100
    with pytest.raises(EmptyDataset):
        mlp.infidelity_stats([])


@pytest.fixture(scope="module")
def small_data(noiseless_device):
    d = dataset.generate(1500, device=noiseless_device, seed=3)
    return dataset.split(d, dataset.SplitSpec(1000, 250, 250, seed=3))


@pytest.fixture(scope="module")
def small_direct(small_data):
    train, val, _ = small_data
    return mlp.train_direct(train, val, TrainConfig(hidden_layers=4, neurons_per_layer=32, epochs=300, batch_size=64, seed=1))


def test_train_direct_learns_and_is_deterministic(small_data, small_direct):
    train, val, test = small_data
    stats = mlp.evaluate(mlp.DirectPredictor(small_direct), test)
    baseline = mlp.evaluate(lambda v: np.tile(train.states.mean(axis=0), (len(v), 1)), test)
    assert stats.mean < 0.2 * baseline.mean
    assert small_direct.meta["val_mean_infidelity"] == pytest.approx(mlp.evaluate(mlp.DirectPredictor(small_direct), val).mean)
    again = mlp.train_direct(train, val, TrainConfig(hidden_layers=4, neurons_per_layer=32, epochs=300, batch_size=64, seed=1))
    assert again.weights_digest() == small_direct.weights_digest()


def test_train_direct_history(small_data):
    train, val, _ = small_data
    hist: list = []
    mlp.train_direct(train, val, TrainConfig(hidden_layers=1, neurons_per_layer=8, epochs=4, eval_every=2), history=hist)
    assert [h["epoch"] for h in hist] == [2, 4]
    with pytest.raises(EmptyDataset):
        mlp.train_direct(train.take([]), val)


def test_train_compound_freezes_direct(small_data, small_direct):
    train, val, test = small_data
    digest = small_direct.weights_digest()
    model = mlp.train_compound(small_direct, train, val, TrainConfig(hidden_layers=2, neurons_per_layer=16, epochs=5, seed=2))
    assert small_direct.weights_digest() == digest == model.direct.weights_digest()
    assert not model.direct.trainable
    v = model.voltages(test.states)
    assert v.shape == (len(test), 3) and v.min() >= 0 and v.max() <= 10
    rec = model.reconstruct(test.states)
    assert np.all(np.abs(qstate.purity4(rec)) <= 1 + 1e-12)


def test_compound_restarts_keep_the_best_run(small_data, small_direct):
    train, val, _ = small_data
    cfg = TrainConfig(hidden_layers=2, neurons_per_layer=8, epochs=3, seed=5, restarts=3)
    history: list = []
    model = mlp.train_compound(small_direct, train, val, cfg, history=history)
    scores = model.inverse.meta["restart_val"]
    assert len(scores) == 3 and [r["seed"] for r in history] == [5, 5, 5, 6, 6, 6, 7, 7, 7]
    assert model.inverse.meta["init_seed"] == 5 + int(np.argmin(scores))
    assert model.inverse.meta["val_mean_infidelity"] == min(scores)
    # the kept run is the plain run of its seed
    single = mlp.train_compound(small_direct, train, val, cfg.replace(restarts=1, seed=model.inverse.meta["init_seed"]))
    assert single.inverse.weights_digest() == model.inverse.weights_digest()


def test_model_serialization_roundtrip(tmp_path, small_direct, small_data):
    train, val, _ = small_data
    path = tmp_path / "m.json"
    small_direct.save(path)
    back = MlpModel.load(path)
    assert back.weights_digest() == small_direct.weights_digest()
    assert back.meta == small_direct.meta
    comp = mlp.train_compound(small_direct, train, val, TrainConfig(hidden_layers=1, neurons_per_layer=8, epochs=1))
    comp.save(tmp_path / "c.json")
    loaded = mlp.CompoundModel.load(tmp_path / "c.json")
    assert np.array_equal(loaded.voltages(val.states), comp.voltages(val.states))
    assert not loaded.direct.trainable


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 16))
def test_count_params_formula(layers, neurons):
    model = mlp.build(mlp.architecture(3, 4, layers, neurons))
    assert mlp.count_params(model) == mlp.count_params_for(3, 4, layers, neurons)

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import RBFInterpolator, RegularGridInterpolator

from lcsurrogate import baselines, dataset, mlp, qstate
from lcsurrogate.errors import DataError, DimensionMismatch, DuplicateCenters, IncompleteGrid, OutOfDomain


def smooth(x):
    return np.stack([np.sin(3 * x[:, 0]) + x[:, 1] ** 2, np.cos(2 * x[:, 2]) * x[:, 0]], axis=1)


@pytest.fixture(scope="module")
def scattered():
    rng = np.random.default_rng(21)
    return rng.uniform(0, 1, size=(500, 3))


@pytest.mark.parametrize("name", baselines.KERNELS)
def test_interpolation_condition(name, scattered):
    y = smooth(scattered)
    model = baselines.rbf_fit(scattered, y, name)
    assert np.abs(baselines.rbf_eval(model, scattered) - y).max() < 1e-6


@pytest.mark.parametrize("name", baselines.KERNELS)
def test_matches_scipy_interpolator(name):
    rng = np.random.default_rng(22)
    x = rng.uniform(0, 1, size=(120, 3))
    q = rng.uniform(0, 1, size=(50, 3))
    y = smooth(x)
    model = baselines.rbf_fit(x, y, name, shape_epsilon=2.0)
    oracle = RBFInterpolator(x, y, kernel=name, epsilon=2.0, degree=-1)
    assert np.abs(baselines.rbf_eval(model, q) - oracle(q)).max() < 1e-6


def test_kernel_formulas():
    r = np.array([0.0, 0.5, 2.0])
    assert np.allclose(baselines.kernel("linear", r, 1), r)
    assert np.allclose(baselines.kernel("cubic", r, 1), r**3)
    assert np.allclose(baselines.kernel("quintic", r, 1), r**5)
    assert np.allclose(baselines.kernel("multiquadric", r, 2), np.sqrt(1 + (2 * r) ** 2))
    assert np.allclose(baselines.kernel("inverse_multiquadric", r, 2), 1 / np.sqrt(1 + (2 * r) ** 2))
    assert np.allclose(baselines.kernel("gaussian", r, 2), np.exp(-((2 * r) ** 2)))
    with pytest.raises(DataError):
        baselines.kernel("thin_plate", r, 1)


def test_default_shape_parameter(scattered):
    model = baselines.rbf_fit(scattered, smooth(scattered), "gaussian")
    d = np.sort(np.linalg.norm(scattered[:, None] - scattered[None], axis=2), axis=1)[:, 1]
    assert model.shape_epsilon == pytest.approx(1 / d.mean())


def test_rbf_errors():
    x = np.array([[0.0, 0, 0], [0, 0, 0], [1, 1, 1]])
    with pytest.raises(DuplicateCenters):
        baselines.rbf_fit(x, np.zeros(3))
    with pytest.raises(DataError):
        baselines.rbf_fit(x[:1], np.zeros(1))
    model = baselines.rbf_fit(x[1:], np.zeros(2))
    with pytest.raises(DimensionMismatch):
        baselines.rbf_eval(model, np.zeros((1, 2)))


def test_rbf_chunked_eval_matches_single_rows(scattered):
    model = baselines.rbf_fit(scattered[:100], smooth(scattered[:100]), "quintic")
    q = np.random.default_rng(0).uniform(size=(5000, 3))
    full = baselines.rbf_eval(model, q)
    assert np.allclose(full[4321], baselines.rbf_eval(model, q[4321]), rtol=0, atol=1e-12)


def affine(x):
    return x @ np.array([[1.5, -2.0], [0.3, 0.0], [-0.7, 4.0]]) + np.array([0.25, -1.0])


def uneven_lattice():
    axes = (np.array([0.0, 0.1, 0.5, 1.0]), np.array([0.0, 0.7, 1.0]), np.linspace(0, 1, 5))
    g = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return axes, g


def test_trilinear_exact_on_affine():
    _, g = uneven_lattice()
    model = baselines.grid_fit(g[::-1], affine(g[::-1]))  # node order does not matter
    q = np.random.default_rng(3).uniform(0, 1, size=(1000, 3))
    assert np.abs(baselines.grid_eval(model, q) - affine(q)).max() < 1e-10


def test_trilinear_matches_scipy():
    axes, g = uneven_lattice()
    y = smooth(g)
    model = baselines.grid_fit(g, y)
    oracle = RegularGridInterpolator(axes, y.reshape(4, 3, 5, 2))
    q = np.random.default_rng(4).uniform(0, 1, size=(500, 3))
    assert np.abs(baselines.grid_eval(model, q) - oracle(q)).max() < 1e-12
    # nodes and the upper corner are reproduced exactly
    assert np.abs(baselines.grid_eval(model, g) - y).max() < 1e-14


def test_grid_errors():
    _, g = uneven_lattice()
    with pytest.raises(IncompleteGrid):
        baselines.grid_fit(g[1:], smooth(g[1:]))
    model = baselines.grid_fit(g, smooth(g))
    with pytest.raises(OutOfDomain):
        baselines.grid_eval(model, np.array([0.5, 0.5, 1.1]))
    with pytest.raises(DimensionMismatch):
        baselines.grid_eval(model, np.zeros((1, 2)))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=3, max_size=3))
def test_trilinear_affine_property(point):
    _, g = uneven_lattice()
    model = baselines.grid_fit(g, affine(g))
    q = np.array([point])
    assert np.abs(baselines.grid_eval(model, q) - affine(q)).max() < 1e-10


def test_clamp_tau():
    out = baselines.clamp_tau(np.array([[-0.1, 0.2, -0.3, 0.4]]))
    assert out.tolist() == [[0.0, 0.2, -0.3, 0.4]]


def test_local_linear_inverse_is_exact_on_affine(rng):
    states = qstate.random_rho4(300, rng)
    s = qstate.bloch4(states)
    target = s @ np.array([[0.1, 0.2, 0.0], [0.0, -0.1, 0.3], [0.2, 0.0, 0.1]]) + 0.5
    inv = baselines.LocalLinearInverse(states, target)
    q = qstate.random_rho4(50, rng)
    expected = qstate.bloch4(q) @ np.array([[0.1, 0.2, 0.0], [0.0, -0.1, 0.3], [0.2, 0.0, 0.1]]) + 0.5
    assert np.abs(inv(q) - expected).max() < 1e-6


@pytest.fixture(scope="module")
def twin_small(noiseless_device):
    d = dataset.generate(1200, device=noiseless_device, seed=5)
    return dataset.split(d, dataset.SplitSpec(1000, 100, 100, seed=5))


def test_direct_rbf_reproduces_training_states(twin_small):
    train, _, test = twin_small
    pred = baselines.fit_direct_rbf(train, "cubic")
    assert mlp.evaluate(pred, train).mean < 1e-9
    assert mlp.evaluate(pred, test).mean < 0.2


def test_inverse_rbf_interpolation_condition(twin_small):
    train, _, _ = twin_small
    direct = baselines.fit_direct_rbf(train, "cubic")
    comp = baselines.fit_inverse_baseline("rbf", train, direct)
    # in the regressor's own normalized units (v / 10); the state -> voltage system is
    # ill-conditioned enough that float64 evaluation alone costs a few 1e-7 here
    assert np.abs(comp.normalized_voltages(train.states) - train.voltages / 10).max() < 1e-6
    # hence at training states the compound error is the direct error at the recorded voltages
    assert mlp.evaluate(comp, train).mean == pytest.approx(mlp.evaluate(direct, train).mean, abs=1e-9)


def test_compound_voltages_in_range(twin_small):
    train, _, test = twin_small
    grid = dataset.generate(8**3, "grid", device=train.device)
    direct = baselines.fit_direct_grid(grid)
    for method in ("rbf", "grid"):
        comp = baselines.fit_inverse_baseline(method, train, direct)
        v = comp.voltages(test.states)
        assert v.min() >= 0 and v.max() <= 10
    with pytest.raises(DataError):
        baselines.fit_inverse_baseline("spline", train, direct)


def test_save_load_roundtrip(tmp_path, twin_small):
    train, _, test = twin_small
    grid = dataset.generate(5**3, "grid", device=train.device)
    for direct in (baselines.fit_direct_rbf(train.take(np.arange(200))), baselines.fit_direct_grid(grid)):
        baselines.save_model(direct.model, tmp_path / "d.json")
        back = baselines.direct_predictor(baselines.load_model(tmp_path / "d.json").to_dict())
        assert np.array_equal(back(test.voltages), direct(test.voltages))
        for method in ("rbf", "grid"):
            comp = baselines.fit_inverse_baseline(method, train.take(np.arange(200)), direct)
            baselines.save_model(comp, tmp_path / "c.json")
            loaded = baselines.load_model(tmp_path / "c.json")
            assert np.array_equal(loaded.reconstruct(test.states), comp.reconstruct(test.states))
    (tmp_path / "x.json").write_text('{"kind": "mlp"}')
    with pytest.raises(DataError):
        baselines.load_model(tmp_path / "x.json")

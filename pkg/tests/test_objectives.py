import numpy as np
import pytest
from hypothesis import given, strategies as st

from zostab.objectives import (Dataset, FiniteDifferenceHvp, MlpModel, ObjectiveError,
                               QuadraticModel, make_synthetic_dataset, mlp_hvp, mlp_value_grad,
                               n_params, quad_gradient, quad_hvp, quad_value)
from zostab.rng import RngStream

from conftest import random_spd


def _mlp(seed=0, widths=(8, 16, 4), act="tanh"):
    ds = make_synthetic_dataset(64, widths[0], widths[-1], "clusters", RngStream(seed, 1))
    return MlpModel.init(widths, act, RngStream(seed, 2), dataset=ds)


def test_quadratic_one_d():
    q = QuadraticModel.from_spectrum([2.0])
    assert quad_value(q, [1.0]) == 1.0
    assert np.array_equal(quad_gradient(q, [1.0]), [2.0])


def test_quadratic_at_minimizer():
    q = QuadraticModel([1.0, -2.0], [3.0, 1.0], offset=0.5)
    assert quad_value(q, [1.0, -2.0]) == 0.5
    assert np.array_equal(quad_gradient(q, [1.0, -2.0]), [0.0, 0.0])


def test_quadratic_hvp_dense(rng):
    h = random_spd(rng, 5)
    q = QuadraticModel(np.zeros(5), h)
    v = rng.standard_normal(5)
    assert np.allclose(quad_hvp(q, v), h @ v, rtol=0, atol=1e-12)


def test_quadratic_rejects_bad_input():
    with pytest.raises(ObjectiveError):
        QuadraticModel.from_spectrum([0.0, 0.0])
    with pytest.raises(ObjectiveError):
        QuadraticModel.from_spectrum([1.0, -1.0])
    q = QuadraticModel.from_spectrum([1.0, 2.0])
    with pytest.raises(ObjectiveError):
        q.value([1.0])


def test_zero_network_zero_targets():
    ds = Dataset(RngStream(0).gaussian(10, 3), np.zeros((10, 2)))
    m = MlpModel((3, 5, 2), "tanh", np.zeros(n_params((3, 5, 2))), ds)
    f, g = mlp_value_grad(m)
    assert f == 0.0 and np.all(g == 0.0)


def _fd_grad(m, x, h=1e-5):
    g = np.empty_like(x)
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (m.value(x + e) - m.value(x - e)) / (2 * h)
    return g


@pytest.mark.parametrize("act", ["tanh", "gelu"])
def test_gradient_matches_finite_differences(act):
    m = _mlp(3, act=act)
    s = RngStream(7)
    for k in range(20 if act == "tanh" else 3):
        x = m.params + 0.3 * s.gaussian(m.dim)
        g = m.gradient(x)
        fd = _fd_grad(m, x)
        rel = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-3)
        assert rel.max() <= 1e-4


def test_single_linear_layer_least_squares(rng):
    x_in = np.eye(3)
    y = rng.standard_normal((3, 2))
    ds = Dataset(x_in, y)
    m = MlpModel((3, 2), params=rng.standard_normal(n_params((3, 2))), dataset=ds)
    w = m.params[:6].reshape(2, 3)
    b = m.params[6:]
    r = x_in @ w.T + b - y
    gw = r.T @ x_in / 3
    gb = r.sum(axis=0) / 3
    f, g = m.value_grad(m.params)
    assert np.isclose(f, np.sum(r * r) / 6)
    assert np.allclose(g, np.concatenate([gw.ravel(), gb]), atol=1e-12)


def test_fd_hvp_on_quadratic(rng):
    h = random_spd(rng, 6)
    q = QuadraticModel(rng.standard_normal(6), h)
    w = FiniteDifferenceHvp(q)
    x, v = rng.standard_normal(6), rng.standard_normal(6)
    hv = w.hvp(x, v)
    assert np.linalg.norm(hv - h @ v) <= 1e-8 * np.linalg.norm(h @ v)


@given(st.integers(0, 2**32 - 1))
def test_hvp_linearity_and_symmetry(seed):
    m = _mlp(1)
    s = RngStream(seed)
    x = m.params + 0.1 * s.gaussian(m.dim)
    v, w = s.gaussian(m.dim), s.gaussian(m.dim)
    hv, hw = m.hvp(x, v), m.hvp(x, w)
    h2v = m.hvp(x, 2 * v)
    assert np.linalg.norm(h2v - 2 * hv) <= 1e-6 * np.linalg.norm(2 * hv)
    a, b = w @ hv, v @ hw
    assert abs(a - b) <= 1e-5 * max(abs(a), abs(b), np.linalg.norm(hv) * np.linalg.norm(w) * 1e-3)


def test_hvp_block_matches_columns():
    m = _mlp(2)
    v = RngStream(4).gaussian(m.dim, 3)
    blk = m.hvp(m.params, v)
    for j in range(3):
        assert np.allclose(blk[:, j], m.hvp(m.params, v[:, j]), rtol=1e-9, atol=1e-9)
    assert np.allclose(mlp_hvp(m, None, v[:, 0]), blk[:, 0])


def test_hvp_rejects_zero_direction():
    m = _mlp(0)
    with pytest.raises(ObjectiveError):
        m.hvp(m.params, np.zeros(m.dim))


def test_dataset_properties():
    ds = make_synthetic_dataset(64, 8, 4, "clusters", RngStream(0))
    assert np.allclose(ds.targets.sum(axis=1), 1.0)
    assert set(np.unique(ds.targets)) == {0.0, 1.0}
    assert np.all(np.abs(ds.inputs.mean(axis=0)) <= 1e-10)
    t = make_synthetic_dataset(32, 5, 2, "teacher", RngStream(0))
    assert np.all(np.abs(t.inputs.mean(axis=0)) <= 1e-10)


def test_teacher_reproducible():
    a = make_synthetic_dataset(32, 5, 2, "teacher", RngStream(11))
    b = make_synthetic_dataset(32, 5, 2, "teacher", RngStream(11))
    assert np.array_equal(a.targets, b.targets)


def test_dataset_csv_roundtrip(tmp_path):
    ds = make_synthetic_dataset(16, 3, 2, "clusters", RngStream(0))
    p = tmp_path / "d.csv"
    ds.to_csv(p)
    assert p.read_text().splitlines()[0] == "x0,x1,x2,y0,y1"
    back = Dataset.from_csv(p, classification=True)
    assert np.array_equal(back.inputs, ds.inputs) and np.array_equal(back.targets, ds.targets)


def test_param_count():
    assert _mlp().dim == 9 * 16 + 17 * 4

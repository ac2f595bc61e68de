import math

import numpy as np
import pytest

from qbsde.model import (
    ModelError,
    TimeGrid,
    dirichlet_eigenvalues,
    semigroup_apply,
    simpson_weights,
    sine_basis,
    spec_from_dict,
    validate_spec,
)


def _spec(**kw):
    cfg = {"dim": 1, "horizon": 1.0}
    cfg.update(kw)
    return spec_from_dict(cfg)


def test_brownian_spec_validates():
    rep = validate_spec(_spec())
    assert rep.passed
    assert rep.check("lipschitz_F").declared == 0.0
    assert rep.check("bounded_G").declared == 1.0


def test_linear_drift_lipschitz_ratio_is_one():
    rep = validate_spec(_spec(drift={"kind": "linear", "params": {"matrix": [[-1.0]]}}))
    assert rep.passed
    assert rep.check("lipschitz_F").measured == pytest.approx(1.0, rel=1e-9)


def test_tanh_drift_slope_scan():
    spec = _spec(dim=4, drift={"kind": "tanh-saturated", "params": {"scale": 2.0}})
    rng = np.random.default_rng(5)
    x, y = rng.normal(0, 2, (10_000, 4)), rng.normal(0, 2, (10_000, 4))
    fx, fy = spec.drift(0.0, x), spec.drift(0.0, y)
    slopes = np.linalg.norm(fx - fy, axis=1) / np.linalg.norm(x - y, axis=1)
    assert slopes.max() <= 2.0
    assert spec.lipschitz_f == 2.0


def test_semigroup_identity_at_zero():
    spec = _spec(dim=3, eigenvalues="dirichlet")
    v = np.array([0.3, -1.0, 2.0])
    assert np.array_equal(semigroup_apply(spec, 0.0, v), v)


def test_semigroup_first_dirichlet_mode():
    spec = _spec(eigenvalues="dirichlet")
    # e^{-pi^2}
    assert semigroup_apply(spec, 1.0, [1.0])[0] == pytest.approx(5.1723e-5, rel=1e-4)


def test_semigroup_composition():
    spec = _spec(dim=4, eigenvalues="dirichlet")
    v = np.array([1.0, -0.5, 0.25, 2.0])
    two = semigroup_apply(spec, 0.03, semigroup_apply(spec, 0.02, v))
    np.testing.assert_allclose(two, semigroup_apply(spec, 0.05, v), rtol=1e-14)


def test_dirichlet_spectrum():
    lam = -dirichlet_eigenvalues(2)
    assert lam[0] == pytest.approx(9.8696, abs=1e-4)
    assert lam[1] == pytest.approx(39.478, abs=1e-3)


def test_simpson_is_exact_on_sine_products():
    xi, basis = sine_basis(6)
    w = simpson_weights()
    gram = basis.T @ (w[:, None] * basis)
    np.testing.assert_allclose(gram, np.eye(6), atol=1e-12)


def test_simpson_needs_odd_nodes():
    with pytest.raises(ModelError):
        simpson_weights(256)


def test_degenerate_grid():
    g = TimeGrid(0.4, 0.4, 10)
    assert g.steps == 0 and g.dt == 0.0
    np.testing.assert_array_equal(g.nodes, [0.4])


@pytest.mark.parametrize("bad", [{"dim": 0, "horizon": 1.0}, {"dim": 1, "horizon": 0.0}, {"dim": 1}])
def test_bad_spec_rejected(bad):
    with pytest.raises(ModelError):
        spec_from_dict(bad)


def test_grid_nodes_and_sub():
    g = TimeGrid(0.0, 1.0, 8)
    assert g.node(8) == 1.0
    sub = g.sub(6)
    assert sub.steps == 2 and math.isclose(sub.t0, 0.75) and math.isclose(sub.dt, g.dt)

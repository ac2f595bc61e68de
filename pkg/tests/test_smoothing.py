import numpy as np
import pytest

from qbsde import smoothing as sm


def brute_inf_sup(x, values, n, reach=1.5):
    """Double scan over a lattice extended by boundary values."""
    h = x[1] - x[0]
    pad = int(np.ceil(reach / h))
    ext = np.concatenate([x[0] - h * np.arange(pad, 0, -1), x, x[-1] + h * np.arange(1, pad + 1)])
    f = np.concatenate([np.full(pad, values[0]), values, np.full(pad, values[-1])])
    inner = np.min(f[None, :] + 0.5 * n * (ext[:, None] - ext[None, :]) ** 2, axis=1)
    return np.max(inner[None, :] - n * (x[:, None] - ext[None, :]) ** 2, axis=1)


def _abs_grid(points=2048):
    return sm.GriddedFunction.sample(lambda p: np.abs(p[:, 0]), -2.0, 2.0, points)


def test_constants_are_fixed_points():
    phi = sm.GriddedFunction.sample(lambda p: np.full(p.shape[0], 0.7), [-1, -1], [1, 1], [21, 11])
    for n in (2.0, 8.0, 32.0, 128.0):
        np.testing.assert_array_equal(sm.inf_sup_values(phi, n), phi.values)


def test_abs_matches_scan_oracle():
    phi = _abs_grid()
    out = sm.inf_sup_terminal(phi, 128.0)
    np.testing.assert_allclose(out.values, brute_inf_sup(phi.axes[0], phi.values, 128.0), atol=1e-12)
    assert out.sup_distance <= 0.05
    assert out.lipschitz <= 1 + 1e-9


def test_abs_sup_distance_monotone():
    phi = _abs_grid(1025)
    dist = [sm.inf_sup_terminal(phi, n).sup_distance for n in (2.0, 8.0, 32.0, 128.0)]
    assert all(b <= a for a, b in zip(dist, dist[1:]))
    assert dist[0] >= 2 * dist[-1]


def test_envelope_and_scan_agree_in_2d():
    rng = np.random.default_rng(3)
    axes = (np.linspace(-1, 1, 17), np.linspace(0, 2, 13))
    phi = sm.GriddedFunction(axes, rng.normal(size=(17, 13)))
    np.testing.assert_allclose(sm.inf_sup_values(phi, 5.0, "envelope"), sm.inf_sup_values(phi, 5.0, "scan"), atol=1e-12)


def test_constant_weighted_driver_unchanged():
    psi = sm.GriddedFunction.sample(lambda p: 1.0 + np.sum(p**2, axis=1), [-3, -3], [3, 3], 41)
    out = sm.inf_sup_driver(psi, 8.0, [0, 1])
    np.testing.assert_allclose(out.values, psi.values, rtol=1e-14)
    assert out.sup_distance == pytest.approx(0.0, abs=1e-15)


def test_quadratic_driver_distance_halves():
    psi = sm.GriddedFunction.sample(lambda p: 0.5 * p[:, 0] ** 2, -5.0, 5.0, 2001, labels=("z",))
    d8 = sm.inf_sup_driver(psi, 8.0, [0]).sup_distance
    d32 = sm.inf_sup_driver(psi, 32.0, [0]).sup_distance
    d128 = sm.inf_sup_driver(psi, 128.0, [0]).sup_distance
    assert d32 <= 0.5 * d8 and d128 < d32


def test_y_lipschitz_preserved_on_three_axes():
    # x, y, z axes of a driver that is Lipschitz in y with constant 0.5
    psi = sm.GriddedFunction.sample(
        lambda p: np.cos(p[:, 0]) + 0.5 * np.tanh(p[:, 1]) - 0.25 * p[:, 2] ** 2,
        [-1, -2, -3], [1, 2, 3], [11, 41, 61], labels=("x", "y", "z"),
    )
    out = sm.inf_sup_driver(psi, 8.0, [2])
    assert out.slopes()[1] <= psi.slopes()[1] + 1e-9


def test_terminal_adapter_interpolates_and_clamps():
    phi = sm.GriddedFunction.sample(lambda p: p[:, 0], -1.0, 1.0, 21)
    term = sm.gridded_terminal(phi)
    np.testing.assert_allclose(term(np.array([[0.25], [5.0], [-7.0]])), [0.25, 1.0, -1.0])
    assert term.K_phi == 1.0


def test_driver_adapter_restores_weight():
    psi = sm.GriddedFunction.sample(lambda p: 0.5 * p[:, 0] ** 2, -2.0, 2.0, 401)
    drv = sm.gridded_driver(psi, [("z", 0)], 1.0, 0.0)
    z = np.array([[1.0], [10.0]])
    vals = drv(0.0, np.zeros((2, 1)), np.zeros(2), z)
    # inside the box ~ z^2/2, outside the weighted boundary value keeps quadratic growth
    assert vals[0] == pytest.approx(0.5, abs=1e-3)
    assert vals[1] == pytest.approx(101.0 * 2.0 / 5.0, rel=1e-12)


def test_csv_roundtrip(tmp_path):
    phi = sm.GriddedFunction.sample(lambda p: np.sin(p[:, 0]) * p[:, 1], [0, 0], [1, 2], [5, 7])
    phi.write_csv(tmp_path / "g.csv")
    back = sm.GriddedFunction.read_csv(tmp_path / "g.csv")
    np.testing.assert_array_equal(back.values, phi.values)
    assert back.labels == phi.labels


@pytest.mark.parametrize("n,method", [(0.0, "envelope"), (-1.0, "scan"), (2.0, "fft")])
def test_bad_parameters(n, method):
    with pytest.raises(sm.GridError):
        sm.inf_sup_values(_abs_grid(11), n, method)


def test_shape_mismatch_rejected():
    with pytest.raises(sm.GridError):
        sm.GriddedFunction((np.linspace(0, 1, 3),), np.zeros(4))

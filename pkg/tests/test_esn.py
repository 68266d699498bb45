import numpy as np
import pytest

from tribody import esn
from tribody.errors import NoConvergence, Untrained
from tribody.evaluation import trajectory_mae
from tribody.integrators import IntegratorConfig, integrate


@pytest.fixture(scope="module")
def figure8_flat():
    from tribody import fixtures
    traj = integrate(fixtures.figure8(), 9.9, IntegratorConfig())
    return traj.flat()


@pytest.fixture(scope="module")
def figure8_model(figure8_flat):
    model = esn.init_reservoir(esn.EsnConfig(), 12)
    return esn.fit_readout(model, [figure8_flat[:-1]], [figure8_flat[1:]])


def test_spectral_radius_examples():
    assert esn.spectral_radius(np.eye(5)) == pytest.approx(1.0, rel=1e-8)
    assert esn.spectral_radius(np.diag([0.5, -0.9, 0.1])) == pytest.approx(0.9, rel=1e-8)
    assert esn.spectral_radius(np.zeros((4, 4))) == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_spectral_radius_matches_eig(seed):
    A = np.random.default_rng(seed).standard_normal((50, 50))
    assert esn.spectral_radius(A) == pytest.approx(np.abs(np.linalg.eigvals(A)).max(), rel=1e-6)


def test_spectral_radius_rotation():
    # complex pair dominates; a single-vector power iteration would oscillate
    c, s = np.cos(0.3), np.sin(0.3)
    A = np.diag([0.2, 0.1, 0.05, 0.0])
    A[:2, :2] = 0.7 * np.array([[c, -s], [s, c]])
    assert esn.spectral_radius(A) == pytest.approx(0.7, rel=1e-8)


def test_spectral_radius_cap():
    A = np.random.default_rng(0).standard_normal((30, 30))
    with pytest.raises(NoConvergence) as info:
        esn.spectral_radius(A, max_iter=1, tol=1e-300)
    assert info.value.estimate > 0


def test_spectral_radius_rejects_rectangular():
    with pytest.raises(ValueError):
        esn.spectral_radius(np.ones((2, 3)))


def test_init_reservoir_radius_and_density():
    cfg = esn.EsnConfig()
    m = esn.init_reservoir(cfg, 12)
    assert np.abs(np.linalg.eigvals(m.W)).max() == pytest.approx(0.9, rel=1e-6)
    assert m.achieved_radius == pytest.approx(0.9, rel=1e-6)
    frac = np.count_nonzero(m.W) / m.W.size
    assert abs(frac - 0.05) < 4 * np.sqrt(0.05 * 0.95 / m.W.size)
    assert np.abs(m.W_in).max() <= 0.5 and m.W_in.shape == (300, 12)


def test_single_unit_reservoir():
    m = esn.init_reservoir(esn.EsnConfig(reservoir_size=1, density=1.0), 12)
    assert abs(m.W[0, 0]) == pytest.approx(0.9, rel=1e-12)


def test_init_deterministic():
    a = esn.init_reservoir(esn.EsnConfig(seed=3), 6)
    b = esn.init_reservoir(esn.EsnConfig(seed=3), 6)
    assert np.array_equal(a.W, b.W) and np.array_equal(a.W_in, b.W_in)


def test_scaling_is_projection():
    rng = np.random.default_rng(1)
    W_raw = esn._raw_reservoir(esn.EsnConfig(reservoir_size=60, density=0.2), rng)
    a, _ = esn.scale_to_radius(W_raw, 0.9)
    b, _ = esn.scale_to_radius(7.5 * W_raw, 0.9)
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=0)


def test_advance_zero_and_range():
    m = esn.init_reservoir(esn.EsnConfig(reservoir_size=50), 4)
    assert np.array_equal(esn.advance(m, np.zeros(50), np.zeros(4)), np.zeros(50))
    h = esn.advance(m, np.full(50, 5.0), np.full(4, 100.0))
    assert np.all(np.abs(h) <= 1.0)
    literal = np.tanh(m.W @ np.full(50, 0.3) + m.W_in @ np.ones(4))
    assert np.array_equal(esn.advance(m, np.full(50, 0.3), np.ones(4)), literal)


def test_leaky_update():
    m = esn.init_reservoir(esn.EsnConfig(reservoir_size=20, leak_rate=0.25), 3)
    h0, x = np.full(20, 0.4), np.ones(3)
    expect = 0.75 * h0 + 0.25 * np.tanh(m.W @ h0 + m.W_in @ x)
    np.testing.assert_allclose(esn.advance(m, h0, x), expect, rtol=1e-15)


@pytest.mark.parametrize("rho", [0.5, 0.9])
def test_echo_state_contraction(rho):
    m = esn.init_reservoir(esn.EsnConfig(spectral_radius=rho), 12)
    rng = np.random.default_rng(0)
    inputs = rng.standard_normal((200, 12))
    d = esn.echo_state_distance(m, inputs, rng.uniform(-1, 1, 300), rng.uniform(-1, 1, 300))
    assert d[-1] < 1e-6


def test_echo_state_fails_above_one():
    m = esn.init_reservoir(esn.EsnConfig(spectral_radius=1.5), 12)
    rng = np.random.default_rng(0)
    probes = [np.zeros((200, 12)), 0.01 * rng.standard_normal((200, 12))]
    finals = [esn.echo_state_distance(m, x, rng.uniform(-1, 1, 300), rng.uniform(-1, 1, 300))[-1]
              for x in probes]
    assert max(finals) > 1e-3


def test_exact_linear_readout():
    cfg = esn.EsnConfig(reservoir_size=30, ridge=0.0, washout=5, normalize_inputs=False)
    m = esn.init_reservoir(cfg, 3)
    x = np.random.default_rng(2).standard_normal((120, 3))
    H = esn._run(m, x)
    L = np.random.default_rng(3).standard_normal((4, 30))
    y = H @ L.T
    trained = esn.fit_readout(m, [x], [y])
    np.testing.assert_allclose(esn._readout(trained, H[5:]), y[5:], atol=1e-8)
    assert trained.train_mse < 1e-16


def test_ridge_limit_shrinks():
    m = esn.init_reservoir(esn.EsnConfig(reservoir_size=30, washout=5), 3)
    x = np.random.default_rng(2).standard_normal((120, 3))
    small = esn.fit_readout(m, [x], [x])
    big = esn.fit_readout(esn.init_reservoir(esn.EsnConfig(reservoir_size=30, washout=5, ridge=1e6), 3), [x], [x])
    assert np.abs(big.W_out).max() < 1e-3 * np.abs(small.W_out).max()


def test_ridge_readout_formula():
    rng = np.random.default_rng(0)
    H, Y = rng.standard_normal((8, 40)), rng.standard_normal((2, 40))
    expect = Y @ H.T @ np.linalg.inv(H @ H.T + 0.1 * np.eye(8))
    np.testing.assert_allclose(esn.ridge_readout(H, Y, 0.1), expect, rtol=1e-10)


def test_fit_deterministic(figure8_flat):
    m = esn.init_reservoir(esn.EsnConfig(reservoir_size=50), 12)
    a = esn.fit_readout(m, [figure8_flat[:-1]], [figure8_flat[1:]])
    b = esn.fit_readout(m, [figure8_flat[:-1]], [figure8_flat[1:]])
    assert np.array_equal(a.W_out, b.W_out)


def test_fit_rejects_short_sequence():
    m = esn.init_reservoir(esn.EsnConfig(reservoir_size=10), 2)
    with pytest.raises(ValueError):
        esn.fit_readout(m, [np.zeros((20, 2))], [np.zeros((20, 2))])


def test_forecast_untrained_and_empty(figure8_model, figure8_flat):
    with pytest.raises(Untrained):
        esn.forecast(esn.init_reservoir(esn.EsnConfig(reservoir_size=5), 12), figure8_flat[:30], 3)
    assert esn.forecast(figure8_model, figure8_flat[:30], 0).shape == (0, 12)


def test_forecast_fixed_point():
    # readout that maps the driven fixed point h* back to its input x* exactly
    cfg = esn.EsnConfig(reservoir_size=40, washout=5, normalize_inputs=False)
    m = esn.init_reservoir(cfg, 2)
    x_star = np.array([0.3, -0.2])
    h_star = esn._run(m, np.tile(x_star, (400, 1)))[-1]
    m.W_out = np.outer(x_star, h_star) / (h_star @ h_star)
    pred = esn.forecast(m, np.tile(x_star, (400, 1)), 50)
    np.testing.assert_allclose(pred, np.tile(x_star, (50, 1)), atol=1e-12)


def test_figure8_training_and_forecast(figure8_model, figure8_flat):
    assert figure8_model.train_mse < 1e-4
    pred = esn.forecast(figure8_model, figure8_flat[:21], 79)
    assert trajectory_mae(pred[:10], figure8_flat[21:31]) < 0.1


def test_persistence_round_trip(tmp_path, figure8_model, figure8_flat):
    esn.save_model(figure8_model, tmp_path / "m.json")
    back = esn.load_model(tmp_path / "m.json")
    assert np.array_equal(back.W, figure8_model.W)
    assert np.array_equal(back.W_out, figure8_model.W_out)
    assert back.config == figure8_model.config
    assert np.array_equal(esn.forecast(back, figure8_flat[:21], 20),
                          esn.forecast(figure8_model, figure8_flat[:21], 20))

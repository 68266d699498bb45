import itertools

import numpy as np
import pytest

from tribody import dataset as ds
from tribody import esn, fixtures
from tribody import evaluation as ev
from tribody.errors import LengthMismatch, ModelDatasetMismatch, TooFewValues, VersionMismatch
from tribody.integrators import IntegratorConfig, integrate


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("evalds")
    ds.generate_dataset(ds.DatasetConfig(n_train=2, n_test=3, steps=30), out)
    return out / "manifest.json"


FAST = ev.EvalConfig(lyapunov=False, resamples=200)


def flat_states(T, rng, n_pos=6):
    return rng.standard_normal((T, 2 * n_pos))


def test_mae_examples(rng):
    truth = flat_states(10, rng)
    assert np.all(ev.mae_curve(truth, truth) == 0)
    pred = truth.copy()
    pred[:, :6] += 0.2
    pred[:, 6:] += 5.0  # velocities do not count
    np.testing.assert_allclose(ev.mae_curve(pred, truth), 0.2, rtol=1e-12)
    assert ev.trajectory_mae(pred, truth) == pytest.approx(0.2)


def test_mae_elementwise_oracle(rng):
    a, b = flat_states(7, rng), flat_states(7, rng)
    oracle = [sum(abs(a[t, j] - b[t, j]) for j in range(6)) / 6 for t in range(7)]
    np.testing.assert_allclose(ev.mae_curve(a, b), oracle, rtol=1e-14)


def test_mae_shaped_input(rng):
    a, b = rng.standard_normal((5, 3, 2)), rng.standard_normal((5, 3, 2))
    np.testing.assert_allclose(ev.mae_curve(a, b), np.abs(a - b).mean((1, 2)))


def test_length_mismatch(rng):
    with pytest.raises(LengthMismatch):
        ev.mae_curve(flat_states(5, rng), flat_states(6, rng))
    with pytest.raises(LengthMismatch):
        ev.prediction_horizon(flat_states(5, rng), flat_states(4, rng))


def test_horizon_examples(rng):
    truth = flat_states(50, rng)
    assert ev.prediction_horizon(truth, truth, 0.1, 0.1) == pytest.approx(5.0)
    bad = truth.copy()
    bad[:, :6] += 1.0
    assert ev.prediction_horizon(bad, truth, 0.1, 0.1) == 0.0


@pytest.mark.parametrize("k", [1, 2, 7, 30])
def test_horizon_ramp(k, rng):
    # row r is predicted step r + 1; the error first exceeds 0.1 at step k
    truth = flat_states(40, rng)
    steps = np.arange(1, 41)
    err = 0.1 * steps / (k - 0.5)
    pred = truth.copy()
    pred[:, :6] += err[:, None]
    assert ev.prediction_horizon(pred, truth, 0.1, 0.1) == pytest.approx((k - 1) * 0.1)


def test_horizon_nan_is_miss():
    curve = np.array([0.01, 0.02, np.nan, 0.0])
    assert ev.horizon_from_curve(curve, 0.1, 0.5) == 1.0


def test_horizon_monotone_in_threshold(rng):
    curve = np.abs(rng.standard_normal(100)).cumsum() * 0.01 * rng.random(100)
    thresholds = np.sort(rng.random(30))
    hs = [ev.horizon_from_curve(curve, t, 0.1) for t in thresholds]
    assert all(b >= a for a, b in zip(hs, hs[1:]))


def test_horizon_tier_stable_under_refinement():
    f = lambda t: 0.1 * np.exp(0.3 * (t - 12.0))  # noqa: E731
    for dt in (0.1, 0.05):
        t = dt * np.arange(1, int(round(40 / dt)) + 1)
        T = ev.horizon_from_curve(f(t), 0.1, dt)
        assert abs(T - 12.0) <= dt + 1e-9
        assert ev.tier_classify(T) == "tier2"


@pytest.mark.parametrize("T,tier", [(0, "fail"), (2.999, "fail"), (3, "tier1"), (5, "tier1"),
                                    (9.99, "tier1"), (10, "tier2"), (99.9, "tier2"),
                                    (100, "tier3"), (250, "tier3")])
def test_tiers(T, tier):
    assert ev.tier_classify(T) == tier


def test_tier_negative():
    with pytest.raises(ValueError):
        ev.tier_classify(-1)


def test_ci_constant_and_too_few():
    cis = ev.confidence_intervals(np.full(10, 3.3))
    assert set(cis) == {0.9, 0.95, 0.98}
    assert all(lo == hi == pytest.approx(3.3) for lo, hi in cis.values())
    with pytest.raises(TooFewValues):
        ev.confidence_intervals([1.0])


@pytest.mark.parametrize("seed", range(10))
def test_ci_nesting(seed):
    v = np.random.default_rng(seed).exponential(size=30)
    cis = ev.confidence_intervals(v, config=ev.EvalConfig(seed=seed))
    (l90, h90), (l95, h95), (l98, h98) = cis[0.9], cis[0.95], cis[0.98]
    assert l98 <= l95 <= l90 <= h90 <= h95 <= h98


def test_ci_deterministic():
    v = np.random.default_rng(0).standard_normal(20)
    assert ev.confidence_intervals(v) == ev.confidence_intervals(v)


def test_ci_exhaustive_oracle():
    v = np.array([1.0, 2.5, 3.0, 7.0, 4.2])
    means = np.array([v[list(c)].mean() for c in itertools.product(range(5), repeat=5)])
    assert means.size == 3125
    cis = ev.confidence_intervals(v)
    for level, (lo, hi) in cis.items():
        olo, ohi = ev.percentile_interval(means, level)
        assert lo == pytest.approx(olo, rel=0.05)
        assert hi == pytest.approx(ohi, rel=0.05)


def test_ci_width_shrinks_with_n():
    shrank = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        small = ev.confidence_intervals(rng.standard_normal(20), [0.95])[0.95]
        large = ev.confidence_intervals(rng.standard_normal(320), [0.95])[0.95]
        shrank += (large[1] - large[0]) <= (small[1] - small[0])
    assert shrank == 20


def test_energy_drift_examples(figure8):
    traj = integrate(figure8, 9.9, IntegratorConfig(method="leapfrog", step=1e-3))
    drift, singular = ev.energy_drift(traj.flat(), figure8.masses)
    assert drift <= 1e-6 and not singular
    const = np.tile(traj.flat()[0], (10, 1))
    assert ev.energy_drift(const, figure8.masses) == (0.0, False)


def test_energy_drift_flags_singular(figure8):
    flat = np.tile(np.concatenate([figure8.positions.ravel(), figure8.velocities.ravel()]), (5, 1))
    flat[3, :2] = flat[3, 2:4]  # bodies 1 and 2 coincide
    drift, singular = ev.energy_drift(flat, figure8.masses)
    assert singular and drift == 0.0
    flat[3] = np.nan
    assert ev.energy_drift(flat, figure8.masses)[1]


def test_lyapunov_normalized():
    assert ev.lyapunov_normalized_horizon(8 * 2.5, 2.5) == pytest.approx(8.0)
    assert ev.lyapunov_normalized_horizon(3.0, float("inf")) is None
    assert ev.lyapunov_normalized_horizon(3.0, None) is None


def test_oracle_and_constant_predictors(tiny_dataset, tmp_path):
    oracle = ev.evaluate_model("oracle", None, tiny_dataset, FAST)
    span = 2.9
    for row in oracle.per_trajectory:
        assert row["horizon"] == pytest.approx(span)
        assert row["mean_mae"] < 1e-9
    const = ev.evaluate_model("constant", None, tiny_dataset, FAST)
    assert all(row["horizon"] <= span for row in const.per_trajectory)
    assert const.aggregate["mean_mae"]["mean"] > oracle.aggregate["mean_mae"]["mean"]


def test_report_files_and_round_trip(tiny_dataset, tmp_path):
    rep = ev.evaluate_model("oracle", None, tiny_dataset, ev.EvalConfig(resamples=100), tmp_path)
    for name in ("report.json", "trajectories.csv", "summary.svg"):
        assert (tmp_path / name).exists()
    back = ev.EvalReport.load(tmp_path / "report.json")
    assert back.to_dict() == rep.to_dict()
    header = (tmp_path / "trajectories.csv").read_text().splitlines()[0]
    assert header == ",".join(ev.CSV_COLUMNS)
    assert (tmp_path / "summary.svg").read_text().lstrip().startswith("<?xml")
    for row in rep.per_trajectory:
        assert row["tier"] == ev.tier_classify(row["horizon"])
        assert row["horizon"] <= row["span"] + 1e-12
    assert rep.provenance["manifest_hash"] == ds.manifest_hash(tiny_dataset)


def test_report_version_mismatch(tiny_dataset, tmp_path):
    rep = ev.evaluate_model("constant", None, tiny_dataset, FAST)
    d = rep.to_dict()
    d["report_version"] = 2
    import json
    (tmp_path / "r.json").write_text(json.dumps(d))
    with pytest.raises(VersionMismatch):
        ev.EvalReport.load(tmp_path / "r.json")


def test_esn_evaluation_deterministic_and_mismatch(tiny_dataset, tmp_path):
    data = ds.read_dataset(tiny_dataset)
    seqs = [t.flat() for t in data.train]
    model = esn.fit_readout(esn.init_reservoir(esn.EsnConfig(reservoir_size=30, washout=5), 12),
                            [s[:-1] for s in seqs], [s[1:] for s in seqs])
    esn.save_model(model, tmp_path / "esn.json")
    cfg = ev.EvalConfig(lyapunov=False, resamples=100, warmup=5)
    a = ev.evaluate_model("esn", tmp_path / "esn.json", tiny_dataset, cfg)
    b = ev.evaluate_model("esn", tmp_path / "esn.json", tiny_dataset, cfg)
    assert a.to_dict() == b.to_dict()
    assert all(r["span"] == pytest.approx(2.9 - 0.5) for r in a.per_trajectory)
    model3 = esn.init_reservoir(esn.EsnConfig(reservoir_size=10, washout=5), 18)
    model3 = esn.fit_readout(model3, [np.zeros((10, 18))], [np.zeros((10, 18))])
    esn.save_model(model3, tmp_path / "esn3.json")
    with pytest.raises(ModelDatasetMismatch):
        ev.evaluate_model("esn", tmp_path / "esn3.json", tiny_dataset, cfg)


def test_lyapunov_columns(tiny_dataset):
    rep = ev.evaluate_model("constant", None, tiny_dataset,
                            ev.EvalConfig(resamples=50, lyapunov_horizon=20.0))
    for row in rep.per_trajectory:
        assert row["lambda_max"] is not None
        if row["t_lyap"] not in ("inf", None):
            assert row["normalized_horizon"] == pytest.approx(row["horizon"] / row["t_lyap"])

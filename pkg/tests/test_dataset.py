import json
import shutil

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tribody import dataset as ds
from tribody import dynamics as dyn
from tribody import fixtures
from tribody.errors import FormatError, RejectionExhausted, VersionMismatch
from tribody.integrators import IntegratorConfig, integrate


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    cfg = ds.DatasetConfig(n_train=4, n_test=2, steps=20)
    manifest = ds.generate_dataset(cfg, out)
    return cfg, out, manifest


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 10**6), st.sampled_from([2, 3]))
def test_sampler_contract(seed, index, dim):
    s = ds.sample_initial(ds.SamplerConfig(dim=dim, base_seed=seed), index)
    np.testing.assert_allclose(dyn.linear_momentum(s), 0.0, atol=1e-15)
    np.testing.assert_allclose(dyn.center_of_mass(s)[0], 0.0, atol=1e-15)
    assert dyn.min_separation(s) >= 0.1
    assert np.all(s.velocities == 0)
    assert np.all(np.linalg.norm(s.positions, axis=1) <= 2.0)


def test_sampler_determinism():
    cfg = ds.SamplerConfig(base_seed=7)
    assert ds.sample_initial(cfg, 3) == ds.sample_initial(cfg, 3)
    assert not np.array_equal(ds.sample_initial(cfg, 3).positions, ds.sample_initial(cfg, 4).positions)


def test_sampler_uniform_in_disc():
    # before recentering the radius of each body obeys P(r <= x) = x^2
    rng = np.random.default_rng(0)
    r = np.linalg.norm(ds._uniform_in_ball(rng, 20000, 2), axis=1)
    assert np.mean(r <= 0.5) == pytest.approx(0.25, abs=0.01)
    r3 = np.linalg.norm(ds._uniform_in_ball(rng, 20000, 3), axis=1)
    assert np.mean(r3 <= 0.5) == pytest.approx(0.125, abs=0.01)


def test_rejection_exhausted():
    with pytest.raises(RejectionExhausted):
        ds.sample_initial(ds.SamplerConfig(min_separation=5.0), 0)


def test_config_validation():
    with pytest.raises(ValueError):
        ds.DatasetConfig(n_train=0)
    with pytest.raises(ValueError):
        ds.SamplerConfig(dim=4)
    with pytest.raises(ValueError):
        ds.SamplerConfig(masses=(1.0, 0.0, 0.0))


def test_scales_recorded():
    assert ds.FULL_SCALE == {"n_train": 10000, "n_test": 500, "steps": 100}
    assert ds.DESK_SCALE == {"n_train": 500, "n_test": 50, "steps": 100}
    cfg = ds.DatasetConfig()
    assert (cfg.n_train, cfg.n_test, cfg.steps) == (500, 50, 100)
    assert cfg.t_end == pytest.approx(9.9)


def test_config_dict_round_trip():
    cfg = ds.DatasetConfig(n_train=3, sampler=ds.SamplerConfig(dim=3, base_seed=5))
    assert ds.DatasetConfig.from_dict(cfg.to_dict()) == cfg


def test_trajectory_round_trip_bitwise(tmp_path, figure8):
    traj = integrate(figure8, 1.0, IntegratorConfig())
    path = tmp_path / "t.csv"
    ds.write_trajectory(traj, path)
    back = ds.read_trajectory(path)
    assert np.array_equal(back.times, traj.times)
    assert np.array_equal(back.positions, traj.positions)
    assert np.array_equal(back.velocities, traj.velocities)
    assert back.metadata == json.loads(json.dumps(traj.metadata))
    header = path.read_text().splitlines()[1]
    assert header == "t,q1x,q1y,q2x,q2y,q3x,q3y,v1x,v1y,v2x,v2y,v3x,v3y"


def test_3d_columns(tmp_path):
    traj = integrate(fixtures.figure8(dim=3), 0.2, IntegratorConfig())
    ds.write_trajectory(traj, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[1].startswith("t,q1x,q1y,q1z,q2x")
    assert ds.read_trajectory(tmp_path / "t.csv").dim == 3


def test_truncated_file_names_record(tmp_path, figure8):
    traj = integrate(figure8, 1.0, IntegratorConfig())
    path = tmp_path / "t.csv"
    ds.write_trajectory(traj, path)
    lines = path.read_text().splitlines()
    lines[-1] = lines[-1][: len(lines[-1]) // 2]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError) as info:
        ds.read_trajectory(path)
    assert info.value.line == len(lines)
    assert f"line {len(lines)}" in str(info.value)


def test_bad_field_named(tmp_path, figure8):
    traj = integrate(figure8, 0.3, IntegratorConfig())
    path = tmp_path / "t.csv"
    ds.write_trajectory(traj, path)
    lines = path.read_text().splitlines()
    parts = lines[3].split(",")
    parts[4] = "abc"
    lines[3] = ",".join(parts)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError) as info:
        ds.read_trajectory(path)
    assert info.value.field == "q2y" and info.value.line == 4


def test_version_mismatch(tmp_path, figure8):
    traj = integrate(figure8, 0.3, IntegratorConfig())
    path = tmp_path / "t.csv"
    ds.write_trajectory(traj, path)
    text = path.read_text().replace('"format_version": 1', '"format_version": 99')
    path.write_text(text)
    with pytest.raises(VersionMismatch):
        ds.read_trajectory(path)


def test_generated_dataset(small_dataset):
    cfg, out, manifest = small_dataset
    data = ds.read_dataset(out / "manifest.json")
    assert len(data.train) == 4 and len(data.test) == 2
    assert all(len(t) == 20 for t in data.train + data.test)
    assert manifest["format_version"] == 1
    assert manifest["full_scale"] == ds.FULL_SCALE
    idx = {e["split"]: [] for e in manifest["trajectories"]}
    for e in manifest["trajectories"]:
        idx[e["split"]].append(e["index"])
        assert e["converged"] is True and e["attempts"] >= 1
    assert idx["train"] == [0, 1, 2, 3] and idx["test"] == [4, 5]
    for t in data.train + data.test:
        assert t.metadata["converged"]


def test_generation_deterministic(small_dataset, tmp_path):
    cfg, out, _ = small_dataset
    ds.generate_dataset(cfg, tmp_path)
    assert (tmp_path / "manifest.json").read_bytes() == (out / "manifest.json").read_bytes()
    for f in sorted((out / "train").iterdir()):
        assert (tmp_path / "train" / f.name).read_bytes() == f.read_bytes()


def test_parallel_generation_matches_serial(small_dataset, tmp_path):
    cfg, out, _ = small_dataset
    ds.generate_dataset(cfg, tmp_path, workers=2)
    assert (tmp_path / "manifest.json").read_bytes() == (out / "manifest.json").read_bytes()


def test_missing_file_named(small_dataset, tmp_path):
    _, out, manifest = small_dataset
    shutil.copytree(out, tmp_path, dirs_exist_ok=True)
    m = dict(manifest)
    m["trajectories"] = manifest["trajectories"] + [
        {"split": "test", "index": 99, "seed": 99, "attempts": 1, "converged": True,
         "divergence_time": None, "file": "test/traj_00099.csv"}]
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(FormatError) as info:
        ds.read_dataset(tmp_path / "manifest.json")
    assert "traj_00099.csv" in str(info.value)


def test_keep_policy_flags_non_converged(tmp_path):
    cfg = ds.DatasetConfig(n_train=2, n_test=1, steps=300, tolerance=1e-10, policy="keep")
    manifest = ds.generate_dataset(cfg, tmp_path)
    flags = [e["converged"] for e in manifest["trajectories"]]
    assert all(e["attempts"] == 1 for e in manifest["trajectories"])
    for e in manifest["trajectories"]:
        if not e["converged"]:
            assert e["divergence_time"] > 0
    assert not all(flags)


def test_next_state_pairs(figure8):
    traj = integrate(figure8, 9.9, IntegratorConfig())
    pairs = ds.to_next_state_pairs(traj)
    assert len(pairs) == 99
    np.testing.assert_array_equal(pairs.targets[:-1], pairs.inputs[1:])
    assert pairs.inputs.shape[1] == 12


def test_hnn_pairs(figure8):
    traj = integrate(figure8, 2.0, IntegratorConfig(tolerance=1e-12, sample_interval=0.01))
    pairs = ds.to_hnn_pairs(traj)
    n, half = len(traj), 6
    np.testing.assert_allclose(pairs.targets[:, half:].reshape(n, 3, 2).sum(1), 0.0, atol=1e-13)
    # central differences of the stored (q, p) agree to O(dt^2)
    dt = traj.sample_interval
    fd = (pairs.inputs[2:] - pairs.inputs[:-2]) / (2 * dt)
    err = np.abs(fd - pairs.targets[1:-1]).max()
    assert err < 10 * dt**2 * np.abs(pairs.targets).max()

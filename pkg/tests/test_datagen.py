import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stiffcontact.core_math import quat_angle, quat_normalize
from stiffcontact.cube_sim import State, SystemParams, Trajectory, simulate
from stiffcontact.datagen import (X0_REF, DataGenConfig, MalformedFile, SchemaMismatch,
                                  add_trajectory_noise, build_dataset, generate_trajectories,
                                  generate_trajectory, load_dataset, load_trajectory,
                                  reconstruct_velocities, reference_state, sample_initial_state,
                                  save_dataset, save_trajectory, slice_windows, split_sizes, stream)

PRM = SystemParams.named("medium")


@pytest.fixture(scope="module")
def clean_traj():
    return simulate(reference_state(), PRM)


def zero_perturbation():
    return DataGenConfig.noiseless(dp0=0.0, dq0=0.0, dpdot0=0.0, domega0=0.0)


def test_reference_state_is_normalized():
    s = reference_state()
    assert np.linalg.norm(s.q) == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_array_equal(s.p, X0_REF[:3])


def test_zero_perturbation_gives_reference():
    s = sample_initial_state(zero_perturbation(), stream(0, 1))
    np.testing.assert_allclose(s.to_vector(), reference_state().to_vector(), atol=1e-15)


def test_initial_heights_within_bounds():
    cfg = DataGenConfig()
    rng = stream(0, 2)
    z = np.array([sample_initial_state(cfg, rng).p[2] for _ in range(1000)])
    assert z.min() >= 0.022 - 1e-12 and z.max() <= 0.222 + 1e-12


def test_position_perturbation_mean_is_small():
    cfg = DataGenConfig()
    rng = stream(0, 3)
    dp = np.array([sample_initial_state(cfg, rng).p for _ in range(1000)]) - X0_REF[:3]
    assert np.all(np.abs(dp.mean(axis=0)) < 0.01)


def test_orientation_perturbation_bounded():
    cfg = DataGenConfig()
    rng = stream(0, 4)
    ref = reference_state().q
    angles = [quat_angle(sample_initial_state(cfg, rng).q, ref) for _ in range(200)]
    assert max(angles) <= np.degrees(1.0) + 1e-9


def test_zero_noise_keeps_configurations(clean_traj):
    p, q = add_trajectory_noise(clean_traj, DataGenConfig.noiseless(), stream(0, 5))
    np.testing.assert_array_equal(p, clean_traj.states[:, :3])
    np.testing.assert_allclose(q, clean_traj.states[:, 3:7], atol=1e-15)


def test_default_noise_is_about_a_millimetre(clean_traj):
    p, _ = add_trajectory_noise(clean_traj, DataGenConfig(), stream(0, 6))
    err = np.abs(p - clean_traj.states[:, :3])
    assert err.max() <= 1.01e-3


def test_drift_only_is_constant(clean_traj):
    cfg = DataGenConfig(sample_p=0.0, sample_q=0.0)
    p, q = add_trajectory_noise(clean_traj, cfg, stream(0, 7))
    offsets = p - clean_traj.states[:, :3]
    np.testing.assert_allclose(offsets, np.broadcast_to(offsets[0], offsets.shape), atol=1e-15)
    angles = [quat_angle(a, b) for a, b in zip(q, clean_traj.states[:, 3:7])]
    assert np.ptp(angles) < 1e-5


def test_constant_configurations_have_zero_velocity():
    p = np.tile([0.1, 0.2, 0.3], (5, 1))
    q = np.tile(quat_normalize(np.array([0.9, 0.1, 0.2, 0.3])), (5, 1))
    states = reconstruct_velocities((p, q), 0.01)
    np.testing.assert_allclose(states[:, 7:], 0.0, atol=1e-12)


def test_reconstruction_inverts_simulator(clean_traj):
    states = reconstruct_velocities((clean_traj.states[:, :3], clean_traj.states[:, 3:7]), PRM.dt)
    np.testing.assert_allclose(states[1:, 7:], clean_traj.states[1:, 7:], atol=1e-10)
    np.testing.assert_array_equal(states[0, 7:], states[1, 7:])


def test_reconstruction_needs_two_configs():
    with pytest.raises(ValueError):
        reconstruct_velocities((np.zeros((1, 3)), np.array([[1.0, 0, 0, 0]])), 0.01)


def test_velocity_noise_amplification(clean_traj):
    eps = 1e-5
    cfg = DataGenConfig(drift_p=0.0, drift_q=0.0, sample_p=eps, sample_q=0.0)
    p, q = add_trajectory_noise(clean_traj, cfg, stream(0, 8))
    noisy = reconstruct_velocities((p, q), PRM.dt)
    err = np.abs(noisy[1:, 7:10] - clean_traj.states[1:, 7:10])
    assert err.max() <= 2 * eps / PRM.dt + 1e-9
    assert err.max() > 0.5 * eps / PRM.dt


def test_generation_is_pure_function_of_seed():
    cfg = DataGenConfig(seed=11)
    a = generate_trajectories(PRM, cfg, 3)
    b = generate_trajectories(PRM, cfg, 3)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.states, y.states)
    assert not np.array_equal(a[0].states, generate_trajectory(PRM, cfg, 0, "eval").states)
    assert not np.array_equal(a[0].states, generate_trajectories(PRM, DataGenConfig(seed=12), 1)[0].states)


def test_noiseless_generation_matches_simulation():
    cfg = DataGenConfig()
    clean = generate_trajectory(PRM, cfg, 2, noisy=False)
    noisy = generate_trajectory(PRM, cfg, 2)
    assert clean.max_penetration == noisy.max_penetration
    assert 0 < np.abs(clean.states[:, :3] - noisy.states[:, :3]).max() < 2e-3


def test_slice_counts():
    states = np.random.default_rng(0).normal(size=(80, 13))
    w, y = slice_windows(states, 16)
    assert w.shape == (64, 16, 13) and y.shape == (64, 6)
    np.testing.assert_array_equal(w[0], states[:16])
    np.testing.assert_array_equal(y[0], states[16, 7:])
    with pytest.raises(ValueError):
        slice_windows(states[:16], 16)


def test_dataset_sizes_and_normalization():
    rng = np.random.default_rng(1)
    trajs = [rng.normal(size=(80, 13)) * rng.uniform(0.1, 5.0, 13) + 3.0 for _ in range(500)]
    data = build_dataset(trajs, 16)
    assert len(data) == 32000
    assert (len(data.train_idx), len(data.val_idx), len(data.test_idx)) == (22400, 6400, 3200)
    x = data.inputs[data.train_idx]
    assert np.abs(x.mean(axis=0)).max() < 1e-9
    assert np.abs(x.std(axis=0) - 1.0).max() < 1e-6


def test_splits_are_disjoint_and_cover():
    trajs = [np.random.default_rng(i).normal(size=(80, 13)) for i in range(3)]
    data = build_dataset(trajs, 4, seed=5)
    all_idx = np.concatenate([data.train_idx, data.val_idx, data.test_idx])
    np.testing.assert_array_equal(np.sort(all_idx), np.arange(len(data)))


def test_raw_current_is_last_state():
    trajs = [np.random.default_rng(2).normal(size=(80, 13))]
    data = build_dataset(trajs, 8)
    np.testing.assert_array_equal(data.raw_current[0], trajs[0][7])
    np.testing.assert_allclose(data.denormalize(data.inputs[0]), trajs[0][:8], atol=1e-12)


@pytest.mark.parametrize("n", [50, 100, 500, 5000])
def test_split_proportions(n):
    tr, va, te = split_sizes(n * 64)
    assert tr + va + te == n * 64
    assert abs(tr - 0.7 * n * 64) <= 1 and abs(va - 0.2 * n * 64) <= 1


@settings(max_examples=40)
@given(st.integers(1, 100000))
def test_split_sizes_always_sum(n):
    tr, va, te = split_sizes(n)
    assert tr + va + te == n and min(tr, va, te) >= 0


def test_single_trajectory_history_16():
    data = build_dataset([np.zeros((80, 13))], 16)
    assert len(data) == 64


def test_file_roundtrip_is_lossless(tmp_path):
    traj = generate_trajectory(PRM, DataGenConfig(seed=3), 0)
    path = tmp_path / "t.txt"
    save_trajectory(path, traj)
    back = load_trajectory(path)
    np.testing.assert_array_equal(back.states, traj.states)
    assert back.params.k == PRM.k and back.max_penetration == traj.max_penetration
    save_trajectory(tmp_path / "u.txt", back)
    assert (tmp_path / "u.txt").read_bytes() == path.read_bytes()


def test_wrong_schema_rejected(tmp_path):
    traj = Trajectory(np.zeros((80, 13)), PRM)
    path = tmp_path / "t.txt"
    save_trajectory(path, traj)
    path.write_text(path.read_text().replace("# schema=1", "# schema=99"))
    with pytest.raises(SchemaMismatch):
        load_trajectory(path)


def test_truncated_file_rejected(tmp_path):
    traj = Trajectory(np.zeros((80, 13)), PRM)
    path = tmp_path / "t.txt"
    save_trajectory(path, traj)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-3]) + "\n")
    with pytest.raises(MalformedFile):
        load_trajectory(path)


def test_garbage_values_rejected(tmp_path):
    traj = Trajectory(np.zeros((80, 13)), PRM)
    path = tmp_path / "t.txt"
    save_trajectory(path, traj)
    path.write_text(path.read_text().replace("0.0 0.0 0.0", "0.0 x 0.0", 1))
    with pytest.raises(MalformedFile):
        load_trajectory(path)


def test_dataset_directory_roundtrip(tmp_path):
    trajs = generate_trajectories(PRM, DataGenConfig(seed=4), 3)
    save_dataset(tmp_path / "d", trajs)
    back = load_dataset(tmp_path / "d")
    assert len(back) == 3
    for a, b in zip(trajs, back):
        np.testing.assert_array_equal(a.states, b.states)
    with pytest.raises(MalformedFile):
        load_dataset(tmp_path / "empty")


def test_state_vector_order():
    s = State.from_vector(X0_REF)
    np.testing.assert_array_equal(s.q, X0_REF[3:7])
    np.testing.assert_array_equal(s.omega, X0_REF[10:13])

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stiffcontact.cube_sim import SystemParams, Trajectory
from stiffcontact.datagen import DataGenConfig, build_dataset, generate_trajectories
from stiffcontact.evaluation import (AGGREGATE_COLUMNS, METRIC_COLUMNS, ErrorDecomposition,
                                     OracleModel, RolloutConfig, Summary, aggregate_rows, cox_ci,
                                     error_decomposition, lognormal_mean, oracle_loss,
                                     penetration_stats, read_rows, rollout, rollout_batch,
                                     rollout_errors, rollout_metrics, write_rows)

PRM = SystemParams.named("soft")


@pytest.fixture(scope="module")
def clean_trajs():
    return generate_trajectories(PRM, DataGenConfig.noiseless(seed=2), 4, noisy=False)


class ZeroVelocity:
    history = 4

    def predict_velocity(self, windows):
        return np.zeros((len(windows), 6))


class Exploding:
    history = 1

    def predict_velocity(self, windows):
        return np.full((len(windows), 6), np.inf)


def test_oracle_loss_is_zero_on_noiseless_data(clean_trajs):
    data = build_dataset(clean_trajs, 1)
    assert oracle_loss(PRM, data) < 1e-20
    assert oracle_loss(PRM, data, "test") < 1e-20


def test_noise_raises_oracle_loss_quadratically():
    losses = []
    for scale in (1.0, 2.0):
        cfg = DataGenConfig(seed=5, drift_p=0.0, drift_q=0.0, sample_p=1e-5 * scale, sample_q=0.0)
        # the first state carries a copied velocity, so leave it out
        data = build_dataset([t.states[1:] for t in generate_trajectories(PRM, cfg, 3)], 1)
        losses.append(oracle_loss(PRM, data))
    assert 3.0 < losses[1] / losses[0] < 5.0


@settings(max_examples=50)
@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10))
def test_decomposition_sums_to_test_loss(o, tr, te):
    d = ErrorDecomposition(o, tr, te)
    assert abs(d.total() - te) <= 1e-12 * max(1.0, o, tr, te)
    assert d.training_gap == tr - o and d.generalization_gap == te - tr


def test_oracle_decomposition_has_zero_training_gap():
    data = build_dataset(generate_trajectories(PRM, DataGenConfig(seed=1), 2), 1)
    d = error_decomposition(OracleModel(PRM), PRM, data)
    assert d.training_gap == 0.0
    assert d.model_test_loss == pytest.approx(oracle_loss(PRM, data, "test"))


def test_cox_interval_example():
    # ybar = 1, s2 = 1, n = 3: exp(1.5 -+ 1.96 sqrt(1/3 + 1/4))
    half = 1.959963984540054 * math.sqrt(1 / 3 + 1 / 4)
    low, high = cox_ci([1.0, math.e, math.e ** 2])
    assert low == pytest.approx(math.exp(1.5 - half), rel=1e-12)
    assert high == pytest.approx(math.exp(1.5 + half), rel=1e-12)
    assert low == pytest.approx(1.003, abs=1e-3) and high == pytest.approx(20.03, abs=1e-2)


def test_cox_interval_of_constant_sample_is_a_point():
    low, high = cox_ci([2.5] * 6)
    assert low == pytest.approx(2.5) and high == pytest.approx(2.5)


@pytest.mark.parametrize("bad", [[1.0, 0.0], [1.0, -2.0], [3.0]])
def test_cox_interval_rejects_bad_samples(bad):
    with pytest.raises(ValueError):
        cox_ci(bad)


def test_t_quantile_widens_small_samples():
    xs = [1.0, math.e, math.e ** 2]
    z_low, z_high = cox_ci(xs)
    t_low, t_high = cox_ci(xs, quantile="t")
    assert t_low < z_low and t_high > z_high
    assert math.log(t_high) - 1.5 == pytest.approx(4.302652729911275 * math.sqrt(7 / 12), rel=1e-9)
    with pytest.raises(ValueError):
        cox_ci(xs, quantile="bootstrap")


def test_cox_interval_coverage():
    rng = np.random.default_rng(0)
    true_mean = math.exp(0.5 * 0.5 ** 2)
    hits = 0
    for _ in range(2000):
        low, high = cox_ci(rng.lognormal(0.0, 0.5, 30))
        hits += low <= true_mean <= high
    assert 0.93 <= hits / 2000 <= 0.97


@settings(max_examples=30)
@given(st.lists(st.floats(1e-3, 1e3), min_size=2, max_size=20))
def test_cox_interval_contains_lognormal_mean(xs):
    low, high = cox_ci(xs)
    assert low <= lognormal_mean(xs) * (1 + 1e-9) and lognormal_mean(xs) <= high * (1 + 1e-9)


def test_summary_handles_degenerate_samples():
    s = Summary.of([1.0, float("nan"), 3.0])
    assert s.n == 2 and s.mean == 2.0
    assert math.isnan(Summary.of([1.0]).low)
    mixed = Summary.of([-1.0, 1.0, 3.0])
    assert mixed.method == "normal"
    assert mixed.low == pytest.approx(1.0 - 1.959963984540054 * 2.0 / math.sqrt(3))
    assert Summary(5, 4, 6, 3).disjoint_above(Summary(1, 0.5, 2, 3))
    assert not Summary(5, 1, 6, 3).disjoint_above(Summary(1, 0.5, 2, 3))


def test_oracle_rollout_reproduces_noiseless_trajectory(clean_trajs):
    rc = RolloutConfig(T_hat=50, start_index=16, dt=PRM.dt)
    for traj in clean_trajs:
        pred = rollout(OracleModel(PRM), traj, rc)
        np.testing.assert_allclose(pred, traj.states[16:66], atol=1e-8)


def test_oracle_rollout_errors_are_zero(clean_trajs):
    errs, n_div = rollout_errors(OracleModel(PRM), clean_trajs, RolloutConfig(dt=PRM.dt))
    assert n_div == 0 and errs.shape == (4, 2)
    assert errs.max() < 1e-5


def test_zero_velocity_predictor_freezes_state(clean_trajs):
    pred = rollout(ZeroVelocity(), clean_trajs[0], RolloutConfig(T_hat=10))
    last = clean_trajs[0].states[15]
    np.testing.assert_allclose(pred[:, :7], np.broadcast_to(last[:7], (10, 7)), atol=1e-15)
    np.testing.assert_array_equal(pred[:, 7:], 0.0)


def test_rollout_quaternions_stay_unit():
    class Spinner:
        history = 1

        def predict_velocity(self, windows):
            return np.tile([0.1, 0.0, 0.0, 30.0, -20.0, 5.0], (len(windows), 1))

    pred = rollout(Spinner(), np.tile(generate_trajectories(PRM, DataGenConfig(), 1)[0].states, (1, 1)),
                   RolloutConfig(T_hat=60, start_index=1))
    np.testing.assert_allclose(np.linalg.norm(pred[:, 3:7], axis=1), 1.0, atol=1e-12)


def test_divergent_rollouts_are_flagged(clean_trajs):
    states = np.array([t.states for t in clean_trajs])
    pred, diverged = rollout_batch(Exploding(), states, RolloutConfig(T_hat=5))
    assert diverged.all() and np.isnan(pred).all()
    errs, n_div = rollout_errors(Exploding(), clean_trajs, RolloutConfig(T_hat=5))
    assert n_div == 4 and errs.shape == (0, 2)


def test_rollout_rejects_short_trajectories():
    with pytest.raises(ValueError):
        rollout_batch(ZeroVelocity(), np.zeros((1, 20, 13)), RolloutConfig(T_hat=50))


def test_metrics_one_millimetre_offset_is_one_percent():
    truth = np.zeros((10, 13))
    truth[:, 3] = 1.0
    pred = truth.copy()
    pred[:, 0] += 1e-3
    e_pos, e_rot = rollout_metrics(pred, truth)
    assert e_pos == pytest.approx(1.0)
    assert e_rot == pytest.approx(0.0, abs=1e-6)


def test_metrics_rotation_in_degrees():
    truth = np.zeros((1, 13))
    truth[0, 3] = 1.0
    pred = truth.copy()
    pred[0, 3:7] = [math.cos(math.radians(5)), math.sin(math.radians(5)), 0, 0]
    assert rollout_metrics(pred, truth)[1] == pytest.approx(10.0)
    with pytest.raises(ValueError):
        rollout_metrics(pred, np.zeros((2, 13)))


def test_penetration_of_airborne_cube_is_zero():
    states = np.zeros((80, 13))
    states[:, 2] = 5.0
    states[:, 3] = 1.0
    assert penetration_stats([Trajectory(states, PRM)]) == 0.0
    assert penetration_stats([Trajectory(states, PRM, max_penetration=0.002)]) == pytest.approx(2.0)


def test_rows_roundtrip_and_aggregate(tmp_path):
    rows = [{"stiffness": "hard", "N": 50, "architecture": "gru", "seed": s, "metric": "e_pos",
             "value": v} for s, v in enumerate([1.0, 2.0, 4.0])]
    write_rows(tmp_path / "m.csv", rows, METRIC_COLUMNS)
    back = read_rows(tmp_path / "m.csv")
    assert [float(r["value"]) for r in back] == [1.0, 2.0, 4.0]
    agg = aggregate_rows(back)
    assert len(agg) == 1 and set(agg[0]) == set(AGGREGATE_COLUMNS)
    assert agg[0]["mean"] == pytest.approx(7 / 3) and agg[0]["n"] == 3
    assert agg[0]["ci_low"] < agg[0]["mean"] < agg[0]["ci_high"]

"""Oracle baselines, test-error decomposition, rollouts, and log-normal CIs."""

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm
from scipy.stats import t as student_t

from .core_math import quat_angle, quat_exp, quat_mul, quat_normalize
from .cube_sim import oracle_predict
from .training import dataset_loss


class RolloutDiverged(RuntimeError):
    pass


class OracleModel:
    """The simulator used as a one-step velocity predictor.

    Only the most recent state of each window is used.
    """

    history = 1

    def __init__(self, prm):
        self.prm = prm

    def predict_velocity(self, windows):
        windows = np.asarray(windows, dtype=float)
        if windows.ndim == 2:
            windows = windows[None]
        return np.array([oracle_predict(w[-1], self.prm) for w in windows])


def oracle_loss(prm, data, split="train"):
    """Velocity MSE of the simulator on one split of a sliced dataset."""
    idx = data.split(split)
    pred = np.array([oracle_predict(data.raw_current[i], prm) for i in idx])
    resid = data.targets[idx] - pred
    return float(np.mean(np.sum(resid * resid, axis=1)))


# ---------------------------------------------------------------- decomposition


@dataclass
class ErrorDecomposition:
    oracle_train_loss: float
    model_train_loss: float
    model_test_loss: float

    @property
    def training_gap(self):
        return self.model_train_loss - self.oracle_train_loss

    @property
    def generalization_gap(self):
        return self.model_test_loss - self.model_train_loss

    def total(self):
        return self.oracle_train_loss + self.training_gap + self.generalization_gap


def error_decomposition(model, prm, data, oracle_train=None):
    """Split the model's test loss into oracle loss, training gap, and
    generalization gap; the three terms sum to the test loss."""
    if oracle_train is None:
        oracle_train = oracle_loss(prm, data, "train")
    if isinstance(model, OracleModel):
        train = oracle_train
        test = oracle_loss(prm, data, "test")
    else:
        train = dataset_loss(model, data, data.train_idx)
        test = dataset_loss(model, data, data.test_idx)
    return ErrorDecomposition(oracle_train, train, test)


# ---------------------------------------------------------------- rollouts


@dataclass(frozen=True)
class RolloutConfig:
    T_hat: int = 50
    start_index: int = 16
    dt: float = 6.74e-3

    def __post_init__(self):
        if self.T_hat < 1:
            raise ValueError("T_hat must be at least 1")


def rollout_batch(model, trajs, rc):
    """Roll ``model`` forward from ground-truth warm starts.

    ``trajs`` has shape (M, T, 13). The ``model.history`` states ending just
    before ``rc.start_index`` seed the window; predictions cover indices
    ``start_index .. start_index + T_hat - 1``. Returns the predicted states
    (M, T_hat, 13) and a boolean mask of rollouts that produced non-finite
    predictions (their rows are NaN).
    """
    trajs = np.asarray(trajs, dtype=float)
    if trajs.ndim == 2:
        trajs = trajs[None]
    h = model.history
    s0 = rc.start_index
    if s0 < h or s0 + rc.T_hat > trajs.shape[1]:
        raise ValueError(f"trajectory of length {trajs.shape[1]} too short for this rollout")
    M = len(trajs)
    window = trajs[:, s0 - h:s0, :].copy()
    pred = np.full((M, rc.T_hat, trajs.shape[2]), np.nan)
    alive = np.ones(M, dtype=bool)
    for j in range(rc.T_hat):
        idx = np.flatnonzero(alive)
        if len(idx) == 0:
            break
        with np.errstate(all="ignore"):
            v = model.predict_velocity(window[idx])
        ok = np.all(np.isfinite(v), axis=1) & (np.max(np.abs(v), axis=1) < 1e6)
        alive[idx[~ok]] = False
        for n, i in enumerate(idx):
            if not ok[n]:
                continue
            last = window[i, -1]
            nxt = np.empty_like(last)
            nxt[7:13] = v[n]
            nxt[0:3] = last[0:3] + v[n, 0:3] * rc.dt
            nxt[3:7] = quat_normalize(quat_mul(last[3:7], quat_exp(v[n, 3:6] * rc.dt)))
            pred[i, j] = nxt
            window[i, :-1] = window[i, 1:]
            window[i, -1] = nxt
    pred[~alive] = np.nan
    return pred, ~alive


def rollout(model, traj, rc=RolloutConfig()):
    states = traj.states if hasattr(traj, "states") else traj
    pred, diverged = rollout_batch(model, states[None], rc)
    if diverged[0]:
        raise RolloutDiverged("non-finite prediction during rollout")
    return pred[0]


def rollout_metrics(pred, truth, side=0.1):
    """Time-averaged position error (percent of ``side``) and rotation
    error (degrees) between predicted and true state sequences."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth lengths differ")
    e_pos = np.mean(np.linalg.norm(pred[:, 0:3] - truth[:, 0:3], axis=1)) / side * 100.0
    e_rot = np.mean([quat_angle(a, b) for a, b in zip(pred[:, 3:7], truth[:, 3:7])])
    return float(e_pos), float(e_rot)


def rollout_errors(model, trajs, rc=RolloutConfig(), side=0.1):
    """Per-trajectory ``(e_pos, e_rot)`` over non-diverged rollouts, plus
    the number of diverged rollouts."""
    states = np.array([t.states if hasattr(t, "states") else t for t in trajs])
    pred, diverged = rollout_batch(model, states, rc)
    truth = states[:, rc.start_index:rc.start_index + rc.T_hat]
    errs = [rollout_metrics(pred[i], truth[i], side) for i in np.flatnonzero(~diverged)]
    return np.array(errs).reshape(-1, 2), int(diverged.sum())


# ---------------------------------------------------------------- statistics


def cox_ci(samples, level=0.95, quantile="normal"):
    """Cox's confidence interval for the mean of a log-normal sample.

    ``quantile="t"`` swaps the normal quantile for Student's t with n - 1
    degrees of freedom, which restores nominal coverage for small n.
    """
    x = np.asarray(samples, dtype=float)
    if len(x) < 2:
        raise ValueError("need at least two samples")
    if np.any(x <= 0.0):
        raise ValueError("Cox interval requires strictly positive samples")
    y = np.log(x)
    n = len(y)
    ybar = y.mean()
    s2 = y.var(ddof=1)
    if quantile == "normal":
        z = norm.ppf(0.5 + level / 2.0)
    elif quantile == "t":
        z = student_t.ppf(0.5 + level / 2.0, n - 1)
    else:
        raise ValueError(f"unknown quantile {quantile!r}")
    half = z * math.sqrt(s2 / n + s2 * s2 / (2.0 * (n - 1)))
    centre = ybar + s2 / 2.0
    return math.exp(centre - half), math.exp(centre + half)


def lognormal_mean(samples):
    y = np.log(np.asarray(samples, dtype=float))
    return float(np.exp(y.mean() + y.var(ddof=1) / 2.0))


@dataclass
class Summary:
    mean: float
    low: float
    high: float
    n: int

    method: str = "cox"

    @classmethod
    def of(cls, samples, level=0.95):
        """Sample mean with a Cox interval, or a normal interval when some
        samples are not positive (a gap can be negative)."""
        x = np.asarray(samples, dtype=float)
        x = x[np.isfinite(x)]
        if len(x) < 2:
            mean = float(x.mean()) if len(x) else float("nan")
            return cls(mean, float("nan"), float("nan"), len(x), "none")
        if np.all(x > 0):
            low, high = cox_ci(x, level)
            return cls(float(x.mean()), low, high, len(x), "cox")
        half = norm.ppf(0.5 + level / 2.0) * x.std(ddof=1) / math.sqrt(len(x))
        return cls(float(x.mean()), x.mean() - half, x.mean() + half, len(x), "normal")

    def disjoint_above(self, other):
        """True when this interval lies entirely above ``other``'s."""
        return self.low > other.high


def penetration_stats(trajs):
    """Mean over trajectories of the maximum corner penetration, in mm."""
    return float(np.mean([t.max_penetration for t in trajs]) * 1000.0)


# ---------------------------------------------------------------- reports

METRIC_COLUMNS = ["stiffness", "N", "architecture", "seed", "metric", "value"]
AGGREGATE_COLUMNS = ["stiffness", "N", "architecture", "metric", "mean", "ci_low", "ci_high", "n",
                     "ci_method"]


def write_rows(path, rows, columns):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row.get(k, "")) for k in columns})


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def aggregate_rows(rows, level=0.95):
    """Group metric rows by (stiffness, N, architecture, metric) and attach
    the sample mean and Cox interval to each group."""
    groups = {}
    for row in rows:
        key = (row["stiffness"], int(row["N"]), row["architecture"], row["metric"])
        groups.setdefault(key, []).append(float(row["value"]))
    out = []
    for (stiffness, n, arch, metric), values in sorted(groups.items()):
        s = Summary.of(values, level)
        out.append({"stiffness": stiffness, "N": n, "architecture": arch, "metric": metric,
                    "mean": s.mean, "ci_low": s.low, "ci_high": s.high, "n": s.n,
                    "ci_method": s.method})
    return out


"""Adam training with early stopping, and a replicated grid sweep."""

import csv
import itertools
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .nn import Model, forward, init_params, loss_and_gradient

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainHyper:
    learning_rate: float = 1e-4
    weight_decay: float = 0.0
    batch_size: int = 256
    max_epochs: int = 2000
    patience: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    dtype: str = "float64"  # "float32" roughly halves GRU training time

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning rate and weight decay must be non-negative")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be positive")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n, dtype=float):
        return cls(np.zeros(n, dtype), np.zeros(n, dtype), 0)


def adam_step(state, theta, grad, hyper):
    """One bias-corrected Adam update with coupled (L2) weight decay.

    Updates ``state`` and ``theta`` in place and returns both.
    """
    g = grad + hyper.weight_decay * theta if hyper.weight_decay else grad
    state.t += 1
    state.m *= hyper.beta1
    state.m += (1.0 - hyper.beta1) * g
    state.v *= hyper.beta2
    state.v += (1.0 - hyper.beta2) * g * g
    m_hat = state.m / (1.0 - hyper.beta1 ** state.t)
    v_hat = state.v / (1.0 - hyper.beta2 ** state.t)
    theta -= hyper.learning_rate * m_hat / (np.sqrt(v_hat) + hyper.eps)
    return state, theta


def mse_loss(predict, inputs, targets):
    """Mean over examples of the squared 2-norm of ``targets - predict(inputs)``."""
    if len(targets) == 0:
        raise ValueError("empty dataset")
    resid = np.asarray(targets) - predict(inputs)
    return float(np.mean(np.sum(resid * resid, axis=1)))


def dataset_loss(model, data, idx, chunk=4096):
    """Velocity MSE of ``model`` on the examples ``idx`` of a sliced dataset."""
    total = 0.0
    for start in range(0, len(idx), chunk):
        sel = idx[start:start + chunk]
        pred = model.predict_normalized(data.inputs[sel], data.raw_current[sel])
        resid = data.targets[sel] - pred
        total += float(np.sum(resid * resid))
    return total / len(idx)


@dataclass
class TrainResult:
    model: Model
    train_history: list = field(default_factory=list)
    val_history: list = field(default_factory=list)
    best_epoch: int = 0
    epochs_run: int = 0
    train_loss: float = float("nan")
    val_loss: float = float("nan")
    test_loss: float = float("nan")
    initial_train_loss: float = float("nan")

    @property
    def best_val_loss(self):
        return min(self.val_history)


def train(cfg, data, hyper, callback=None):
    """Fit a predictor on the training split of ``data``.

    Each epoch is one seeded shuffled pass in mini-batches. Training stops
    once validation loss has not improved for ``hyper.patience`` epochs, and
    the parameters with the lowest validation loss are returned.
    """
    rng = np.random.default_rng(np.random.SeedSequence(hyper.seed, spawn_key=(11,)))
    params = init_params(cfg, rng)
    params.theta = params.theta.astype(hyper.dtype)
    model = Model(cfg, params, data.mean, data.std, {"seed": hyper.seed, **asdict(hyper)})

    tr, va = data.train_idx, data.val_idx
    if len(tr) == 0 or len(va) == 0:
        raise ValueError("dataset needs non-empty train and validation splits")
    x_train = data.inputs[tr].astype(hyper.dtype)
    y_train = model.training_targets(data.targets[tr], data.raw_current[tr]).astype(hyper.dtype)

    result = TrainResult(model)
    result.initial_train_loss = dataset_loss(model, data, tr)
    opt = AdamState.zeros(params.size, params.theta.dtype)
    best_theta = params.theta.copy()
    best_val = np.inf
    since_best = 0
    for epoch in range(1, hyper.max_epochs + 1):
        order = rng.permutation(len(tr))
        running = 0.0
        for start in range(0, len(order), hyper.batch_size):
            sel = order[start:start + hyper.batch_size]
            loss, grad = loss_and_gradient(params, x_train[sel], y_train[sel], cfg)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            adam_step(opt, params.theta, grad, hyper)
            running += loss * len(sel)
        if not np.all(np.isfinite(params.theta)):
            raise TrainingDiverged(f"non-finite parameters at epoch {epoch}")
        val = dataset_loss(model, data, va)
        if not np.isfinite(val):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        result.train_history.append(running / len(tr))
        result.val_history.append(val)
        if callback is not None:
            callback(epoch, running / len(tr), val)
        if val < best_val:
            best_val = val
            best_theta[:] = params.theta
            result.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= hyper.patience:
                break
    result.epochs_run = epoch
    params.theta[:] = best_theta
    result.train_loss = dataset_loss(model, data, tr)
    result.val_loss = best_val
    if len(data.test_idx):
        result.test_loss = dataset_loss(model, data, data.test_idx)
    model.meta.update(epochs_run=result.epochs_run, best_epoch=result.best_epoch)
    log.debug("trained %s: %d epochs, train %.4g val %.4g test %.4g",
              cfg.architecture, epoch, result.train_loss, result.val_loss, result.test_loss)
    return result


def train_with_retry(cfg, data, hyper, retries=1):
    """``train``, retrying with ``seed + 1`` on divergence. Returns
    ``(result, seed_used)``; raises if every attempt diverges."""
    for attempt in range(retries + 1):
        h = replace(hyper, seed=hyper.seed + attempt)
        try:
            return train(cfg, data, h), h.seed
        except TrainingDiverged:
            log.warning("training diverged with seed %d", h.seed)
    raise TrainingDiverged(f"diverged after {retries + 1} attempts")


# ---------------------------------------------------------------- sweeps

SWEEP_SPACE = {
    "target": ["v_next", "delta_v"],
    "learning_rate": [1e-3, 1e-4, 1e-5],
    "hidden_size": [128, 256, 512],
    "history": [4, 8, 16],
    "weight_decay": [0.0, 4e-5, 4e-3],
}

_MODEL_KEYS = {"architecture", "hidden_size", "history", "target", "n_hidden_layers"}
_HYPER_KEYS = {"learning_rate", "weight_decay", "batch_size", "max_epochs", "patience"}


def grid(space):
    keys = list(space)
    for values in itertools.product(*(space[k] for k in keys)):
        yield dict(zip(keys, values))


@dataclass
class SweepResult:
    best: dict
    rows: list  # one dict per (setting, replicate)
    summary: list  # one dict per setting, sorted by mean test loss


def hyperparameter_sweep(space, cfg_base, hyper_base, make_data, replicates=10):
    """Train ``replicates`` seeds for every combination in ``space``.

    ``make_data(history)`` returns the sliced dataset for a history length.
    Divergent runs are retried once with the next seed and otherwise
    recorded as failures. Settings are ranked by mean test loss.
    """
    if not space or any(len(v) == 0 for v in space.values()):
        raise ValueError("empty search space")
    datasets = {}
    rows, summary = [], []
    for setting in grid(space):
        cfg = replace(cfg_base, **{k: v for k, v in setting.items() if k in _MODEL_KEYS})
        hyper = replace(hyper_base, **{k: v for k, v in setting.items() if k in _HYPER_KEYS})
        if cfg.history not in datasets:
            datasets[cfg.history] = make_data(cfg.history)
        data = datasets[cfg.history]
        tests = []
        for rep in range(replicates):
            seed = hyper_base.seed + 2 * rep  # leave room for the retry seed
            row = {**setting, "replicate": rep, "seed": seed}
            try:
                res, used = train_with_retry(cfg, data, replace(hyper, seed=seed))
            except TrainingDiverged:
                row.update(status="diverged", train_loss="", val_loss="", test_loss="", epochs="")
            else:
                row.update(status="ok", seed=used, train_loss=res.train_loss,
                           val_loss=res.val_loss, test_loss=res.test_loss, epochs=res.epochs_run)
                tests.append(res.test_loss)
            rows.append(row)
        mean = float(np.mean(tests)) if tests else float("inf")
        summary.append({**setting, "mean_test_loss": mean, "n_ok": len(tests)})
    summary.sort(key=lambda s: s["mean_test_loss"])
    best = {k: v for k, v in summary[0].items() if k not in ("mean_test_loss", "n_ok")}
    return SweepResult(best, rows, summary)


def write_sweep_csv(path, rows):
    if not rows:
        raise ValueError("no sweep rows")
    fields = list(rows[0])
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)

"""Numpy MLP and GRU-with-decoder velocity predictors with exact gradients.

Parameters live in one flat vector; ``ModelParams.views()`` exposes named,
reshaped views into it so optimizer updates and layer arithmetic share
storage.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    architecture: str = "gru"  # "mlp" or "gru"
    hidden_size: int = 128
    history: int = 16
    target: str = "v_next"  # "v_next" or "delta_v"
    state_dim: int = 13
    output_dim: int = 6
    n_hidden_layers: int = 4  # MLP only

    def __post_init__(self):
        if self.architecture not in ("mlp", "gru"):
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.target not in ("v_next", "delta_v"):
            raise ValueError(f"unknown target {self.target!r}")
        if self.hidden_size <= 0 or self.history <= 0:
            raise ValueError("hidden_size and history must be positive")
        if self.architecture == "mlp" and self.history != 1:
            raise ValueError("MLP predictors use a history of 1")

    @property
    def input_dim(self):
        if self.architecture == "mlp":
            return self.state_dim * self.history
        return self.state_dim

    @property
    def decoder_width(self):
        return max(1, self.hidden_size // 2)

    def layer_shapes(self):
        """Ordered ``(name, shape)`` pairs of every parameter tensor."""
        H, out = self.hidden_size, self.output_dim
        if self.architecture == "mlp":
            widths = [self.input_dim] + [H] * self.n_hidden_layers + [out]
            shapes = []
            for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
                shapes += [(f"W{i}", (a, b)), (f"b{i}", (b,))]
            return shapes
        D = self.decoder_width
        return [
            ("Wx", (self.state_dim, 3 * H)),  # update | reset | candidate
            ("Wh_zr", (H, 2 * H)),
            ("Wh_n", (H, H)),
            ("b", (3 * H,)),
            ("D1", (H, D)),
            ("d1", (D,)),
            ("D2", (D, out)),
            ("d2", (out,)),
        ]


@dataclass
class ModelParams:
    theta: np.ndarray
    shapes: list = field(default_factory=list)

    def views(self, theta=None):
        theta = self.theta if theta is None else theta
        out, pos = {}, 0
        for name, shape in self.shapes:
            size = int(np.prod(shape))
            out[name] = theta[pos:pos + size].reshape(shape)
            pos += size
        return out

    def copy(self):
        return ModelParams(self.theta.copy(), list(self.shapes))

    @property
    def size(self):
        return self.theta.size


def init_params(cfg, rng):
    shapes = cfg.layer_shapes()
    n = sum(int(np.prod(s)) for _, s in shapes)
    params = ModelParams(np.zeros(n), shapes)
    H = cfg.hidden_size
    for name, w in params.views().items():
        if w.ndim != 2:
            continue
        fan_in, fan_out = w.shape
        if name in ("Wx", "Wh_zr"):
            # one gate block at a time
            fan_out = H
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w[...] = rng.uniform(-limit, limit, w.shape)
    return params


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------- MLP


def mlp_forward(params, x, cfg, cache=False):
    """Forward pass on a batch ``x`` of shape (B, input_dim)."""
    w = params.views()
    a = np.asarray(x, dtype=params.theta.dtype)
    acts = [a]
    n_layers = cfg.n_hidden_layers + 1
    for i in range(n_layers):
        a = a @ w[f"W{i}"] + w[f"b{i}"]
        if i < n_layers - 1:
            a = np.maximum(a, 0.0)
        acts.append(a)
    return (a, acts) if cache else a


def mlp_backward(params, acts, dout, cfg):
    w = params.views()
    grad = np.zeros_like(params.theta)
    g = params.views(grad)
    n_layers = cfg.n_hidden_layers + 1
    delta = dout
    for i in reversed(range(n_layers)):
        g[f"W{i}"][...] = acts[i].T @ delta
        g[f"b{i}"][...] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ w[f"W{i}"].T) * (acts[i] > 0.0)
    return grad


# ---------------------------------------------------------------- GRU


def gru_forward(params, x, cfg, cache=False):
    """Forward pass on a batch of windows ``x`` of shape (B, h, state_dim).

    The hidden state starts at zero and is updated once per window step;
    the decoder maps the final hidden state to the output.
    """
    w = params.views()
    x = np.asarray(x, dtype=params.theta.dtype)
    if x.ndim == 2:
        x = x[None]
    B, T, _ = x.shape
    H = cfg.hidden_size
    Wx, Wh_zr, Wh_n, b = w["Wx"], w["Wh_zr"], w["Wh_n"], w["b"]
    h = np.zeros((B, H), dtype=x.dtype)
    # input projections for every step at once
    xp = x @ Wx + b
    steps = []
    for t in range(T):
        zr = _sigmoid(xp[:, t, :2 * H] + h @ Wh_zr)
        z, r = zr[:, :H], zr[:, H:]
        rh = r * h
        n = np.tanh(xp[:, t, 2 * H:] + rh @ Wh_n)
        h_new = z * h + (1.0 - z) * n
        if cache:
            steps.append((h, z, r, rh, n))
        h = h_new
    a1 = h @ w["D1"] + w["d1"]
    u = np.maximum(a1, 0.0)
    out = u @ w["D2"] + w["d2"]
    if cache:
        return out, (x, steps, h, u)
    return out


def gru_backward(params, cached, dout, cfg):
    w = params.views()
    grad = np.zeros_like(params.theta)
    g = params.views(grad)
    x, steps, h_last, u = cached
    H = cfg.hidden_size

    g["D2"][...] = u.T @ dout
    g["d2"][...] = dout.sum(axis=0)
    da1 = (dout @ w["D2"].T) * (u > 0.0)
    g["D1"][...] = h_last.T @ da1
    g["d1"][...] = da1.sum(axis=0)
    dh = da1 @ w["D1"].T

    Wh_zr, Wh_n = w["Wh_zr"], w["Wh_n"]
    dxp = np.empty((x.shape[0], x.shape[1], 3 * H), dtype=x.dtype)
    for t in reversed(range(len(steps))):
        h, z, r, rh, n = steps[t]
        dz = dh * (h - n)
        dn = dh * (1.0 - z)
        dh_prev = dh * z
        dan = dn * (1.0 - n * n)
        g["Wh_n"] += rh.T @ dan
        drh = dan @ Wh_n.T
        dr = drh * h
        dh_prev += drh * r
        dazr = np.concatenate([dz * z * (1.0 - z), dr * r * (1.0 - r)], axis=1)
        g["Wh_zr"] += h.T @ dazr
        dh_prev += dazr @ Wh_zr.T
        dxp[:, t, :2 * H] = dazr
        dxp[:, t, 2 * H:] = dan
        dh = dh_prev
    B = x.shape[0]
    g["Wx"][...] = x.reshape(-1, x.shape[2]).T @ dxp.reshape(-1, 3 * H)
    g["b"][...] = dxp.reshape(B * x.shape[1], -1).sum(axis=0)
    return grad


# ---------------------------------------------------------------- generic


def forward(params, x, cfg, cache=False):
    """Network output for a batch of normalized windows (B, h, state_dim).

    Arithmetic runs in the dtype of the parameter vector.
    """
    x = np.asarray(x)
    if cfg.architecture == "mlp":
        return mlp_forward(params, x.reshape(x.shape[0], -1), cfg, cache)
    return gru_forward(params, x, cfg, cache)


def loss_and_gradient(params, x, y, cfg):
    """Batch MSE (mean over examples of the squared residual norm) and its
    gradient with respect to the flat parameter vector."""
    out, cached = forward(params, x, cfg, cache=True)
    resid = out - np.asarray(y, dtype=out.dtype)
    B = len(y)
    loss = float(np.sum(resid * resid) / B)
    dout = 2.0 * resid / B
    if cfg.architecture == "mlp":
        grad = mlp_backward(params, cached, dout, cfg)
    else:
        grad = gru_backward(params, cached, dout, cfg)
    return loss, grad


def gradients(params, x, y, cfg):
    return loss_and_gradient(params, x, y, cfg)[1]


def gradient_check(params, x, y, cfg, n_coords=50, eps=1e-5, rng=None):
    """Largest relative error between analytic and central-difference
    gradients over ``n_coords`` randomly chosen parameters.

    The relative error of a coordinate is ``|a - n| / max(|a|, |n|)``;
    coordinates where both are below 1e-10 count as exact.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    analytic = gradients(params, x, y, cfg)
    coords = rng.choice(params.size, size=min(n_coords, params.size), replace=False)
    worst = 0.0
    for i in coords:
        saved = params.theta[i]
        params.theta[i] = saved + eps
        up = loss_and_gradient(params, x, y, cfg)[0]
        params.theta[i] = saved - eps
        down = loss_and_gradient(params, x, y, cfg)[0]
        params.theta[i] = saved
        numeric = (up - down) / (2.0 * eps)
        scale = max(abs(analytic[i]), abs(numeric))
        if scale > 1e-10:
            worst = max(worst, abs(analytic[i] - numeric) / scale)
    return worst


# ---------------------------------------------------------------- model


@dataclass
class Model:
    """A trained predictor together with its input normalization."""

    cfg: ModelConfig
    params: ModelParams
    mean: np.ndarray
    std: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def history(self):
        return self.cfg.history

    def training_targets(self, targets, raw_current):
        if self.cfg.target == "delta_v":
            return targets - raw_current[:, 7:13]
        return targets

    def predict_normalized(self, inputs, raw_current):
        out = forward(self.params, inputs, self.cfg).astype(float)
        if self.cfg.target == "delta_v":
            out = out + raw_current[:, 7:13]
        return out

    def predict_velocity(self, windows):
        """Next velocity for raw (unnormalized) windows of shape (B, h, 13)."""
        windows = np.asarray(windows, dtype=float)
        if windows.ndim == 2:
            windows = windows[None]
        inputs = (windows - self.mean) / self.std
        return self.predict_normalized(inputs, windows[:, -1, :])

    def save(self, path):
        header = {
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.cfg),
            "shapes": [[name, list(shape)] for name, shape in self.params.shapes],
            "meta": self.meta,
        }
        with open(path, "wb") as fh:
            np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)),
                     theta=self.params.theta, mean=self.mean, std=self.std)

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            if header.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"{path}: checkpoint version {header.get('version')!r} unsupported")
            cfg = ModelConfig(**header["config"])
            shapes = [(name, tuple(shape)) for name, shape in header["shapes"]]
            params = ModelParams(data["theta"].copy(), shapes)
            return cls(cfg, params, data["mean"].copy(), data["std"].copy(), header["meta"])

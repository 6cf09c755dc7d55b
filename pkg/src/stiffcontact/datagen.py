"""Noisy die-roll datasets: sampling, noising, velocity reconstruction,
slicing into supervised windows, and trajectory files on disk."""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core_math import quat_conj, quat_exp, quat_log, quat_mul, quat_normalize
from .cube_sim import N_STEPS, STATE_DIM, State, SystemParams, Trajectory, simulate

SCHEMA_VERSION = 1

X0_REF = np.array([
    0.186, 0.026, 0.122,
    -0.525, 0.394, -0.296, -0.678,
    0.014, 1.291, -0.212,
    1.463, -4.854, 9.870,
])


class SchemaMismatch(ValueError):
    pass


class MalformedFile(ValueError):
    pass


def reference_state():
    s = State.from_vector(X0_REF)
    s.q = quat_normalize(s.q)
    return s


@dataclass
class DataGenConfig:
    x0_ref: State = field(default_factory=reference_state)
    # initial-state perturbation half-widths
    dp0: float = 0.1  # m
    dq0: float = 1.0  # rad
    dpdot0: float = 0.1  # m/s
    domega0: float = 0.1  # rad/s
    # constant-in-time drift
    drift_p: float = 1e-3  # m
    drift_q: float = math.radians(1.0)
    # i.i.d. per-sample noise
    sample_p: float = 1e-5  # m
    sample_q: float = math.radians(0.01)
    n_train_pool: int = 10000
    n_eval: int = 1000
    seed: int = 0

    def __post_init__(self):
        for name in ("dp0", "dq0", "dpdot0", "domega0", "drift_p", "drift_q", "sample_p", "sample_q"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def noiseless(cls, **kw):
        return cls(drift_p=0.0, drift_q=0.0, sample_p=0.0, sample_q=0.0, **kw)


def stream(seed, *key):
    """Independent generator for ``(seed, *key)``; counter-based splitting."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def random_axis(rng):
    while True:
        v = rng.uniform(-1.0, 1.0, 3)
        n = np.linalg.norm(v)
        if n > 1e-6:
            return v / n


def random_rotation(rng, max_angle):
    """``Q(theta * axis)`` with ``theta ~ U[-max_angle, max_angle]``."""
    axis = random_axis(rng)
    theta = rng.uniform(-max_angle, max_angle)
    return quat_exp(theta * axis)


def sample_initial_state(cfg, rng):
    ref = cfg.x0_ref
    p = ref.p + rng.uniform(-cfg.dp0, cfg.dp0, 3)
    q = quat_normalize(quat_mul(quat_normalize(ref.q), random_rotation(rng, cfg.dq0)))
    pdot = ref.pdot + rng.uniform(-cfg.dpdot0, cfg.dpdot0, 3)
    omega = ref.omega + rng.uniform(-cfg.domega0, cfg.domega0, 3)
    return State(p, q, pdot, omega)


def add_trajectory_noise(traj, cfg, rng):
    """Noisy copies of the configurations ``(p_t, q_t)`` of ``traj``.

    One drift offset is shared by the whole trajectory; an independent
    per-sample offset is then added to each configuration.
    """
    states = traj.states if isinstance(traj, Trajectory) else np.asarray(traj)
    p = states[:, 0:3].copy()
    q = states[:, 3:7].copy()
    p += rng.uniform(-cfg.drift_p, cfg.drift_p, 3)
    dq = random_rotation(rng, cfg.drift_q)
    for t in range(len(q)):
        q[t] = quat_mul(q[t], dq)
    p += rng.uniform(-cfg.sample_p, cfg.sample_p, p.shape)
    for t in range(len(q)):
        q[t] = quat_normalize(quat_mul(q[t], random_rotation(rng, cfg.sample_q)))
    return p, q


def reconstruct_velocities(configs, dt):
    """Invert the position and orientation updates by finite differences.

    Returns a (T, 13) state array. The first state's velocity is copied
    from the second.
    """
    p, q = (np.asarray(a, dtype=float) for a in configs)
    if len(p) < 2:
        raise ValueError("need at least two configurations")
    states = np.empty((len(p), STATE_DIM))
    states[:, 0:3] = p
    states[:, 3:7] = q
    states[1:, 7:10] = np.diff(p, axis=0) / dt
    for t in range(1, len(p)):
        states[t, 10:13] = quat_log(quat_mul(quat_conj(q[t - 1]), q[t])) / dt
    states[0, 7:13] = states[1, 7:13]
    return states


def generate_trajectory(prm, cfg, index, split="train", noisy=True):
    """Trajectory ``index`` of a split, a pure function of ``(cfg.seed, split, index)``.

    The returned states are the noisy, velocity-reconstructed measurements;
    ``max_penetration`` comes from the clean simulation.
    """
    split_id = {"train": 0, "eval": 1}[split]
    rng = stream(cfg.seed, split_id, index)
    x0 = sample_initial_state(cfg, rng)
    clean = simulate(x0, prm, N_STEPS, seed=cfg.seed)
    tag = {"split": split, "index": index, "noisy": int(noisy)}
    if not noisy:
        clean.extra.update(tag)
        return clean
    configs = add_trajectory_noise(clean, cfg, rng)
    states = reconstruct_velocities(configs, prm.dt)
    return Trajectory(states, prm, cfg.seed, clean.max_penetration, tag)


def generate_trajectories(prm, cfg, n, split="train", noisy=True, start=0):
    return [generate_trajectory(prm, cfg, i, split, noisy) for i in range(start, start + n)]


# ---------------------------------------------------------------- slicing


@dataclass
class SlicedDataset:
    """Sliding-window examples with a 70:20:10 split.

    ``inputs`` are normalized windows (n, h, 13); ``raw_current`` keeps the
    unnormalized last state of each window for the oracle and for
    delta-velocity targets. ``targets`` are raw next velocities (n, 6).
    """

    inputs: np.ndarray
    targets: np.ndarray
    raw_current: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def h(self):
        return self.inputs.shape[1]

    def __len__(self):
        return len(self.targets)

    def split(self, name):
        return {"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}[name]

    def normalize(self, windows):
        return (np.asarray(windows) - self.mean) / self.std

    def denormalize(self, windows):
        return np.asarray(windows) * self.std + self.mean


def split_sizes(n, fractions=(0.7, 0.2, 0.1)):
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def slice_windows(states, h):
    """All ``(window, next_velocity)`` pairs of one trajectory."""
    states = np.asarray(states)
    n = len(states) - h
    if n < 1:
        raise ValueError(f"trajectory of length {len(states)} too short for history {h}")
    idx = np.arange(h)[None, :] + np.arange(n)[:, None]
    return states[idx], states[h:, 7:13]


def build_dataset(trajs, h, seed=0):
    windows, targets = [], []
    for tr in trajs:
        states = tr.states if isinstance(tr, Trajectory) else tr
        w, y = slice_windows(states, h)
        windows.append(w)
        targets.append(y)
    windows = np.concatenate(windows)
    targets = np.concatenate(targets)

    n = len(targets)
    perm = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,))).permutation(n)
    n_train, n_val, _ = split_sizes(n)
    train_idx = np.sort(perm[:n_train])
    val_idx = np.sort(perm[n_train:n_train + n_val])
    test_idx = np.sort(perm[n_train + n_val:])

    train = windows[train_idx]
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std[std < 1e-12] = 1.0
    return SlicedDataset(
        inputs=(windows - mean) / std,
        targets=targets,
        raw_current=windows[:, -1, :].copy(),
        mean=mean,
        std=std,
        train_idx=train_idx,
        val_idx=val_idx,
        test_idx=test_idx,
    )


# ---------------------------------------------------------------- files


def _fmt(x):
    return repr(float(x))


def save_trajectory(path, traj, extra=None):
    path = Path(path)
    prm = traj.params
    header = {
        "schema": SCHEMA_VERSION,
        "k": _fmt(prm.k),
        "zeta": _fmt(prm.zeta),
        "dt": _fmt(prm.dt),
        "contact_model": prm.contact_model,
        "seed": int(traj.seed),
        "max_penetration": _fmt(traj.max_penetration),
    }
    header.update(traj.extra)
    if extra:
        header.update(extra)
    lines = [f"# {key}={value}" for key, value in header.items()]
    lines += [" ".join(_fmt(v) for v in row) for row in traj.states]
    path.write_text("\n".join(lines) + "\n")


def load_trajectory(path):
    path = Path(path)
    header = {}
    rows = []
    try:
        text = path.read_text()
    except OSError as exc:
        raise MalformedFile(f"{path}: {exc}") from exc
    for line in text.splitlines():
        if line.startswith("#"):
            key, sep, value = line[1:].strip().partition("=")
            if not sep:
                raise MalformedFile(f"{path}: bad header line {line!r}")
            header[key.strip()] = value.strip()
        elif line.strip():
            rows.append(line.split())

    if header.get("schema") != str(SCHEMA_VERSION):
        raise SchemaMismatch(f"{path}: schema {header.get('schema')!r}, expected {SCHEMA_VERSION}")
    for key in ("k", "zeta", "dt", "seed", "max_penetration"):
        if key not in header:
            raise MalformedFile(f"{path}: missing header key {key!r}")
    if len(rows) != N_STEPS or any(len(r) != STATE_DIM for r in rows):
        raise MalformedFile(f"{path}: expected {N_STEPS} rows of {STATE_DIM} values")
    try:
        states = np.array(rows, dtype=float)
        prm = SystemParams(
            k=float(header["k"]),
            zeta=float(header["zeta"]),
            dt=float(header["dt"]),
            contact_model=header.get("contact_model", "baumgarte"),
        )
        traj = Trajectory(states, prm, int(header["seed"]), float(header["max_penetration"]))
    except ValueError as exc:
        raise MalformedFile(f"{path}: {exc}") from exc
    known = {"schema", "k", "zeta", "dt", "contact_model", "seed", "max_penetration"}
    traj.extra = {key: value for key, value in header.items() if key not in known}
    return traj


def save_dataset(directory, trajs, prefix="traj"):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, tr in enumerate(trajs):
        path = directory / f"{prefix}_{i:05d}.txt"
        save_trajectory(path, tr)
        paths.append(path)
    return paths


def load_dataset(directory, prefix="traj", limit=None):
    paths = sorted(Path(directory).glob(f"{prefix}_*.txt"))
    if limit is not None:
        paths = paths[:limit]
    if not paths:
        raise MalformedFile(f"no trajectory files in {directory}")
    return [load_trajectory(p) for p in paths]

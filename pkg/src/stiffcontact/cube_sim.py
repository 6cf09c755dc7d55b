"""Compliant-contact simulator for a cube dropped on flat ground.

The contact model is a per-corner spring-damper acting on penetration depth,
integrated with a semi-implicit (symplectic) Euler step and an exponential-map
orientation update. The same step serves as the data generator and as the
one-step "oracle" predictor.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .core_math import quat_exp, quat_mul, quat_normalize, rotate_inv, rotate_many

STIFFNESS = {"hard": 2500.0, "medium": 300.0, "soft": 100.0}

# position (3), quaternion wxyz (4), linear velocity (3), body angular velocity (3)
STATE_DIM = 13
N_STEPS = 80

DIVERGENCE_LIMIT = 1e6


class SimulationDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class SystemParams:
    """Physical constants of the die plus the contact law settings.

    ``contact_model`` selects how corner forces realize the spring-damper
    penetration law:

    * ``"baumgarte"`` (default): normal forces are solved jointly over the
      active corners so that each penetration obeys ``r'' = -k r - b r'``,
      with gravity support phased in over ``support_depth``. Friction is
      Coulomb-capped and limited to the impulse that would stop the
      corner's tangential motion in one step.
    * ``"penalty"``: each corner pushes with ``(m / n_active) (k r + b r')``
      and friction ``min(mu f_n, (m / n_active) c_t |v_t|)``. Resting
      penetration is ``g / k``. Unstable at single-corner impacts for large k.
    """

    k: float = 2500.0
    m: float = 0.37
    inertia: float = 6.167e-4
    side: float = 0.1
    g: float = 9.81
    mu: float = 1.0
    zeta: float = 1.04
    dt: float = 6.74e-3
    contact_model: str = "baumgarte"
    friction_gain: float | None = None
    support_depth: float = 4e-3  # depth over which gravity support ramps in (baumgarte)

    def __post_init__(self):
        if self.contact_model not in ("baumgarte", "penalty"):
            raise ValueError(f"unknown contact model {self.contact_model!r}")
        for name in ("k", "m", "inertia", "side", "g", "zeta", "dt", "support_depth"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def b(self):
        return 2.0 * self.zeta * np.sqrt(self.k)

    @property
    def c_t(self):
        """Friction gain: 1/s for the penalty model, a fraction of the
        one-step stopping impulse for the Baumgarte model."""
        if self.friction_gain is not None:
            return self.friction_gain
        if self.contact_model == "penalty":
            return 100.0 * np.sqrt(self.k)
        return 1.0

    @classmethod
    def named(cls, stiffness, **kw):
        return cls(k=STIFFNESS[stiffness], **kw)


@dataclass
class State:
    p: np.ndarray
    q: np.ndarray
    pdot: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        self.pdot = np.asarray(self.pdot, dtype=float)
        self.omega = np.asarray(self.omega, dtype=float)

    def to_vector(self):
        return np.concatenate([self.p, self.q, self.pdot, self.omega])

    @classmethod
    def from_vector(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(x[0:3].copy(), x[3:7].copy(), x[7:10].copy(), x[10:13].copy())

    @property
    def velocity(self):
        return np.concatenate([self.pdot, self.omega])


@dataclass
class ContactResult:
    force: np.ndarray
    torque: np.ndarray
    penetrations: np.ndarray


@dataclass
class Trajectory:
    states: np.ndarray  # (T, 13)
    params: SystemParams
    seed: int = 0
    max_penetration: float = 0.0
    extra: dict = field(default_factory=dict)  # free-form file header entries

    def __len__(self):
        return len(self.states)

    def state(self, t):
        return State.from_vector(self.states[t])


def body_corners(side):
    h = 0.5 * side
    return np.array([[sx, sy, sz] for sx in (-h, h) for sy in (-h, h) for sz in (-h, h)])


def corner_positions(s, prm):
    return s.p + rotate_many(s.q, body_corners(prm.side))


def contact_forces(s, prm):
    d = body_corners(prm.side)
    arm = rotate_many(s.q, d)
    height = s.p[2] + arm[:, 2]
    pen = np.maximum(-height, 0.0)
    # corner world velocity: pdot + R (omega x d)
    vel = s.pdot + rotate_many(s.q, np.cross(s.omega, d))
    if prm.contact_model == "penalty":
        active = np.flatnonzero(height < 0.0)
        normal = _penalty_normal(pen, vel, active, prm)
    else:
        active = np.flatnonzero(height <= 0.0)
        normal = _baumgarte_normal(pen, vel, arm, active, prm)

    force = np.zeros(3)
    torque = np.zeros(3)
    n_active = len(active)
    for i in active:
        fn = normal[i]
        f = np.array([0.0, 0.0, fn])
        speed = np.hypot(vel[i, 0], vel[i, 1])
        if speed > 0.0 and fn > 0.0:
            t = np.array([vel[i, 0], vel[i, 1], 0.0]) / speed
            if prm.contact_model == "penalty":
                cap = prm.m / n_active * prm.c_t * speed
            else:
                lever = np.cross(arm[i], t)
                inv_mass = 1.0 / prm.m + lever @ lever / prm.inertia
                cap = prm.c_t * speed / (n_active * prm.dt * inv_mass)
            f -= min(prm.mu * fn, cap) * t
        force += f
        torque += np.cross(d[i], rotate_inv(s.q, f))
    return ContactResult(force, torque, pen)


def _penalty_normal(pen, vel, active, prm):
    normal = np.zeros(len(pen))
    if len(active):
        m_eff = prm.m / len(active)
        normal[active] = m_eff * np.maximum(0.0, prm.k * pen[active] - prm.b * vel[active, 2])
    return normal


def _baumgarte_normal(pen, vel, arm, active, prm):
    """Nonnegative normal forces giving each active corner the upward
    acceleration ``k r + b r' + g min(1, r / support_depth)``.

    The gravity term ramps in with depth so the force is continuous at
    first touch; a flat cube rests at ``g / (k + g / support_depth)``.

    Corners whose solved force comes out negative are released and the
    system is re-solved; the min-norm solution handles coplanar corners.
    """
    normal = np.zeros(len(pen))
    support = prm.g * np.minimum(1.0, pen / prm.support_depth)
    target = prm.k * pen - prm.b * vel[:, 2] + support
    idx = active[target[active] > 0.0]
    # normal acceleration at corner i per unit force at corner j
    lever = np.cross(arm, [0.0, 0.0, 1.0])
    while len(idx):
        a = 1.0 / prm.m + lever[idx] @ lever[idx].T / prm.inertia
        lam = np.linalg.lstsq(a, target[idx], rcond=1e-10)[0]
        if np.all(lam >= 0.0):
            normal[idx] = lam
            break
        idx = idx[lam > 0.0]
    return normal


def step(s, prm, contact=None):
    if contact is None:
        contact = contact_forces(s, prm)
    pdot = s.pdot + (contact.force / prm.m - np.array([0.0, 0.0, prm.g])) * prm.dt
    omega = s.omega + (contact.torque / prm.inertia) * prm.dt
    p = s.p + pdot * prm.dt
    q = quat_normalize(quat_mul(s.q, quat_exp(omega * prm.dt)))
    return State(p, q, pdot, omega)


def _check(x, t):
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
        raise SimulationDiverged(f"state diverged at step {t}")


def simulate(x0, prm, n_steps=N_STEPS, seed=0):
    states = np.empty((n_steps, STATE_DIM))
    s = replace(x0, q=quat_normalize(x0.q))
    states[0] = s.to_vector()
    max_pen = 0.0
    for t in range(1, n_steps):
        c = contact_forces(s, prm)
        max_pen = max(max_pen, float(c.penetrations.max()))
        s = step(s, prm, c)
        states[t] = s.to_vector()
        _check(states[t], t)
    max_pen = max(max_pen, float(contact_forces(s, prm).penetrations.max()))
    return Trajectory(states, prm, seed, max_pen)


def oracle_predict(s, prm):
    """Next velocity ``[pdot; omega]`` from a single step of the simulator."""
    if not isinstance(s, State):
        s = State.from_vector(s)
    nxt = step(s, prm)
    return nxt.velocity

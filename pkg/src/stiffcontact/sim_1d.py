"""Point mass falling onto a critically damped spring floor.

Used for the one-dimensional illustration: predict the velocity after one
second of flight from the initial velocity, both observed with Gaussian noise.
"""

from dataclasses import dataclass

import numpy as np

G = 9.81


@dataclass
class Config1D:
    k: float = 2500.0
    duration: float = 1.0
    noise_var: float = 0.01
    zdot_range: tuple = (-3.0, 5.0)
    z0: float = 1.0

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("k must be positive")

    @property
    def step_size(self):
        return min(1e-4, 0.01 / np.sqrt(self.k))


def accel_1d(z, zdot, k):
    """Acceleration of the point mass; vectorized over ``z`` and ``zdot``."""
    z = np.asarray(z, dtype=float)
    zdot = np.asarray(zdot, dtype=float)
    contact = -k * z - 2.0 * np.sqrt(k) * zdot - G
    return np.where(z > 0.0, -G, contact)


def _contact_accel(z, v, k):
    return -k * z - 2.0 * np.sqrt(k) * v - G


def _rk4_contact(z, v, h, k):
    a1 = _contact_accel(z, v, k)
    z2, v2 = z + 0.5 * h * v, v + 0.5 * h * a1
    a2 = _contact_accel(z2, v2, k)
    z3, v3 = z + 0.5 * h * v2, v + 0.5 * h * a2
    a3 = _contact_accel(z3, v3, k)
    z4, v4 = z + h * v3, v + h * a3
    a4 = _contact_accel(z4, v4, k)
    z = z + h / 6.0 * (v + 2.0 * v2 + 2.0 * v3 + v4)
    v = v + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    return z, v


def integrate_1d(z, zdot, cfg, step_size=None, duration=None):
    """Fixed-step RK4 over ``cfg.duration`` seconds.

    Free flight is integrated in closed form (RK4 is exact there anyway) and
    the touchdown time inside a step is found from the ballistic quadratic, so
    the remainder of that step runs on the smooth contact field. This keeps
    the kink at ``z = 0`` from degrading the order of convergence.

    ``z`` and ``zdot`` may be arrays. Returns the final ``(z, zdot)``.
    """
    h = cfg.step_size if step_size is None else step_size
    duration = cfg.duration if duration is None else duration
    n = int(round(duration / h))
    h = duration / n
    k = cfg.k
    z = np.array(z, dtype=float)
    v = np.array(zdot, dtype=float)
    for _ in range(n):
        free = z > 0.0
        zb = z + h * v - 0.5 * G * h * h
        vb = v - G * h
        lands = free & (zb <= 0.0)
        zc, vc = _rk4_contact(z, v, h, k)
        if lands.any():
            # first root of z + v t - g t^2 / 2 = 0 with t in (0, h]
            zl, vl = z[lands], v[lands]
            tau = (vl + np.sqrt(vl * vl + 2.0 * G * zl)) / G
            zt, vt = _rk4_contact(np.zeros_like(zl), vl - G * tau, h - tau, k)
            zc = np.array(zc)
            vc = np.array(vc)
            zc[lands], vc[lands] = zt, vt
        z = np.where(free & ~lands, zb, zc)
        v = np.where(free & ~lands, vb, vc)
    return z, v


def velocity_map(zdot, cfg):
    """Noiseless map from initial velocity to velocity after ``cfg.duration``."""
    z0 = np.full(np.shape(zdot), cfg.z0)
    return integrate_1d(z0, zdot, cfg)[1]


def sample_1d_dataset(n, cfg, rng):
    """``n`` noisy ``(zdot_t, zdot_t1)`` pairs as an (n, 2) array."""
    if n < 1:
        raise ValueError("n must be at least 1")
    lo, hi = cfg.zdot_range
    v0 = rng.uniform(lo, hi, n)
    v1 = velocity_map(v0, cfg)
    sigma = np.sqrt(cfg.noise_var)
    noise = rng.normal(0.0, 1.0, (n, 2)) * sigma
    return np.column_stack([v0, v1]) + noise

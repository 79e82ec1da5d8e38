"""Exchange coefficient families, initial data and the manufactured solution.

All evaluations are vectorized over numpy arrays of points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi

FAMILIES = ("constant", "quasi_periodic", "locally_periodic", "rough_int")

# defaults for the scale parameter; only the oscillatory families use it
DEFAULT_EPSILON = {
    "constant": 1.0,
    "quasi_periodic": 1.0 / 32.0,
    "locally_periodic": 1.0 / 64.0,
    "rough_int": 1.0,
}


@dataclass(frozen=True)
class CoefficientField:
    """Scalar exchange coefficient kappa(x, y) on the unit square."""

    family: str
    epsilon: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown coefficient family {self.family!r}")
        if self.epsilon == 0.0:
            object.__setattr__(self, "epsilon", DEFAULT_EPSILON[self.family])

    def eval(self, x, y):
        return eval_coefficient(self, x, y)

    def key(self) -> str:
        return f"{self.family}:{self.epsilon!r}"


def eval_coefficient(field: CoefficientField, x, y):
    """Evaluate kappa at points (x, y); scalars or arrays."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    eps = field.epsilon
    if field.family == "constant":
        return np.ones(np.broadcast(x, y).shape)
    if field.family == "quasi_periodic":
        fx = 1.0 + 0.25 * np.sin(TWO_PI * x / eps)
        fy = (1.0 + 0.25 * np.sin(TWO_PI * y / eps)
              + 0.25 * np.sin(2.0 * np.sqrt(2.0) * np.pi * y / eps))
        return fx * fy
    if field.family == "locally_periodic":
        return 0.25 * np.exp(-np.cos(TWO_PI * (x + y) / eps)
                             + np.sin(TWO_PI * x / eps) * np.cos(TWO_PI * y))
    # rough_int: integer-valued, jumps across the level lines of sin*sin
    return np.floor(5.0 + 2.0 * np.sin(TWO_PI * x) * np.sin(TWO_PI * y))


def initial_bump(x, y) -> np.ndarray:
    """Normalized three-bump initial magnetization; shape (3,) + broadcast."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m1 = 0.6 + np.exp(-0.3 * (np.cos(TWO_PI * (x - 0.25))
                              + np.cos(TWO_PI * (y - 0.12))))
    m2 = 0.5 + np.exp(-0.4 * (np.cos(TWO_PI * x)
                              + np.cos(TWO_PI * (y - 0.4))))
    m3 = 0.4 + np.exp(-0.2 * (np.cos(TWO_PI * (x - 0.81))
                              + np.cos(TWO_PI * (y - 0.73))))
    m = np.stack([m1, m2, m3])
    return m / np.linalg.norm(m, axis=0)


# --- manufactured solution -------------------------------------------------

def _g(x, y):
    return (x * (1.0 - x)) ** 2 * (y * (1.0 - y)) ** 2


def _g_derivs(x, y):
    """g, grad g and Laplacian of g = x^2(1-x)^2 y^2(1-y)^2."""
    px = (x * (1.0 - x)) ** 2
    py = (y * (1.0 - y)) ** 2
    dpx = 2.0 * x * (1.0 - x) * (1.0 - 2.0 * x)
    dpy = 2.0 * y * (1.0 - y) * (1.0 - 2.0 * y)
    ddpx = 2.0 - 12.0 * x + 12.0 * x * x
    ddpy = 2.0 - 12.0 * y + 12.0 * y * y
    g = px * py
    gx = dpx * py
    gy = px * dpy
    lap = ddpx * py + px * ddpy
    return g, gx, gy, lap


@dataclass(frozen=True)
class ExactSolution:
    """Closed-form space-time magnetization on the unit sphere."""

    def value(self, x, y, t) -> np.ndarray:
        g = _g(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        st, ct = np.sin(t), np.cos(t)
        return np.stack(np.broadcast_arrays(
            np.cos(g) * st, np.sin(g) * st, ct * np.ones_like(g)))

    def time_derivative(self, x, y, t) -> np.ndarray:
        g = _g(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        st, ct = np.sin(t), np.cos(t)
        return np.stack(np.broadcast_arrays(
            np.cos(g) * ct, np.sin(g) * ct, -st * np.ones_like(g)))

    def gradient(self, x, y, t) -> np.ndarray:
        """Shape (3, 2) + broadcast: rows components, columns d/dx, d/dy."""
        g, gx, gy, _ = _g_derivs(np.asarray(x, dtype=float),
                                 np.asarray(y, dtype=float))
        st = np.sin(t)
        sg, cg = np.sin(g), np.cos(g)
        zero = np.zeros_like(g)
        row1 = np.stack(np.broadcast_arrays(-sg * st * gx, -sg * st * gy))
        row2 = np.stack(np.broadcast_arrays(cg * st * gx, cg * st * gy))
        row3 = np.stack(np.broadcast_arrays(zero, zero))
        return np.stack([row1, row2, row3])

    def laplacian(self, x, y, t) -> np.ndarray:
        g, gx, gy, lap_g = _g_derivs(np.asarray(x, dtype=float),
                                     np.asarray(y, dtype=float))
        st = np.sin(t)
        grad2 = gx * gx + gy * gy
        sg, cg = np.sin(g), np.cos(g)
        l1 = st * (-sg * lap_g - cg * grad2)
        l2 = st * (cg * lap_g - sg * grad2)
        return np.stack(np.broadcast_arrays(l1, l2, np.zeros_like(g)))


def exact_solution_example1() -> ExactSolution:
    return ExactSolution()


def forcing_example1(x, y, t, alpha: float) -> np.ndarray:
    """Forcing that makes the exact solution solve the damped LL equation.

    f = m_t - alpha*Lap(m) + m x Lap(m) - alpha*|grad m|^2 m.
    """
    sol = ExactSolution()
    m = sol.value(x, y, t)
    mt = sol.time_derivative(x, y, t)
    lap = sol.laplacian(x, y, t)
    grad = sol.gradient(x, y, t)
    grad_sq = np.sum(grad * grad, axis=(0, 1))
    cross = np.cross(m, lap, axis=0)
    return mt - alpha * lap + cross - alpha * grad_sq * m

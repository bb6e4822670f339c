"""Control-affine systems, RK4 integration, rollouts and mismatch measurements."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

VectorField = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class InputBox:
    """Axis-aligned input constraint ``lo <= u <= hi``."""

    lo: Tuple[float, ...]
    hi: Tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi):
            raise ValueError("lo and hi differ in length")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError("empty input box")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def symmetric(cls, bound, m: int = 1) -> "InputBox":
        b = np.broadcast_to(np.abs(np.asarray(bound, dtype=float)), (m,))
        return cls(tuple(-b), tuple(b))

    @property
    def m(self) -> int:
        return len(self.lo)

    def contains(self, u, tol: float = 0.0) -> bool:
        u = np.atleast_1d(u)
        return bool(np.all(u >= np.array(self.lo) - tol) and np.all(u <= np.array(self.hi) + tol))

    def clip(self, u) -> np.ndarray:
        return np.clip(np.atleast_1d(np.asarray(u, dtype=float)), self.lo, self.hi)

    def sample(self, rng: np.random.Generator, k: Optional[int] = None) -> np.ndarray:
        shape = (self.m,) if k is None else (k, self.m)
        return rng.uniform(self.lo, self.hi, size=shape)

    def vertices(self) -> np.ndarray:
        grids = np.meshgrid(*[(a, b) for a, b in zip(self.lo, self.hi)], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def linear_infimum(self, c) -> Tuple[float, np.ndarray]:
        """``min_{u in box} c^T u`` and a minimizing vertex."""
        c = np.atleast_1d(np.asarray(c, dtype=float))
        u = np.where(c > 0, self.lo, self.hi)
        return float(c @ u), u

    def as_inequalities(self) -> Tuple[np.ndarray, np.ndarray]:
        """``G u <= r`` form."""
        I = np.eye(self.m)
        return np.vstack([I, -I]), np.concatenate([self.hi, -np.array(self.lo)])


@dataclass(frozen=True)
class ControlAffineSystem:
    """``xdot = f(x) + g(x) u`` with ``f: R^n -> R^n`` and ``g: R^n -> R^{n x m}``."""

    n: int
    m: int
    f: VectorField
    g: VectorField
    name: str = ""
    params: object = None

    def fields(self, x) -> Tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        return np.asarray(self.f(x), dtype=float), np.asarray(self.g(x), dtype=float).reshape(self.n, self.m)

    def xdot(self, x, u) -> np.ndarray:
        fx, gx = self.fields(x)
        return fx + gx @ np.atleast_1d(u)

    def linearize(self, eps: float = 1e-6) -> Tuple[np.ndarray, np.ndarray]:
        """Jacobian of f and value of g at the origin (central differences for f)."""
        A = np.empty((self.n, self.n))
        for j in range(self.n):
            e = np.zeros(self.n)
            e[j] = eps
            A[:, j] = (np.asarray(self.f(e)) - np.asarray(self.f(-e))) / (2 * eps)
        return A, self.fields(np.zeros(self.n))[1]


# -- benchmarks -----------------------------------------------------------------


@dataclass(frozen=True)
class PendulumParams:
    mass: float = 1.0
    length: float = 1.0
    gravity: float = 9.81
    damping: float = 0.1

    def __post_init__(self):
        if not (self.mass > 0 and self.length > 0):
            raise ValueError("pendulum mass and length must be positive")


@dataclass(frozen=True)
class BicycleParams:
    f_mu: float = 0.0
    b_v: float = 1.0
    b_gamma: float = 1.0

    def __post_init__(self):
        if not (self.b_v > 0 and self.b_gamma > 0):
            raise ValueError("bicycle input gains must be positive")


def pendulum_fields(params: PendulumParams, x) -> Tuple[np.ndarray, np.ndarray]:
    """Inverted pendulum, ``theta = 0`` upright; state ``(theta, theta_dot)``."""
    th, om = float(x[0]), float(x[1])
    ml2 = params.mass * params.length ** 2
    f = np.array([om, params.gravity / params.length * math.sin(th) - params.damping / ml2 * om])
    g = np.array([[0.0], [1.0 / ml2]])
    return f, g


def bicycle_fields(params: BicycleParams, x) -> Tuple[np.ndarray, np.ndarray]:
    """Kinematic bicycle with state ``(p_x, p_y, v, theta, gamma)``."""
    _, _, v, th, gam = (float(s) for s in x)
    f = np.array([v * math.cos(th), v * math.sin(th), -params.f_mu, v * gam, 0.0])
    g = np.zeros((5, 2))
    g[2, 0] = params.b_v
    g[4, 1] = params.b_gamma
    return f, g


BICYCLE_SPEED_REF = 5.0


def bicycle_error_fields(params: BicycleParams, e) -> Tuple[np.ndarray, np.ndarray]:
    """Bicycle in tracking-error coordinates ``e = (p_y, v - v_ref, theta, gamma)``."""
    v = float(e[1]) + BICYCLE_SPEED_REF
    th, gam = float(e[2]), float(e[3])
    f = np.array([v * math.sin(th), -params.f_mu, v * gam, 0.0])
    g = np.zeros((4, 2))
    g[1, 0] = params.b_v
    g[3, 1] = params.b_gamma
    return f, g


def bicycle_state_to_error(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.array([x[1], x[2] - BICYCLE_SPEED_REF, x[3], x[4]])


def make_pendulum(params: PendulumParams) -> ControlAffineSystem:
    return ControlAffineSystem(2, 1, lambda x: pendulum_fields(params, x)[0],
                               lambda x: pendulum_fields(params, x)[1], "pendulum", params)


def make_bicycle(params: BicycleParams) -> ControlAffineSystem:
    return ControlAffineSystem(5, 2, lambda x: bicycle_fields(params, x)[0],
                               lambda x: bicycle_fields(params, x)[1], "bicycle", params)


def make_bicycle_error(params: BicycleParams) -> ControlAffineSystem:
    return ControlAffineSystem(4, 2, lambda e: bicycle_error_fields(params, e)[0],
                               lambda e: bicycle_error_fields(params, e)[1], "bicycle-error", params)


# -- integration ----------------------------------------------------------------


def step_rk4(system: ControlAffineSystem, x, u, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step with ``u`` held constant."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    k1 = system.xdot(x, u)
    k2 = system.xdot(x + 0.5 * dt * k1, u)
    k3 = system.xdot(x + 0.5 * dt * k2, u)
    k4 = system.xdot(x + dt * k3, u)
    out = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("state became non-finite during integration")
    return out


@dataclass
class Trajectory:
    t: np.ndarray
    X: np.ndarray
    U: np.ndarray
    V: np.ndarray
    status: List[str]
    slack: np.ndarray
    solve_time: np.ndarray = field(repr=False, default=None)

    def __len__(self) -> int:
        return self.t.size

    @property
    def fallback_count(self) -> int:
        return sum(1 for s in self.status if s != "optimal")

    def to_csv(self, path: str) -> None:
        n, m = self.X.shape[1], self.U.shape[1]
        header = ["t"] + ["x%d" % (i + 1) for i in range(n)] + ["u%d" % (i + 1) for i in range(m)] + ["V", "status"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k in range(len(self)):
                row = [self.t[k], *self.X[k], *self.U[k], self.V[k]]
                w.writerow(["%.17g" % v for v in row] + [self.status[k]])


def rollout(plant: ControlAffineSystem, controller, x0, horizon: float, dt: float,
            value: Optional[Callable[[np.ndarray], float]] = None) -> Trajectory:
    """Simulate the closed loop with a zero-order hold on the input.

    ``controller(x)`` returns either an input array or an object with ``u``
    and optionally ``slack`` and ``status`` attributes.  ``value`` (e.g. a CLF)
    is evaluated at every record.  The trajectory has ``ceil(horizon/dt) + 1``
    records; the input in record ``k`` is the one applied on ``[t_k, t_k+dt)``.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    steps = int(math.ceil(horizon / dt - 1e-9))
    x = np.asarray(x0, dtype=float).copy()
    X = np.empty((steps + 1, plant.n))
    U = np.empty((steps + 1, plant.m))
    V = np.empty(steps + 1)
    slack = np.zeros(steps + 1)
    times = np.empty(steps + 1)
    status = []
    for k in range(steps + 1):
        t0 = time.perf_counter()
        out = controller(x)
        times[k] = time.perf_counter() - t0
        u = np.atleast_1d(np.asarray(getattr(out, "u", out), dtype=float))
        X[k], U[k] = x, u
        V[k] = value(x) if value is not None else float("nan")
        slack[k] = float(getattr(out, "slack", 0.0))
        status.append(str(getattr(out, "status", "optimal")))
        if k < steps:
            x = step_rk4(plant, x, u, dt)
    return Trajectory(dt * np.arange(steps + 1), X, U, V, status, slack, times)


# -- measurements ---------------------------------------------------------------


@dataclass(frozen=True)
class Measurement:
    x: np.ndarray
    u: np.ndarray
    z: float


def bounded_noise(rng: np.random.Generator, std: float, size=None):
    """Zero-mean uniform noise with standard deviation ``std`` (support ``+-sqrt(3) std``)."""
    a = math.sqrt(3.0) * std
    return rng.uniform(-a, a, size=size)


def make_measurement(clf, nominal: ControlAffineSystem, x_t, x_next, u_t, dt: float,
                     noise_std: float = 0.0, rng: Optional[np.random.Generator] = None) -> Measurement:
    """Label the interval ``[t, t+dt]`` with the observed minus predicted CLF rate.

    The state is the interval midpoint, the input the held value, and the label
    the finite-difference rate of ``V`` minus the nominal model's ``Vdot`` at
    the midpoint.  This is accurate to second order in ``dt``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x_t = np.asarray(x_t, dtype=float)
    x_next = np.asarray(x_next, dtype=float)
    u = np.atleast_1d(np.asarray(u_t, dtype=float))
    xm = 0.5 * (x_t + x_next)
    fx, gx = nominal.fields(xm)
    z = (clf.value(x_next) - clf.value(x_t)) / dt - float(clf.gradient(xm) @ (fx + gx @ u))
    if noise_std > 0:
        if rng is None:
            raise ValueError("noise requires an rng")
        z += float(bounded_noise(rng, noise_std))
    return Measurement(xm, u, float(z))


def delta_true(clf, plant: ControlAffineSystem, nominal: ControlAffineSystem, x, u) -> float:
    """Exact mismatch ``Vdot_plant(x, u) - Vdot_nominal(x, u)`` (simulation only)."""
    grad = clf.gradient(x)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return float(grad @ (plant.xdot(x, u) - nominal.xdot(x, u)))


def measurements_from_trajectory(clf, nominal, traj: Trajectory, dt: float, noise_std: float = 0.0,
                                 rng: Optional[np.random.Generator] = None) -> List[Measurement]:
    return [make_measurement(clf, nominal, traj.X[k], traj.X[k + 1], traj.U[k], dt, noise_std, rng)
            for k in range(len(traj) - 1)]

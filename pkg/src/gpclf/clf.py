"""Quadratic control Lyapunov functions, sublevel sets and LQR-based synthesis."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg

from .dynamics import ControlAffineSystem, InputBox


@dataclass(frozen=True, eq=False)
class QuadraticCLF:
    """``V(x) = x^T P x`` with ``P`` symmetric positive definite."""

    P: np.ndarray

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        if P.shape[0] != P.shape[1]:
            raise ValueError("P must be square")
        if not np.allclose(P, P.T, rtol=1e-10, atol=1e-12):
            raise ValueError("P must be symmetric")
        P = 0.5 * (P + P.T)
        if np.linalg.eigvalsh(P)[0] <= 0:
            raise ValueError("P must be positive definite")
        object.__setattr__(self, "P", P)

    @property
    def n(self) -> int:
        return self.P.shape[0]

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.P @ x)

    def values(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.einsum("ij,jk,ik->i", X, self.P, X)

    def gradient(self, x) -> np.ndarray:
        return 2.0 * self.P @ np.asarray(x, dtype=float)

    def __call__(self, x) -> float:
        return self.value(x)


def lie_derivatives(clf: QuadraticCLF, system: ControlAffineSystem, x) -> Tuple[float, np.ndarray]:
    """``(L_f V, L_g V)`` at ``x``; ``L_g V`` has shape (m,)."""
    fx, gx = system.fields(x)
    grad = clf.gradient(x)
    return float(grad @ fx), grad @ gx


@dataclass(frozen=True)
class SublevelSet:
    clf: QuadraticCLF
    c: float

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("level must be positive")

    def contains(self, x) -> bool:
        return self.clf.value(x) <= self.c

    def half_widths(self) -> np.ndarray:
        """Half-widths of the tightest axis-aligned box around the ellipsoid."""
        return np.sqrt(self.c * np.diag(np.linalg.inv(self.clf.P)))

    def _unit_map(self) -> np.ndarray:
        # x = T s maps the unit ball onto {x^T P x <= c}
        L = np.linalg.cholesky(self.clf.P)
        return math.sqrt(self.c) * np.linalg.inv(L).T

    def sample(self, rng: np.random.Generator, k: int) -> np.ndarray:
        """``k`` points uniform in the ellipsoid."""
        n = self.clf.n
        s = rng.standard_normal((k, n))
        s /= np.linalg.norm(s, axis=1, keepdims=True)
        s *= rng.uniform(size=(k, 1)) ** (1.0 / n)
        return s @ self._unit_map().T

    def sample_boundary(self, rng: np.random.Generator, k: int) -> np.ndarray:
        s = rng.standard_normal((k, self.clf.n))
        s /= np.linalg.norm(s, axis=1, keepdims=True)
        return s @ self._unit_map().T


def _stabilizable(A: np.ndarray, B: np.ndarray, tol: float = 1e-9) -> bool:
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if lam.real >= -tol:
            if np.linalg.matrix_rank(np.hstack([A - lam * np.eye(n), B]), tol=1e-8) < n:
                return False
    return True


def clf_from_lqr(nominal: Optional[ControlAffineSystem], Q, R, A=None, B=None) -> QuadraticCLF:
    """Quadratic CLF from the Riccati solution of the nominal linearization.

    ``A`` and ``B`` override the linearization when given.
    """
    if A is None or B is None:
        A, B = nominal.linearize()
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if not _stabilizable(A, B):
        raise ValueError("linearization (A, B) is not stabilizable")
    P = scipy.linalg.solve_continuous_are(A, B, Q, R)
    P = 0.5 * (P + P.T)
    res = A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q
    if np.max(np.abs(res)) > 1e-8 * max(1.0, np.max(np.abs(P))):
        raise ValueError("Riccati residual too large (%.2e)" % np.max(np.abs(res)))
    return QuadraticCLF(P)


@dataclass
class ConditionCheck:
    ok: bool
    worst_violation: float
    values: np.ndarray


def exponential_margin(clf: QuadraticCLF, system: ControlAffineSystem, x, lam: float, U: InputBox) -> float:
    """``min_{u in U} L_f V + L_g V u + lam V`` (vertex rule, exact for a box)."""
    LfV, LgV = lie_derivatives(clf, system, x)
    inf_u, _ = U.linear_infimum(LgV)
    return LfV + inf_u + lam * clf.value(x)


def verify_exponential_condition(clf: QuadraticCLF, system: ControlAffineSystem, samples,
                                 lam: float, U: InputBox) -> ConditionCheck:
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    vals = np.array([exponential_margin(clf, system, x, lam, U) for x in samples])
    worst = float(vals.max()) if vals.size else -np.inf
    return ConditionCheck(worst <= 0.0, worst, vals)

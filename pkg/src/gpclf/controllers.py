"""Min-norm CLF controllers: CLF-QP, a state-only GP baseline, and the GP-CLF-SOCP.

All three minimize ``u^T u + p d^2`` over ``w = [u, d]`` subject to a relaxed
exponential-decay constraint on ``V`` and the input box.  On solver failure
they return the configured fallback input with the solver status attached.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import conic_solver as cs
from .clf import QuadraticCLF, lie_derivatives
from .dynamics import ControlAffineSystem, InputBox
from .gp import GPModel, posterior_adp, socp_factors


class ControlOutput(NamedTuple):
    u: np.ndarray
    slack: float
    status: str


@dataclass(frozen=True)
class ControllerConfig:
    lam: float
    U: InputBox
    slack_penalty: float = 1e3
    beta: float = 2.0
    fallback: Optional[tuple] = None
    tol: float = 1e-8
    max_iters: int = 50
    dump_dir: Optional[str] = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not self.slack_penalty > 0:
            raise ValueError("slack penalty must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if not self.U.contains(np.zeros(self.U.m)):
            raise ValueError("input box must contain 0")
        fb = np.zeros(self.U.m) if self.fallback is None else np.atleast_1d(self.fallback)
        object.__setattr__(self, "fallback", tuple(float(v) for v in fb))

    @property
    def m(self) -> int:
        return self.U.m

    def objective_hessian(self) -> np.ndarray:
        # 0.5 w^T H w = u^T u + p d^2
        return 2.0 * np.diag(np.append(np.ones(self.m), self.slack_penalty))

    def box_rows(self):
        G, r = self.U.as_inequalities()
        return np.hstack([G, np.zeros((G.shape[0], 1))]), r


def _finish(cfg: ControllerConfig, res: cs.SolveResult) -> ControlOutput:
    if res.status != cs.OPTIMAL:
        return ControlOutput(np.array(cfg.fallback), float("nan"), res.status)
    u = cfg.U.clip(res.w[:cfg.m])
    return ControlOutput(u, float(res.w[cfg.m]), res.status)


def _solve_relaxed(cfg: ControllerConfig, a, c, cones=()) -> ControlOutput:
    """Solve with the linear CLF row ``a^T u - d <= c`` plus optional cones on ``[u, d]``."""
    Gb, rb = cfg.box_rows()
    G = np.vstack([Gb, np.append(a, -1.0)])
    r = np.append(rb, c)
    res = cs.solve_qp(cfg.objective_hessian(), None, G, r, cones, cfg.tol, cfg.max_iters, cfg.dump_dir)
    return _finish(cfg, res)


def clf_qp(system: ControlAffineSystem, clf: QuadraticCLF, cfg: ControllerConfig, x) -> ControlOutput:
    """``min u^T u + p d^2`` s.t. ``L_f V + L_g V u + lam V <= d``, ``u`` in the box."""
    LfV, LgV = lie_derivatives(clf, system, x)
    return _solve_relaxed(cfg, LgV, -(LfV + cfg.lam * clf.value(x)))


def socp_cone(nominal: ControlAffineSystem, clf: QuadraticCLF, model: GPModel, beta: float,
              lam: float, x) -> cs.SOC:
    """The GP-CLF constraint as a cone on ``w = [u, d]``:

    ``||beta (M u + n)|| <= d - (L_g V + b_u)^T u - (L_f V + b_0 + lam V)``.
    """
    LfV, LgV = lie_derivatives(clf, nominal, x)
    post = posterior_adp(model, x)
    M, n_vec = socp_factors(post)
    A = np.hstack([beta * M, np.zeros((M.shape[0], 1))])
    g = np.append(-(LgV + post.b[1:]), 1.0)
    h = -(LfV + post.b[0] + lam * clf.value(x))
    return cs.SOC(A, beta * n_vec, g, h)


def gp_clf_socp(nominal: ControlAffineSystem, clf: QuadraticCLF, model: GPModel,
                cfg: ControllerConfig, x) -> ControlOutput:
    cone = socp_cone(nominal, clf, model, cfg.beta, cfg.lam, x)
    H = cfg.objective_hessian()
    Gb, rb = cfg.box_rows()
    res = cs.solve_qp(H, None, Gb, rb, (cone,), cfg.tol, cfg.max_iters, cfg.dump_dir)
    return _finish(cfg, res)


def socp_constraint_value(nominal, clf, model: GPModel, beta: float, lam: float, x, u) -> float:
    """``Vdot_nominal + mu + beta sigma + lam V`` recomputed from the posterior."""
    LfV, LgV = lie_derivatives(clf, nominal, x)
    post = posterior_adp(model, x)
    y = np.append(1.0, np.atleast_1d(u))
    return LfV + float(LgV @ np.atleast_1d(u)) + post.mean(y) + beta * post.std(y) + lam * clf.value(x)


def gp_clf_qp_baseline(nominal: ControlAffineSystem, clf: QuadraticCLF, model: GPModel,
                       cfg: ControllerConfig, x) -> ControlOutput:
    """CLF-QP with ``L_f V`` corrected by a state-only GP: ``+ mu_1(x) + beta sigma_1(x)``."""
    if model.p != 1:
        raise ValueError("baseline expects a state-only model (p = 1)")
    LfV, LgV = lie_derivatives(clf, nominal, x)
    post = posterior_adp(model, x)
    corr = post.mean([1.0]) + cfg.beta * post.std([1.0])
    return _solve_relaxed(cfg, LgV, -(LfV + corr + cfg.lam * clf.value(x)))


class _Bound:
    def __init__(self, fn, *args):
        self._fn, self._args = fn, args

    def __call__(self, x) -> ControlOutput:
        return self._fn(*self._args, x)


class CLFQP(_Bound):
    def __init__(self, system, clf, cfg):
        super().__init__(clf_qp, system, clf, cfg)


class GPCLFSOCP(_Bound):
    def __init__(self, nominal, clf, model, cfg):
        super().__init__(gp_clf_socp, nominal, clf, model, cfg)


class GPCLFQPBaseline(_Bound):
    def __init__(self, nominal, clf, model, cfg):
        super().__init__(gp_clf_qp_baseline, nominal, clf, model, cfg)

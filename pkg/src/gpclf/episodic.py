"""Episodic data collection and certified sublevel-set (region of attraction) growth.

Each episode picks the most uncertain ``(x, u)`` pairs in the annulus just
outside the current certified level, runs short rollouts from them, checks
the data-driven decrease certificate on the visited states, raises the level
as far as the certificate allows, keeps the data inside the new level and
retrains the GP.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from . import conic_solver as cs
from .clf import QuadraticCLF, SublevelSet, lie_derivatives, verify_exponential_condition
from .controllers import ControllerConfig, CLFQP, GPCLFSOCP
from .dynamics import ControlAffineSystem, InputBox, Measurement, make_measurement, step_rk4
from .gp import (GPModel, TrainingSet, fit, posterior_adp, posterior_adp_batch, socp_factors,
                 train_hyperparams)
from .kernels import ADPKernel, SEKernel, augment

log = logging.getLogger(__name__)

FEASIBLE = cs.FEASIBLE
INFEASIBLE = cs.INFEASIBLE


@dataclass(frozen=True)
class EpisodeConfig:
    c0: float
    delta_c: Union[float, Tuple[float, ...]]
    N_e: int = 8
    rollout_steps: int = 8
    candidate_pool_size: Optional[int] = None  # default 10 * N_e
    total_episodes: int = 7
    seed: int = 0
    dt: float = 0.01
    noise_std: float = 0.01
    initial_rollouts: int = 12
    initial_rollout_steps: int = 10
    cert_samples: int = 40
    eps_strict: float = 1e-6
    level_grid: int = 64
    train_restarts: int = 8
    retrain_restarts: int = 2
    max_train_points: Optional[int] = 400
    probe_points: int = 100
    train_seed_offset: int = 1000

    def __post_init__(self):
        if not self.c0 > 0:
            raise ValueError("c0 must be positive")
        dc = self.delta_c if isinstance(self.delta_c, (int, float)) else tuple(self.delta_c)
        if isinstance(dc, tuple):
            dc = tuple(float(v) for v in dc)
            if len(dc) < self.total_episodes:
                raise ValueError("need one delta_c per episode")
            bad = any(not v > 0 for v in dc)
        else:
            dc = float(dc)
            bad = not dc > 0
        if bad:
            raise ValueError("delta_c must be positive")
        object.__setattr__(self, "delta_c", dc)
        if self.N_e < 1:
            raise ValueError("N_e must be at least 1")
        if self.rollout_steps < 1 or self.total_episodes < 0:
            raise ValueError("rollout_steps must be >= 1 and total_episodes >= 0")

    def increment(self, i: int) -> float:
        return self.delta_c if isinstance(self.delta_c, float) else self.delta_c[i]

    @property
    def pool(self) -> int:
        return self.candidate_pool_size or 10 * self.N_e

    @property
    def max_level(self) -> float:
        return self.c0 + sum(self.increment(i) for i in range(self.total_episodes))


@dataclass
class RoAEstimate:
    levels: List[float]
    certified: List[bool]
    delta: float

    @property
    def final(self) -> float:
        return self.levels[-1]


@dataclass
class EpisodeRecord:
    episode: int
    level: float
    n_data: int
    n_new: int
    probe_mean: float
    probe_max: float
    wall_time: float
    stalled: bool
    cert_feasible: int
    cert_infeasible: int
    fallback_steps: int
    persistency_rank: int

    def line(self) -> str:
        return ("episode=%d level=%.6g n_data=%d n_new=%d probe_mean=%.6g probe_max=%.6g "
                "wall_time=%.3f stalled=%s cert_feasible=%d cert_infeasible=%d fallback_steps=%d "
                "persistency_rank=%d" % (self.episode, self.level, self.n_data, self.n_new,
                                         self.probe_mean, self.probe_max, self.wall_time, self.stalled,
                                         self.cert_feasible, self.cert_infeasible,
                                         self.fallback_steps, self.persistency_rank))


@dataclass
class Problem:
    """Everything an episode needs besides the evolving model."""

    plant: ControlAffineSystem
    nominal: ControlAffineSystem
    clf: QuadraticCLF
    ctrl: ControllerConfig
    cfg: EpisodeConfig

    @property
    def U(self) -> InputBox:
        return self.ctrl.U


@dataclass
class AlgorithmState:
    data: TrainingSet
    model: GPModel
    levels: List[float]
    records: List[EpisodeRecord] = field(default_factory=list)
    probe: Optional[np.ndarray] = None


# -- helpers ------------------------------------------------------------------


def persistency_rank(data: TrainingSet, tol: float = 1e-8) -> int:
    """Numerical rank of the augmented-input Gram ``Y^T Y``."""
    if data.N == 0:
        return 0
    s = np.linalg.svd(data.Y, compute_uv=False)
    return int(np.sum(s > tol * s[0]))


def _to_training(ms: Sequence[Measurement], n: int, m: int, noise_std: float) -> TrainingSet:
    if not ms:
        return TrainingSet.empty(n, m + 1, noise_std)
    X = np.array([mm.x for mm in ms])
    U = np.array([mm.u for mm in ms]).reshape(len(ms), m)
    z = np.array([mm.z for mm in ms])
    return TrainingSet(X, augment(U), z, noise_std)


def max_std_over_box(model: GPModel, X, U: InputBox) -> np.ndarray:
    """``max_{u in U} sigma(x, u)`` per row; sigma is convex in u so a vertex attains it."""
    b, C = posterior_adp_batch(model, X)
    Yv = augment(U.vertices())
    var = np.einsum("vp,qpr,vr->qv", Yv, C, Yv)
    return np.sqrt(np.maximum(var, 0.0)).max(axis=1)


def initial_kernel(data: TrainingSet, clf: QuadraticCLF, level: float, m: int) -> ADPKernel:
    half = SublevelSet(clf, level).half_widths()
    sf2 = max(float(np.mean(data.z ** 2)) if data.N else 1.0, 1e-6)
    return ADPKernel(tuple(SEKernel(sf2, tuple(half)) for _ in range(m + 1)))


def _train(kernel: ADPKernel, data: TrainingSet, cfg: EpisodeConfig, restarts: int, seed: int):
    res = train_hyperparams(kernel, data, restarts=restarts, seed=seed,
                            max_points=cfg.max_train_points, maxiter=150)
    return res.kernel, data.with_noise(res.noise_std)


# -- initial collection ---------------------------------------------------------


def collect_initial(plant: ControlAffineSystem, nominal: ControlAffineSystem, clf: QuadraticCLF,
                    ctrl: ControllerConfig, cfg: EpisodeConfig,
                    rng: Optional[np.random.Generator] = None) -> TrainingSet:
    """Rollouts of the nominal CLF-QP from random states in the initial level set.

    Only measurements whose midpoint lies in the initial set are kept.  If the
    retained inputs do not excite every direction of ``[1, u]`` (or miss one
    sign of an input), one-step samples with uniformly random inputs are
    appended until they do.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    omega = SublevelSet(clf, cfg.c0)
    controller = CLFQP(nominal, clf, ctrl)
    ms: List[Measurement] = []
    for x0 in omega.sample(rng, cfg.initial_rollouts):
        x = x0
        for _ in range(cfg.initial_rollout_steps):
            u = controller(x).u
            x_next = step_rk4(plant, x, u, cfg.dt)
            mm = make_measurement(clf, nominal, x, x_next, u, cfg.dt, cfg.noise_std, rng)
            if clf.value(mm.x) <= cfg.c0:
                ms.append(mm)
            x = x_next
    m = plant.m

    def guarded(ms):
        if not ms:
            return False
        Us = np.array([mm.u for mm in ms]).reshape(len(ms), m)
        both_signs = bool(np.all((Us > 0).any(axis=0) & (Us < 0).any(axis=0)))
        return both_signs and persistency_rank(_to_training(ms, plant.n, m, 0.0)) == m + 1

    extra = 0
    while not guarded(ms) and extra < 50 * (m + 1):
        x = omega.sample(rng, 1)[0]
        u = ctrl.U.sample(rng)
        x_next = step_rk4(plant, x, u, cfg.dt)
        mm = make_measurement(clf, nominal, x, x_next, u, cfg.dt, cfg.noise_std, rng)
        if clf.value(mm.x) <= cfg.c0:
            ms.append(mm)
        extra += 1
    return _to_training(ms, plant.n, m, cfg.noise_std)


# -- exploration and certificate ---------------------------------------------------


def sample_annulus(clf: QuadraticCLF, c_prev: float, delta_c: float, k: int,
                   rng: np.random.Generator, max_tries: Optional[int] = None) -> np.ndarray:
    """Uniform samples of ``c_prev < V <= c_prev + delta_c`` by rejection from the bounding box."""
    half = SublevelSet(clf, c_prev + delta_c).half_widths()
    out = []
    tries = 0
    limit = max_tries if max_tries is not None else 1000 * max(k, 1)
    batch = max(4 * k, 64)
    while len(out) < k:
        if tries >= limit:
            raise RuntimeError("annulus sampling accepted %d of %d points after %d draws; "
                               "increase the candidate pool or delta_c" % (len(out), k, tries))
        X = rng.uniform(-half, half, size=(batch, half.size))
        V = clf.values(X)
        out.extend(X[(V > c_prev) & (V <= c_prev + delta_c)])
        tries += batch
    return np.array(out[:k])


def select_exploration_points(model: GPModel, clf: QuadraticCLF, c_prev: float, delta_c: float,
                              U: InputBox, N_e: int, pool: int,
                              rng: np.random.Generator) -> List[Tuple[np.ndarray, np.ndarray, float]]:
    """The ``N_e`` pool candidates ``(x, u)`` with the largest posterior std.

    Returned as ``(x, u, sigma)`` sorted by decreasing sigma (ties by pool order).
    """
    X = sample_annulus(clf, c_prev, delta_c, pool, rng)
    Us = U.sample(rng, pool)
    b, C = posterior_adp_batch(model, X)
    Y = augment(Us)
    sig = np.sqrt(np.maximum(np.einsum("qp,qpr,qr->q", Y, C, Y), 0.0))
    order = np.argsort(-sig, kind="stable")[:N_e]
    return [(X[i], Us[i], float(sig[i])) for i in order]


def certificate_program(model: GPModel, nominal: ControlAffineSystem, clf: QuadraticCLF,
                        beta: float, U: InputBox, x, eps_strict: float = 1e-6) -> cs.ConicProgram:
    """Feasibility SOCP in ``u``: ``Vdot_nominal + mu + beta sigma <= -eps_strict``, ``u`` in U."""
    LfV, LgV = lie_derivatives(clf, nominal, x)
    post = posterior_adp(model, x)
    M, n_vec = socp_factors(post)
    G, r = U.as_inequalities()
    cone = cs.SOC(beta * M, beta * n_vec, -(LgV + post.b[1:]), -(LfV + post.b[0]) - eps_strict)
    return cs.ConicProgram(np.zeros(U.m), (cone,), G, r)


def check_certificate(model: GPModel, nominal: ControlAffineSystem, clf: QuadraticCLF,
                      beta: float, U: InputBox, x, eps_strict: float = 1e-6) -> str:
    """``feasible`` when some admissible input makes the upper bound on Vdot negative.

    A solver ``unknown`` counts as infeasible.  The origin is never certified:
    the decrease condition is only meaningful away from the equilibrium.
    """
    if not np.any(np.asarray(x, dtype=float)):
        return INFEASIBLE
    verdict, _ = cs.check_feasibility(certificate_program(model, nominal, clf, beta, U, x, eps_strict))
    return FEASIBLE if verdict == cs.FEASIBLE else INFEASIBLE


def certificate_lhs(model, nominal, clf, beta: float, x, u) -> float:
    """``Vdot_nominal + mu + beta sigma`` at ``(x, u)`` (no decay term)."""
    LfV, LgV = lie_derivatives(clf, nominal, x)
    post = posterior_adp(model, x)
    y = np.append(1.0, np.atleast_1d(u))
    return LfV + float(LgV @ np.atleast_1d(u)) + post.mean(y) + beta * post.std(y)


def next_level(c_prev: float, delta_c: float, infeasible_values: Sequence[float], grid: int = 64) -> float:
    """Largest level on a ``grid``-point lattice over ``(c_prev, c_prev + delta_c]``
    strictly below every infeasible sampled value; ``c_prev`` if none fits."""
    top = c_prev + delta_c
    bad = [v for v in infeasible_values if c_prev < v <= top]
    if not bad:
        return top
    limit = min(bad)
    k = int(math.floor((limit - c_prev) / delta_c * grid - 1e-12))
    if c_prev + k * delta_c / grid >= limit:
        k -= 1
    return c_prev + max(k, 0) * delta_c / grid


def _excite(prob: Problem, ms: List[Measurement], c_lo: float, c_hi: float,
            rng: np.random.Generator, max_extra: int = 50) -> List[Measurement]:
    """One-step samples with uniformly random inputs, added until ``ms`` has full
    persistency rank.  States come from the new annulus, or from the whole set
    when the level did not grow."""
    cfg, clf, m = prob.cfg, prob.clf, prob.plant.m
    extra: List[Measurement] = []
    for _ in range(max_extra):
        if persistency_rank(_to_training(ms + extra, prob.plant.n, m, 0.0)) == m + 1:
            break
        if c_hi > c_lo:
            x = sample_annulus(clf, c_lo, c_hi - c_lo, 1, rng)[0]
        else:
            x = SublevelSet(clf, c_hi).sample(rng, 1)[0]
        u = prob.U.sample(rng)
        mm = make_measurement(clf, prob.nominal, x, step_rk4(prob.plant, x, u, cfg.dt), u,
                              cfg.dt, cfg.noise_std, rng)
        if clf.value(mm.x) <= c_hi:
            extra.append(mm)
    return extra


# -- episodes -------------------------------------------------------------------


def probe_states(clf: QuadraticCLF, level: float, k: int, seed: int) -> np.ndarray:
    return SublevelSet(clf, level).sample(np.random.default_rng(seed), k)


def run_episode(state: AlgorithmState, prob: Problem, i: int, rng: np.random.Generator) -> AlgorithmState:
    cfg, clf, U = prob.cfg, prob.clf, prob.U
    t0 = time.perf_counter()
    c_prev = state.levels[-1]
    dc = cfg.increment(i)
    controller = GPCLFSOCP(prob.nominal, clf, state.model, prob.ctrl)
    seeds = select_exploration_points(state.model, clf, c_prev, dc, U, cfg.N_e, cfg.pool, rng)

    ms: List[Measurement] = []
    visited = []
    fallbacks = 0
    for x0, u0, _ in seeds:
        x, u = x0, u0
        visited.append(x0)
        for k in range(cfg.rollout_steps):
            if k > 0:
                out = controller(x)
                u = out.u
                fallbacks += out.status != cs.OPTIMAL
            try:
                x_next = step_rk4(prob.plant, x, u, cfg.dt)
            except FloatingPointError:
                break
            ms.append(make_measurement(clf, prob.nominal, x, x_next, u, cfg.dt, cfg.noise_std, rng))
            x = x_next
            visited.append(x)

    cand = np.array(visited)
    V = clf.values(cand)
    cand = cand[(V > c_prev) & (V <= c_prev + dc)]
    if cfg.cert_samples:
        cand = np.vstack([cand, sample_annulus(clf, c_prev, dc, cfg.cert_samples, rng)])
    verdicts = [check_certificate(state.model, prob.nominal, clf, prob.ctrl.beta, U, x, cfg.eps_strict)
                for x in cand]
    bad_vals = [clf.value(x) for x, v in zip(cand, verdicts) if v != FEASIBLE]
    n_ok = sum(v == FEASIBLE for v in verdicts)
    c_new = max(next_level(c_prev, dc, bad_vals, cfg.level_grid), c_prev)
    stalled = c_new <= c_prev

    kept = [mm for mm in ms if clf.value(mm.x) <= c_new]
    kept += _excite(prob, kept, c_prev, c_new, rng)
    new = _to_training(kept, prob.plant.n, prob.plant.m, state.data.noise_std)
    data = state.data.extend(new) if new.N else state.data
    kernel, data = _train(state.model.kernel, data, cfg, cfg.retrain_restarts,
                          cfg.seed + cfg.train_seed_offset + i + 1)
    model = fit(kernel, data)
    sig = max_std_over_box(model, state.probe, U)
    rec = EpisodeRecord(i + 1, c_new, data.N, new.N, float(sig.mean()), float(sig.max()),
                        time.perf_counter() - t0, stalled, n_ok, len(verdicts) - n_ok, fallbacks,
                        persistency_rank(new))
    log.info(rec.line())
    return AlgorithmState(data, model, state.levels + [c_new], state.records + [rec], state.probe)


@dataclass
class AlgorithmResult:
    model: GPModel
    roa: RoAEstimate
    records: List[EpisodeRecord]
    initial_probe: Tuple[float, float]


def initial_state(prob: Problem, rng: np.random.Generator) -> Tuple[AlgorithmState, Tuple[float, float]]:
    cfg = prob.cfg
    check = verify_exponential_condition(prob.clf, prob.nominal,
                                         SublevelSet(prob.clf, cfg.c0).sample(rng, 200),
                                         prob.ctrl.lam, prob.U)
    if not check.ok:
        log.warning("initial level %.4g fails the nominal decrease check (worst %.3g)",
                    cfg.c0, check.worst_violation)
    data = collect_initial(prob.plant, prob.nominal, prob.clf, prob.ctrl, cfg, rng)
    kernel = initial_kernel(data, prob.clf, cfg.c0, prob.plant.m)
    kernel, data = _train(kernel, data, cfg, cfg.train_restarts, cfg.seed + cfg.train_seed_offset)
    model = fit(kernel, data)
    probe = probe_states(prob.clf, cfg.max_level, cfg.probe_points, cfg.seed + 7)
    sig = max_std_over_box(model, probe, prob.U)
    return AlgorithmState(data, model, [cfg.c0], probe=probe), (float(sig.mean()), float(sig.max()))


def run_algorithm(plant: ControlAffineSystem, nominal: ControlAffineSystem, clf: QuadraticCLF,
                  ctrl: ControllerConfig, cfg: EpisodeConfig, delta: float = 0.05,
                  on_episode=None) -> AlgorithmResult:
    """Initial collection followed by ``cfg.total_episodes`` episodes (deterministic in ``cfg.seed``).

    ``on_episode(state)`` is called after each episode, e.g. to checkpoint.
    """
    prob = Problem(plant, nominal, clf, ctrl, cfg)
    rng = np.random.default_rng(cfg.seed)
    state, probe0 = initial_state(prob, rng)
    for i in range(cfg.total_episodes):
        state = run_episode(state, prob, i, rng)
        if on_episode is not None:
            on_episode(state)
    certified = [True] + [not r.stalled for r in state.records]
    return AlgorithmResult(state.model, RoAEstimate(state.levels, certified, delta), state.records, probe0)


def validate_region(plant: ControlAffineSystem, controller, clf: QuadraticCLF, level: float,
                    target: float, n: int, horizon: float, dt: float,
                    rng: np.random.Generator) -> Tuple[float, np.ndarray]:
    """Fraction of rollouts from the boundary of ``V <= level`` that reach ``V < target``."""
    starts = SublevelSet(clf, level).sample_boundary(rng, n)
    steps = int(math.ceil(horizon / dt))
    reached = np.zeros(n, dtype=bool)
    for j, x in enumerate(starts):
        for _ in range(steps):
            try:
                x = step_rk4(plant, x, controller(x).u, dt)
            except FloatingPointError:
                break
            if clf.value(x) < target:
                reached[j] = True
                break
    return float(reached.mean()), starts

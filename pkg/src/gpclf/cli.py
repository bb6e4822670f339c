"""Config-driven experiment runner.

Usage::

    gpclf run CONFIG [--seed N] [--load-checkpoint PATH] [--dump-failed-solves]
    gpclf validate CONFIG

The config is an INI file; values are Python literals (numbers, lists,
``None``) or bare words.  See ``configs/`` for complete examples and
:data:`SCHEMA` for every accepted key.
"""

from __future__ import annotations

import argparse
import ast
import configparser
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from . import conic_solver as cs
from .clf import QuadraticCLF, clf_from_lqr
from .controllers import CLFQP, GPCLFQPBaseline, GPCLFSOCP, ControllerConfig
from .dynamics import (BicycleParams, InputBox, PendulumParams, Trajectory, bicycle_state_to_error,
                       make_bicycle_error, make_pendulum, rollout)
from .episodic import AlgorithmResult, EpisodeConfig, run_algorithm
from .gp import (CheckpointMismatch, GPModel, TrainingSet, UCBConfig, beta as ucb_beta, fit,
                 load_checkpoint, save_checkpoint, train_hyperparams)
from .kernels import ADPKernel

log = logging.getLogger("gpclf")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4
FALLBACK_BUDGET = 0.05
SLACK_ACTIVE = 1e-3  # slack above this counts as an activation
CONTROLLERS = ("clf_qp_nominal", "clf_qp_plant", "gp_clf_qp_baseline", "gp_clf_socp")


class ConfigError(ValueError):
    def __init__(self, problems: List[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


# -- schema -----------------------------------------------------------------------

def _pos(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0


def _nonneg(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0


def _int_ge(k):
    return lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= k


def _vector(v):
    return isinstance(v, (list, tuple)) and len(v) > 0 and all(isinstance(a, (int, float)) for a in v)


def _matrix_like(v):
    # scalar, diagonal vector, or nested list
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return True
    if _vector(v):
        return True
    return isinstance(v, (list, tuple)) and all(_vector(r) for r in v)


def _pos_or_list(v):
    return _pos(v) or (_vector(v) and all(a > 0 for a in v))


def _opt_pos(v):
    return v is None or _pos(v)


def _opt_int(v):
    return v is None or (isinstance(v, int) and v > 0)


REQUIRED = object()

# section -> key -> (check, default, description)
SCHEMA: Dict[str, Dict[str, Tuple[Any, Any, str]]] = {
    "experiment": {
        "benchmark": (lambda v: v in ("pendulum", "bicycle"), REQUIRED, "pendulum or bicycle"),
        "seed": (_int_ge(0), 0, "non-negative integer"),
        "output_dir": (lambda v: isinstance(v, str) and v != "", "out", "path"),
        "controllers": (lambda v: isinstance(v, (list, tuple)) and len(v) > 0 and set(v) <= set(CONTROLLERS),
                        list(CONTROLLERS), "subset of %s" % (CONTROLLERS,)),
        "threshold_fraction": (lambda v: _pos(v) and v < 1, 0.05, "number in (0, 1)"),
    },
    "plant": {},
    "nominal": {},
    "clf": {
        "Q": (_matrix_like, None, "scalar, diagonal list or matrix"),
        "R": (_matrix_like, None, "scalar, diagonal list or matrix"),
        "lambda": (_pos, REQUIRED, "positive number"),
    },
    "controller": {
        "slack_penalty": (_pos, 1e3, "positive number"),
        "u_max": (_pos_or_list, None, "positive number or list"),
        "beta": (_opt_pos, 2.0, "positive number or None (use the confidence formula)"),
        "delta": (lambda v: isinstance(v, float) and 0 < v < 1, 0.05, "number in (0, 1)"),
        "rkhs_bound": (_pos, 1.0, "positive number"),
        "gamma_mode": (lambda v: v in ("constant", "greedy-approx"), "constant", "constant or greedy-approx"),
        "gamma": (_nonneg, 0.0, "non-negative number"),
        "tol": (_pos, 1e-8, "positive number"),
        "max_iters": (_int_ge(1), 50, "positive integer"),
    },
    "episodic": {
        "c0": (_pos, REQUIRED, "positive number"),
        "delta_c": (_pos_or_list, REQUIRED, "positive number or list"),
        "N_e": (_int_ge(1), 8, "positive integer"),
        "rollout_steps": (_int_ge(1), 8, "positive integer"),
        "candidate_pool_size": (_opt_int, None, "positive integer or None"),
        "total_episodes": (_int_ge(0), 7, "non-negative integer"),
        "noise_std": (_nonneg, 0.01, "non-negative number"),
        "initial_rollouts": (_int_ge(1), 12, "positive integer"),
        "initial_rollout_steps": (_int_ge(1), 10, "positive integer"),
        "cert_samples": (_int_ge(0), 40, "non-negative integer"),
        "eps_strict": (_pos, 1e-6, "positive number"),
        "train_restarts": (_int_ge(1), 8, "positive integer"),
        "retrain_restarts": (_int_ge(1), 2, "positive integer"),
        "max_train_points": (_opt_int, 400, "positive integer or None"),
        "probe_points": (_int_ge(1), 100, "positive integer"),
    },
    "sim": {
        "dt": (_pos, None, "positive number"),
        "horizon": (_pos, REQUIRED, "positive number"),
        "x0": (_vector, REQUIRED, "list of numbers"),
    },
}

PLANT_KEYS = {
    "pendulum": {"mass": (_pos, 1.0, "positive number"), "length": (_pos, 1.0, "positive number"),
                 "gravity": (_pos, 9.81, "positive number"), "damping": (_nonneg, 0.1, "non-negative number")},
    "bicycle": {"f_mu": (_nonneg, 0.0, "non-negative number"), "b_v": (_pos, 1.0, "positive number"),
                "b_gamma": (_pos, 1.0, "positive number")},
}

BENCH_DEFAULTS = {
    "pendulum": {"dt": 0.01, "u_max": 10.0, "Q": [1.0, 1.0], "R": 1.0, "state_dim": 2},
    "bicycle": {"dt": 0.02, "u_max": [10.0, 10.0], "Q": [1.0, 10.0, 1.0, 1.0], "R": [0.1, 0.1], "state_dim": 5},
}


def _parse_value(raw: str):
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw.strip()


def load_config(path: str) -> Dict[str, Dict[str, Any]]:
    """Parse and validate; raises :class:`ConfigError` listing every problem."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case (Q, R, N_e)
    with open(path) as fh:
        try:
            parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(["syntax: %s" % exc]) from None
    raw = {s: {k: _parse_value(v) for k, v in parser.items(s)} for s in parser.sections()}
    return validate(raw)


def validate(raw: Dict[str, Dict[str, Any]]) -> Dict[str, Dict[str, Any]]:
    problems = []
    for sec in raw:
        if sec not in SCHEMA:
            problems.append("unknown section [%s]" % sec)
    bench = raw.get("experiment", {}).get("benchmark")
    schema = {s: dict(v) for s, v in SCHEMA.items()}
    if bench in PLANT_KEYS:
        schema["plant"] = PLANT_KEYS[bench]
        schema["nominal"] = PLANT_KEYS[bench]
    cfg: Dict[str, Dict[str, Any]] = {}
    for sec, keys in schema.items():
        given = raw.get(sec, {})
        out = {}
        for k, v in given.items():
            if k not in keys:
                if bench in PLANT_KEYS or sec not in ("plant", "nominal"):
                    problems.append("unknown key %s.%s" % (sec, k))
                continue
            check, _, desc = keys[k]
            if not check(v):
                problems.append("%s.%s: expected %s, got %r" % (sec, k, desc, v))
            out[k] = v
        for k, (_, default, _) in keys.items():
            if k not in out:
                if default is REQUIRED:
                    problems.append("%s.%s required" % (sec, k))
                else:
                    out[k] = default
        cfg[sec] = out
    if bench in BENCH_DEFAULTS and not problems:
        d = BENCH_DEFAULTS[bench]
        for sec, k in (("sim", "dt"), ("controller", "u_max"), ("clf", "Q"), ("clf", "R")):
            if cfg[sec][k] is None:
                cfg[sec][k] = d[k]
        if len(cfg["sim"]["x0"]) != d["state_dim"]:
            problems.append("sim.x0: expected %d entries for %s" % (d["state_dim"], bench))
        dc = cfg["episodic"]["delta_c"]
        if isinstance(dc, (list, tuple)) and len(dc) < cfg["episodic"]["total_episodes"]:
            problems.append("episodic.delta_c: need one entry per episode")
    if problems:
        raise ConfigError(problems)
    return cfg


def config_hash(cfg: Dict[str, Dict[str, Any]]) -> str:
    """Hash of everything that shapes the learned model (not outputs or the rollout horizon)."""
    keep = {s: cfg[s] for s in ("plant", "nominal", "clf", "controller", "episodic")}
    keep["benchmark"] = cfg["experiment"]["benchmark"]
    keep["seed"] = cfg["experiment"]["seed"]
    keep["dt"] = cfg["sim"]["dt"]
    blob = json.dumps(keep, sort_keys=True, default=list).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# -- experiment assembly ----------------------------------------------------------------


def _as_matrix(v, n: int) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.ndim == 0:
        return float(a) * np.eye(n)
    if a.ndim == 1:
        return np.diag(a)
    return a


@dataclass
class Setup:
    cfg: Dict[str, Dict[str, Any]]
    plant: Any
    nominal: Any
    clf: QuadraticCLF
    ctrl: ControllerConfig
    episodes: EpisodeConfig
    ucb: UCBConfig
    x0: np.ndarray


def build(cfg: Dict[str, Dict[str, Any]], dump_dir: Optional[str] = None) -> Setup:
    bench = cfg["experiment"]["benchmark"]
    if bench == "pendulum":
        plant = make_pendulum(PendulumParams(**cfg["plant"]))
        nominal = make_pendulum(PendulumParams(**cfg["nominal"]))
        x0 = np.asarray(cfg["sim"]["x0"], dtype=float)
    else:
        plant = make_bicycle_error(BicycleParams(**cfg["plant"]))
        nominal = make_bicycle_error(BicycleParams(**cfg["nominal"]))
        x0 = bicycle_state_to_error(cfg["sim"]["x0"])
    n, m = nominal.n, nominal.m
    c = cfg["clf"]
    clf = clf_from_lqr(nominal, _as_matrix(c["Q"], n), _as_matrix(c["R"], m))
    k = cfg["controller"]
    U = InputBox.symmetric(k["u_max"], m)
    ucb = UCBConfig(k["delta"], k["rkhs_bound"], k["gamma_mode"], k["gamma"], k["beta"])
    # episodes run before a model exists, so without an explicit beta they use
    # the formula with the configured constant gamma at the initial data size
    n_init = cfg["episodic"]["initial_rollouts"] * cfg["episodic"]["initial_rollout_steps"]
    beta_ep = k["beta"] if k["beta"] is not None else ucb_beta(
        UCBConfig(k["delta"], k["rkhs_bound"], "constant", k["gamma"], None), n_init)
    ctrl = ControllerConfig(c["lambda"], U, k["slack_penalty"], beta_ep, None, k["tol"],
                            k["max_iters"], dump_dir)
    e = dict(cfg["episodic"])
    if isinstance(e["delta_c"], list):
        e["delta_c"] = tuple(e["delta_c"])
    episodes = EpisodeConfig(seed=cfg["experiment"]["seed"], dt=cfg["sim"]["dt"], **e)
    return Setup(cfg, plant, nominal, clf, ctrl, episodes, ucb, x0)


def state_only_model(model: GPModel, restarts: int, seed: int, max_points: Optional[int]) -> GPModel:
    """Plain GP on the state alone, trained on the same labels (the baseline's model)."""
    d = model.data
    data = TrainingSet(d.X, np.ones((d.N, 1)), d.z, d.noise_std)
    kernel = ADPKernel((model.kernel.base_kernels[0],))
    res = train_hyperparams(kernel, data, restarts=restarts, seed=seed, max_points=max_points)
    return fit(res.kernel, data.with_noise(res.noise_std))


@dataclass
class ControllerSummary:
    name: str
    final_V: float
    time_to_threshold: float
    latency_mean: float
    latency_median: float
    latency_max: float
    slack_activations: int
    fallback_steps: int
    steps: int
    csv: str


@dataclass
class ComparisonReport:
    benchmark: str
    seed: int
    config_hash: str
    beta: float
    n_data: int
    levels: List[float]
    controllers: Dict[str, ControllerSummary] = field(default_factory=dict)
    trajectories: Dict[str, Trajectory] = field(default_factory=dict, repr=False)
    model: Optional[GPModel] = field(default=None, repr=False)
    baseline_model: Optional[GPModel] = field(default=None, repr=False)
    algorithm: Optional[AlgorithmResult] = field(default=None, repr=False)

    def fallback_fraction(self) -> float:
        total = sum(s.steps for s in self.controllers.values())
        return sum(s.fallback_steps for s in self.controllers.values()) / max(total, 1)

    def lines(self) -> List[str]:
        out = ["benchmark = %s" % self.benchmark, "seed = %d" % self.seed,
               "config_hash = %s" % self.config_hash, "beta = %.17g" % self.beta,
               "n_data = %d" % self.n_data,
               "levels = %s" % " ".join("%.17g" % c for c in self.levels),
               "certified_level = %.17g" % self.levels[-1]]
        for s in self.controllers.values():
            p = s.name + "."
            out += [p + "final_V = %.17g" % s.final_V,
                    p + "time_to_threshold = %.17g" % s.time_to_threshold,
                    p + "latency_mean_ms = %.6f" % (1e3 * s.latency_mean),
                    p + "latency_median_ms = %.6f" % (1e3 * s.latency_median),
                    p + "latency_max_ms = %.6f" % (1e3 * s.latency_max),
                    p + "slack_activations = %d" % s.slack_activations,
                    p + "fallback_steps = %d" % s.fallback_steps,
                    p + "steps = %d" % s.steps,
                    p + "csv = %s" % s.csv]
        out.append("fallback_fraction = %.6f" % self.fallback_fraction())
        return out


def _summary(name: str, tr: Trajectory, frac: float, csv_path: str) -> ControllerSummary:
    V = tr.V
    hit = np.nonzero(V <= frac * V[0])[0]
    return ControllerSummary(name, float(V[-1]), float(tr.t[hit[0]]) if hit.size else math.inf,
                             float(np.mean(tr.solve_time)), float(np.median(tr.solve_time)),
                             float(np.max(tr.solve_time)), int(np.sum(tr.slack > SLACK_ACTIVE)),
                             tr.fallback_count, len(tr), csv_path)


def run_experiment(cfg: Dict[str, Dict[str, Any]], load_checkpoint_path: Optional[str] = None,
                   override_hash: bool = False, dump_failed: bool = False) -> ComparisonReport:
    """Learn (or load) the GP model, then compare the four controllers from ``x0``."""
    out_dir = cfg["experiment"]["output_dir"]
    os.makedirs(out_dir, exist_ok=True)
    setup = build(cfg, os.path.join(out_dir, "failed_solves") if dump_failed else None)
    if dump_failed:
        os.makedirs(setup.ctrl.dump_dir, exist_ok=True)
    h = config_hash(cfg)
    ckpt = os.path.join(out_dir, "model.npz")
    algo = None
    if load_checkpoint_path:
        model, _ = load_checkpoint(load_checkpoint_path, expected_hash=h, override=override_hash)
        levels = [setup.episodes.c0]
    else:
        log_path = os.path.join(out_dir, "episodes.log")
        with open(log_path, "w") as log_fh:
            def on_episode(state):
                log_fh.write(state.records[-1].line() + "\n")
                log_fh.flush()
                save_checkpoint(ckpt, state.model, h)

            algo = run_algorithm(setup.plant, setup.nominal, setup.clf, setup.ctrl, setup.episodes,
                                 setup.ucb.delta, on_episode)
        model, levels = algo.model, algo.roa.levels
        save_checkpoint(ckpt, model, h)

    beta = ucb_beta(setup.ucb, model.N, model)
    ctrl = ControllerConfig(setup.ctrl.lam, setup.ctrl.U, setup.ctrl.slack_penalty, beta, None,
                            setup.ctrl.tol, setup.ctrl.max_iters, setup.ctrl.dump_dir)
    e = setup.episodes
    base = state_only_model(model, e.retrain_restarts + 2, e.seed + 99, e.max_train_points)
    factories = {
        "clf_qp_nominal": lambda: CLFQP(setup.nominal, setup.clf, ctrl),
        "clf_qp_plant": lambda: CLFQP(setup.plant, setup.clf, ctrl),
        "gp_clf_qp_baseline": lambda: GPCLFQPBaseline(setup.nominal, setup.clf, base, ctrl),
        "gp_clf_socp": lambda: GPCLFSOCP(setup.nominal, setup.clf, model, ctrl),
    }
    report = ComparisonReport(cfg["experiment"]["benchmark"], cfg["experiment"]["seed"], h, beta,
                              model.N, list(levels), model=model, baseline_model=base, algorithm=algo)
    for name in cfg["experiment"]["controllers"]:
        tr = rollout(setup.plant, factories[name](), setup.x0, cfg["sim"]["horizon"], cfg["sim"]["dt"],
                     setup.clf.value)
        path = os.path.join(out_dir, "trajectory_%s.csv" % name)
        tr.to_csv(path)
        report.trajectories[name] = tr
        report.controllers[name] = _summary(name, tr, cfg["experiment"]["threshold_fraction"], path)
    with open(os.path.join(out_dir, "report.txt"), "w") as fh:
        fh.write("\n".join(report.lines()) + "\n")
    return report


# -- entry point ------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gpclf", description="GP-CLF-SOCP experiment runner")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="learn a model and compare controllers")
    r.add_argument("config")
    r.add_argument("--seed", type=int, help="override experiment.seed")
    r.add_argument("--load-checkpoint", metavar="PATH", help="skip learning and load this model")
    r.add_argument("--override-checkpoint-hash", action="store_true",
                   help="accept a checkpoint written under a different config")
    r.add_argument("--dump-failed-solves", action="store_true",
                   help="write solver problems that fail to OUTPUT_DIR/failed_solves")
    r.add_argument("--output-dir", help="override experiment.output_dir")
    r.add_argument("-v", "--verbose", action="store_true")
    v = sub.add_parser("validate", help="check a config file and list every problem")
    v.add_argument("config")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        for msg in exc.problems:
            print("config error: %s" % msg, file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print("cannot read config: %s" % exc, file=sys.stderr)
        return EXIT_IO
    if args.command == "validate":
        print("ok")
        return EXIT_OK

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.seed is not None:
        if args.seed < 0:
            print("config error: --seed must be non-negative", file=sys.stderr)
            return EXIT_CONFIG
        cfg["experiment"]["seed"] = args.seed
    if args.output_dir:
        cfg["experiment"]["output_dir"] = args.output_dir
    try:
        report = run_experiment(cfg, args.load_checkpoint, args.override_checkpoint_hash,
                                args.dump_failed_solves)
    except CheckpointMismatch as exc:
        print("checkpoint error: %s (pass --override-checkpoint-hash to accept)" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print("i/o error: %s" % exc, file=sys.stderr)
        return EXIT_IO
    print("\n".join(report.lines()))
    if report.fallback_fraction() > FALLBACK_BUDGET:
        print("solver fallback on %.1f%% of steps exceeds the %.0f%% budget"
              % (100 * report.fallback_fraction(), 100 * FALLBACK_BUDGET), file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

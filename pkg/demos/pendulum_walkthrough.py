"""Learning a stabilizing controller for a pendulum with the wrong mass.

Run with ``python3 demos/pendulum_walkthrough.py`` (about a minute).  The
nominal model believes the pendulum weighs 1 kg; the plant weighs 2 kg.  The
script synthesizes a CLF from the nominal model, runs a few learning episodes
that grow a certified sublevel set, and then compares the nominal CLF-QP with
the learned GP-CLF-SOCP from the same initial state.
"""
import numpy as np

from gpclf.clf import clf_from_lqr
from gpclf.controllers import ControllerConfig, clf_qp, gp_clf_socp
from gpclf.dynamics import InputBox, PendulumParams, make_pendulum, rollout
from gpclf.episodic import EpisodeConfig, run_algorithm

plant = make_pendulum(PendulumParams(mass=2.0))
nominal = make_pendulum(PendulumParams(mass=1.0))
clf = clf_from_lqr(nominal, np.eye(2), np.eye(1))
ctrl = ControllerConfig(lam=0.5, U=InputBox.symmetric(10.0))
print("CLF matrix P =\n", clf.P)

cfg = EpisodeConfig(c0=1.0, delta_c=1.5, N_e=8, rollout_steps=8, total_episodes=4,
                    noise_std=0.01, seed=0)
result = run_algorithm(plant, nominal, clf, ctrl, cfg)
print("certified levels per episode:", ["%.3f" % c for c in result.roa.levels])
print("training points:", result.model.N)

x0 = np.array([0.25, 0.0])
runs = {
    "nominal CLF-QP": lambda x: clf_qp(nominal, clf, ctrl, x),
    "GP-CLF-SOCP": lambda x: gp_clf_socp(nominal, clf, result.model, ctrl, x),
}
for name, controller in runs.items():
    traj = rollout(plant, controller, x0, horizon=10.0, dt=0.01, value=clf.value)
    print("%-15s final V = %.4g, max slack = %.3g, fallbacks = %d"
          % (name, traj.V[-1], traj.slack.max(), traj.fallback_count))

"""A short tour of the conic solver.

Run with ``python3 demos/solver_tour.py``.  It solves a tiny second-order cone
program, a box-constrained QP, and an infeasible program, printing the status
and residuals the solver reports for each.
"""
import numpy as np

from gpclf import conic_solver as cs

# Smallest point of the unit disc shifted to (2, 1), measured along c.
# The cone ||w - (2, 1)|| <= 1 is written as ||A w + b|| <= g^T w + h.
c = np.array([1.0, 1.0])
disc = cs.SOC(A=np.eye(2), b=-np.array([2.0, 1.0]), g=np.zeros(2), h=1.0)
res = cs.solve(cs.ConicProgram(c, socs=(disc,)))
expected = np.array([2.0, 1.0]) - c / np.linalg.norm(c)
print("disc program:", res.status, "w =", res.w, "iterations =", res.iterations)
print("  distance to closed form:", np.linalg.norm(res.w - expected))

# Projection of (3, -2) onto the box [-1, 1]^2 written as a QP.
H = np.eye(2)
q = -np.array([3.0, -2.0])
G = np.vstack([np.eye(2), -np.eye(2)])
r = np.ones(4)
res = cs.solve_qp(H, q, G, r)
print("box projection:", res.status, "w =", res.w)

# Two half-planes that cannot both hold: w1 >= 1 and w1 <= -1.
bad = cs.ConicProgram(np.zeros(1), G=np.array([[-1.0], [1.0]]), r=np.array([-1.0, -1.0]))
status, witness = cs.check_feasibility(bad)
print("contradictory half-planes:", status, witness)

# A feasible set gives back a verified witness point.
status, witness = cs.check_feasibility(cs.ConicProgram(np.zeros(2), socs=(disc,)))
print("shifted disc:", status, "witness violation =", cs.ConicProgram(np.zeros(2), socs=(disc,)).max_violation(witness))

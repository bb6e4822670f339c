import itertools
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpclf import conic_solver as cs
from gpclf.conic_solver import SOC, ConicProgram, check_feasibility, solve, solve_qp


def planted_socp(rng, d, n_cones, n_lin):
    """Random SOCP whose optimum is known by construction from a KKT point.

    Stationarity ``c = sum(z0 g + A^T z1) - G^T mu`` with complementary,
    cone-feasible multipliers makes ``w_star`` optimal for the convex program.
    """
    w = rng.normal(size=d)
    c = np.zeros(d)
    socs, G, r = [], [], []
    for i in range(n_cones):
        k = rng.integers(1, d + 1)
        A, b, g = rng.normal(size=(k, d)), rng.normal(size=k), rng.normal(size=d)
        v = A @ w + b
        active = i == 0 or rng.uniform() < 0.5
        h = np.linalg.norm(v) - g @ w + (0.0 if active else rng.uniform(0.5, 2))
        socs.append(SOC(A, b, g, h))
        if active:
            rho = rng.uniform(0.5, 2)
            c += rho * g - rho * A.T @ (v / np.linalg.norm(v))
    for _ in range(n_lin):
        a = rng.normal(size=d)
        active = rng.uniform() < 0.5
        G.append(a)
        r.append(a @ w + (0.0 if active else rng.uniform(0.5, 2)))
        if active:
            c -= rng.uniform(0.5, 2) * a
    prog = ConicProgram(c, socs, np.array(G) if G else None, np.array(r) if r else None)
    return prog, float(c @ w)


def test_norm_of_fixed_vector():
    prog = ConicProgram([0, 0, 1.0], [SOC([[1, 0, 0], [0, 1, 0]], [0, 0], [0, 0, 1], 0)],
                        A_eq=[[1, 0, 0], [0, 1, 0]], b_eq=[3, 4])
    res = solve(prog)
    assert res.status == cs.OPTIMAL
    assert res.w[2] == pytest.approx(5.0, abs=1e-7)


def test_projection_onto_halfline_epigraph():
    # min t s.t. u^2 <= t written as ||(2u, t - 1)|| <= t + 1, with u <= -2
    prog = ConicProgram([0, 1.0], [SOC([[2, 0], [0, 1]], [0, -1], [0, 1], 1)], [[1, 0]], [-2])
    res = solve(prog)
    assert res.status == cs.OPTIMAL
    assert res.w[0] == pytest.approx(-2, abs=1e-7) and res.objective == pytest.approx(4, abs=1e-6)


def test_qp_unconstrained():
    res = solve_qp(2 * np.eye(3), None)
    assert res.status == cs.OPTIMAL and np.max(np.abs(res.w)) < 1e-7


def test_qp_active_bound():
    res = solve_qp([[2.0]], None, [[1.0]], [-1.0])
    assert res.status == cs.OPTIMAL and res.w[0] == pytest.approx(-1.0, abs=1e-7)


def test_planted_socps_200():
    rng = np.random.default_rng(0)
    worst_obj, worst_viol, n_opt = 0.0, 0.0, 0
    for _ in range(200):
        d = int(rng.integers(1, 7))
        prog, opt = planted_socp(rng, d, int(rng.integers(1, 4)), int(rng.integers(0, 4)))
        res = solve(prog)
        n_opt += res.status == cs.OPTIMAL
        worst_obj = max(worst_obj, abs(res.objective - opt))
        worst_viol = max(worst_viol, prog.max_violation(res.w))
    assert n_opt == 200
    assert worst_obj < 1e-5
    assert worst_viol <= 1e-7


def _grid_min(prog, lo, hi, step):
    xs = np.arange(lo[0], hi[0] + step / 2, step)
    ys = np.arange(lo[1], hi[1] + step / 2, step)
    W = np.stack(np.meshgrid(xs, ys, indexing="ij"), -1).reshape(-1, 2)
    ok = np.all(W @ prog.G.T <= prog.r, axis=1)
    for cone in prog.socs:
        ok &= np.linalg.norm(W @ cone.A.T + cone.b, axis=1) <= W @ cone.g + cone.h
    if not ok.any():
        return None, np.inf
    vals = np.where(ok, W @ prog.c, np.inf)
    j = int(np.argmin(vals))
    return W[j], vals[j]


def test_two_dimensional_socps_against_grid():
    rng = np.random.default_rng(1)
    box_G = np.vstack([np.eye(2), -np.eye(2)])
    checked = 0
    while checked < 12:
        A, b, g = rng.normal(size=(2, 2)), rng.normal(size=2) * 0.3, rng.normal(size=2) * 0.3
        prog = ConicProgram(rng.normal(size=2), [SOC(A, b, g, rng.uniform(0.5, 1.5))], box_G, np.ones(4))
        w, val = _grid_min(prog, [-1, -1], [1, 1], 1e-3)
        if w is None:
            continue
        # local refinement: re-center each window until it stops improving
        for half, step in ((2e-3, 1e-5), (2e-5, 1e-7)):
            for _ in range(50):
                w2, val2 = _grid_min(prog, w - half, w + half, step)
                if not val2 < val:
                    break
                w, val = w2, val2
        res = solve(prog)
        assert res.status == cs.OPTIMAL
        assert abs(res.objective - val) <= 1e-5
        assert prog.max_violation(res.w) <= 1e-7
        checked += 1


def active_set_oracle(H, q, G, r):
    d, m = H.shape[0], G.shape[0]
    for k in range(0, min(d, m) + 1):
        for S in itertools.combinations(range(m), k):
            S = list(S)
            K = np.block([[H, G[S].T], [G[S], np.zeros((k, k))]])
            try:
                sol = np.linalg.solve(K, np.concatenate([-q, r[S]]))
            except np.linalg.LinAlgError:
                continue
            w, mu = sol[:d], sol[d:]
            if np.all(G @ w <= r + 1e-10) and np.all(mu >= -1e-10):
                return w
    raise AssertionError("no active set found")


def test_random_qps_against_active_set_enumeration():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(200):
        d, m = int(rng.integers(1, 6)), int(rng.integers(1, 7))
        B = rng.normal(size=(d, d))
        H = B @ B.T + 0.1 * np.eye(d)
        q, G = rng.normal(size=d) * 3, rng.normal(size=(m, d))
        r = G @ rng.normal(size=d) + rng.uniform(0.1, 1, m)
        res = solve_qp(H, q, G, r)
        assert res.status == cs.OPTIMAL
        worst = max(worst, np.max(np.abs(res.w - active_set_oracle(H, q, G, r))))
    assert worst < 1e-6


def test_empty_cone_is_infeasible():
    prog = ConicProgram([1.0], [SOC([[1.0]], [0.0], [0.0], -1.0)])
    assert solve(prog).status == cs.INFEASIBLE
    verdict, witness = check_feasibility(prog)
    assert verdict == cs.INFEASIBLE and witness is None


def test_feasibility_witness_in_box():
    prog = ConicProgram([0.0], [SOC([[1.0]], [0.0], [0.0], 1.0)], [[1.0], [-1.0]], [0.5, 0.5])
    verdict, w = check_feasibility(prog)
    assert verdict == cs.FEASIBLE and abs(w[0]) <= 0.5 + 1e-7


def test_infeasible_linear_rows():
    res = solve_qp([[2.0]], None, [[1.0], [-1.0]], [-1.0, -1.0])
    assert res.status == cs.INFEASIBLE


def test_iteration_cap_reports_max_iters():
    rng = np.random.default_rng(3)
    prog, _ = planted_socp(rng, 5, 3, 3)
    assert solve(prog, max_iters=1).status == cs.MAX_ITERS


def test_degenerate_cone_with_zero_matrix():
    # ||0 w + 0|| <= -u + 1 reduces to a linear row u <= 1
    res = solve_qp([[2.0]], [-4.0], cones=[SOC([[0.0]], [0.0], [-1.0], 1.0)])
    assert res.status == cs.OPTIMAL and res.w[0] == pytest.approx(1.0, abs=1e-7)


def test_dump_failed_solve(tmp_path):
    solve(ConicProgram([1.0], [SOC([[1.0]], [0.0], [0.0], -1.0)]), dump_dir=str(tmp_path))
    files = list(tmp_path.iterdir())
    assert len(files) == 1 and "status infeasible" in files[0].read_text()
    solve_qp([[2.0]], None, dump_dir=str(tmp_path))
    assert len(list(tmp_path.iterdir())) == 1


def test_rejects_bad_dimensions_and_tolerance():
    with pytest.raises(ValueError):
        ConicProgram([1.0, 0.0], [SOC([[1.0]], [0.0], [0.0], 1.0)])
    with pytest.raises(ValueError):
        solve(ConicProgram([1.0], G=[[1.0]], r=[1.0]), tol=0.0)


def _best_of(fn, repeats=3):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        res = fn()
        best = min(best, time.perf_counter() - t0)
    return best, res


def test_median_latency_eight_variables_three_cones():
    rng = np.random.default_rng(4)
    d = 8
    box_G, box_r = np.vstack([np.eye(d), -np.eye(d)]), 10 * np.ones(2 * d)
    direct, via_qp = [], []
    for _ in range(50):
        cones = [SOC(rng.normal(size=(3, d)), rng.normal(size=3), rng.normal(size=d) * 0.1, 5.0)
                 for _ in range(3)]
        prog = ConicProgram(rng.normal(size=d), cones, box_G, box_r)
        t, res = _best_of(lambda: solve(prog))
        assert res.status == cs.OPTIMAL
        direct.append(t)
        # a QP in 7 variables becomes an 8-variable conic program whose third
        # cone is the objective epigraph
        B = rng.normal(size=(d - 1, d - 1))
        H, q = B @ B.T + np.eye(d - 1), rng.normal(size=d - 1)
        qp_cones = [SOC(cone.A[:, 1:], cone.b, cone.g[1:], cone.h) for cone in cones[:2]]
        qp_G = np.vstack([np.eye(d - 1), -np.eye(d - 1)])
        t, res = _best_of(lambda: solve_qp(H, q, qp_G, 10 * np.ones(2 * d - 2), qp_cones))
        assert res.status == cs.OPTIMAL
        via_qp.append(t)
    assert np.median(direct) < 5e-3
    assert np.median(via_qp) < 5e-3


# -- properties ---------------------------------------------------------------

seeds = st.integers(0, 10 ** 6)


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_optimal_results_satisfy_constraints(seed):
    rng = np.random.default_rng(seed)
    prog, _ = planted_socp(rng, int(rng.integers(1, 7)), int(rng.integers(1, 4)), int(rng.integers(0, 4)))
    res = solve(prog)
    if res.status == cs.OPTIMAL:
        assert prog.max_violation(res.w) <= 1e-7


@settings(max_examples=50, deadline=None)
@given(seeds, st.floats(0.01, 100.0))
def test_argmin_invariant_to_objective_scale(seed, alpha):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 6))
    A = rng.normal(size=(d, d)) + 3 * np.eye(d)
    cone = SOC(A, rng.normal(size=d), np.zeros(d), 1.0)
    c = rng.normal(size=d)
    a, b = solve(ConicProgram(c, [cone])), solve(ConicProgram(alpha * c, [cone]))
    assert a.status == b.status == cs.OPTIMAL
    assert np.max(np.abs(a.w - b.w)) < 1e-6


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_bitwise_determinism(seed):
    rng = np.random.default_rng(seed)
    prog, _ = planted_socp(rng, 4, 2, 2)
    a, b = solve(prog), solve(prog)
    assert a.iterations == b.iterations and a.status == b.status
    assert np.array_equal(a.w, b.w)

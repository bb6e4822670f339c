"""Dense primal-dual interior-point solver for small second-order cone programs.

Problems are posed as

    minimize    c^T w
    subject to  ||A_i w + b_i||_2 <= g_i^T w + h_i      (second-order cones)
                G w <= r                                (linear inequalities)
                A_eq w = b_eq                           (equalities)

and solved with a homogeneous self-dual embedding, Nesterov-Todd scaling and
Mehrotra predictor-corrector steps.  Everything is dense; the intended use is
the handful of variables that a CLF controller produces at every timestep.
"""

from __future__ import annotations

import functools
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg.lapack import dgetrf, dgetrs

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITERS = "max_iters"
NUMERICAL_FAILURE = "numerical_failure"

FEASIBLE = "feasible"
UNKNOWN = "unknown"

_STEP = 0.99
_EXPON = 3
_ABS_FEAS = 1e-8


@dataclass(frozen=True)
class SOC:
    """Cone constraint ``||A w + b|| <= g^T w + h``."""

    A: np.ndarray
    b: np.ndarray
    g: np.ndarray
    h: float

    def residual(self, w: np.ndarray) -> float:
        """Amount by which ``w`` violates the cone (<= 0 when satisfied)."""
        return float(np.linalg.norm(self.A @ w + self.b) - (self.g @ w + self.h))


@dataclass
class ConicProgram:
    c: np.ndarray
    socs: Sequence[SOC] = ()
    G: Optional[np.ndarray] = None
    r: Optional[np.ndarray] = None
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        d = self.c.size
        socs = []
        for cone in self.socs:
            A = np.atleast_2d(np.asarray(cone.A, dtype=float))
            b = np.asarray(cone.b, dtype=float).ravel()
            g = np.asarray(cone.g, dtype=float).ravel()
            if A.shape[1] != d or g.size != d or A.shape[0] != b.size:
                raise ValueError("cone dimensions do not match decision dimension %d" % d)
            socs.append(SOC(A, b, g, float(cone.h)))
        self.socs = tuple(socs)
        if self.G is None:
            self.G = np.zeros((0, d))
            self.r = np.zeros(0)
        self.G = np.atleast_2d(np.asarray(self.G, dtype=float)).reshape(-1, d)
        self.r = np.asarray(self.r, dtype=float).ravel()
        if self.G.shape[0] != self.r.size:
            raise ValueError("G has %d rows but r has %d entries" % (self.G.shape[0], self.r.size))
        if self.A_eq is None:
            self.A_eq = np.zeros((0, d))
            self.b_eq = np.zeros(0)
        self.A_eq = np.atleast_2d(np.asarray(self.A_eq, dtype=float)).reshape(-1, d)
        self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
        if self.A_eq.shape[0] != self.b_eq.size:
            raise ValueError("A_eq and b_eq sizes differ")

    @property
    def dim(self) -> int:
        return self.c.size

    def max_violation(self, w: np.ndarray) -> float:
        """Largest constraint violation at ``w`` (0 when feasible)."""
        v = 0.0
        if self.r.size:
            v = max(v, float(np.max(self.G @ w - self.r)))
        for cone in self.socs:
            v = max(v, cone.residual(w))
        if self.b_eq.size:
            v = max(v, float(np.max(np.abs(self.A_eq @ w - self.b_eq))))
        return v


@dataclass
class SolveResult:
    w: np.ndarray
    status: str
    objective: float
    iterations: int
    primal_residual: float
    dual_residual: float
    gap: float = np.nan
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


# -- cone arithmetic -------------------------------------------------------
# Cone vectors are stacked as [orthant (l entries), soc_1, soc_2, ...].  The
# vectors involved have a few dozen entries at most, so per-cone work is done
# on Python floats where numpy call overhead would dominate.


class _Cones:
    def __init__(self, l, qs):
        self.l = l
        self.blocks = []
        start = l
        for q in qs:
            self.blocks.append((start, start + q))
            start += q
        self.size = start
        self.degree = l + len(qs)
        self.e = np.ones(start)
        for lo, hi in self.blocks:
            self.e[lo:hi] = 0.0
            self.e[lo] = 1.0
        # index tables for block-vectorized arithmetic
        self._heads = np.array([lo for lo, _ in self.blocks], dtype=int)
        self._rel = self._heads - l
        bid = np.empty(start - l, dtype=int)
        for k, (lo, hi) in enumerate(self.blocks):
            bid[lo - l:hi - l] = k
        self._bid = bid
        ii, jj, kk = [], [], []
        for k, (lo, hi) in enumerate(self.blocks):
            idx = np.arange(lo, hi)
            ii.append(np.repeat(idx, hi - lo))
            jj.append(np.tile(idx, hi - lo))
            kk.append(np.full((hi - lo) ** 2, k))
        ii = np.concatenate(ii) if ii else np.zeros(0, dtype=int)
        jj = np.concatenate(jj) if jj else np.zeros(0, dtype=int)
        self._pair_flat = ii * start + jj
        self._pair_i, self._pair_j = ii, jj
        self._pair_k = np.concatenate(kk) if kk else np.zeros(0, dtype=int)
        head = np.zeros(start, dtype=bool)
        head[self._heads] = True
        self._pair_hh = head[ii] & head[jj]
        self._pair_tt = ~(head[ii] | head[jj])
        self._pair_diag = ii == jj
        self._orth_flat = np.arange(l) * (start + 1)
        self._tail_sign = np.where(head[l:], 1.0, -1.0)
        # W^{-1} = J W J / beta^2 per block (J flips the tail), 1/d^2 scaling on the orthant
        sgn = np.ones(start)
        sgn[l:] = self._tail_sign
        self._flip = np.outer(sgn, sgn)

    def _tail_dot(self, u, v):
        """Per-block sum of ``u_i v_i`` over the non-head entries."""
        if not self.blocks:
            return np.zeros(0)
        p = (u * v)[self.l:]
        return np.add.reduceat(p, self._rel) - u[self._heads] * v[self._heads]

    def jprod(self, u, v):
        out = u * v
        ul, vl = u.tolist(), v.tolist()
        for lo, hi in self.blocks:
            u0, v0 = ul[lo], vl[lo]
            acc = u0 * v0
            for i in range(lo + 1, hi):
                acc += ul[i] * vl[i]
                out[i] = u0 * vl[i] + v0 * ul[i]
            out[lo] = acc
        return out

    def jdiv(self, lam, r):
        """Solve ``lam o u = r`` for u."""
        out = np.empty_like(r)
        out[:self.l] = r[:self.l] / lam[:self.l]
        ll, rl = lam.tolist(), r.tolist()
        for lo, hi in self.blocks:
            a0, b0 = ll[lo], rl[lo]
            nrm = dot = 0.0
            for i in range(lo + 1, hi):
                nrm += ll[i] * ll[i]
                dot += ll[i] * rl[i]
            u0 = (a0 * b0 - dot) / (a0 * a0 - nrm)
            out[lo] = u0
            for i in range(lo + 1, hi):
                out[i] = (rl[i] - u0 * ll[i]) / a0
        return out

    def shift_distance(self, v):
        """Smallest alpha with ``v + alpha*e`` in the cone."""
        alpha = -np.inf
        if self.l:
            alpha = float(np.max(-v[:self.l]))
        for lo, hi in self.blocks:
            alpha = max(alpha, float(np.linalg.norm(v[lo + 1:hi])) - float(v[lo]))
        return alpha

    def max_step(self, v, dv):
        """Largest alpha >= 0 keeping ``v + alpha*dv`` in the cone (inf if none)."""
        vl, dl = v.tolist(), dv.tolist()
        alpha = math.inf
        for i in range(self.l):
            if dl[i] < 0:
                t = -vl[i] / dl[i]
                if t < alpha:
                    alpha = t
        for lo, hi in self.blocks:
            x0, d0 = vl[lo], dl[lo]
            qa, qb, qc = d0 * d0, x0 * d0, x0 * x0
            for i in range(lo + 1, hi):
                qa -= dl[i] * dl[i]
                qb -= vl[i] * dl[i]
                qc -= vl[i] * vl[i]
            qb *= 2.0
            if d0 < 0:
                alpha = min(alpha, -x0 / d0)
            if abs(qa) <= 1e-14 * max(1.0, abs(qb), abs(qc)):
                if qb < 0:
                    alpha = min(alpha, -qc / qb)
                continue
            disc = qb * qb - 4.0 * qa * qc
            if disc < 0:
                continue
            # numerically stable pair of roots
            q = -0.5 * (qb + math.copysign(math.sqrt(disc), qb))
            for t in (q / qa, qc / q if q != 0 else -1.0):
                if t > 0:
                    alpha = min(alpha, t)
        return alpha

    def nt_scaling(self, s, z):
        """Nesterov-Todd scaling W (dense), its inverse, and lambda = W z = W^{-1} s."""
        m, l = self.size, self.l
        W = np.zeros((m, m))
        rinv = np.empty(m)
        if l:
            d = np.sqrt(s[:l] / z[:l])
            W.flat[self._orth_flat] = d
            rinv[:l] = 1.0 / d
        if self.blocks:
            h = self._heads
            sn = np.sqrt(np.maximum(s[h] ** 2 - self._tail_dot(s, s), 1e-300))
            zn = np.sqrt(np.maximum(z[h] ** 2 - self._tail_dot(z, z), 1e-300))
            sb = s[l:] / sn[self._bid]
            zb = z[l:] / zn[self._bid]
            gam2 = 2.0 * np.sqrt(np.maximum((1.0 + np.add.reduceat(sb * zb, self._rel)) / 2.0, 1e-300))
            w = np.zeros(m)
            w[l:] = (sb + zb * self._tail_sign) / gam2[self._bid]
            w0 = w[h]
            beta = np.sqrt(sn / zn)
            # W = beta [[w0, w1^T], [w1, I + w1 w1^T / (1 + w0)]]
            i, j, k = self._pair_i, self._pair_j, self._pair_k
            core = np.where(self._pair_tt, w[i] * w[j] / (1.0 + w0[k]) + self._pair_diag,
                            np.where(self._pair_hh, w0[k], w[i] + w[j] - w0[k]))
            W.flat[self._pair_flat] = beta[k] * core
            rinv[l:] = 1.0 / beta[self._bid]
        Wi = W * self._flip * np.outer(rinv, rinv)
        return W, Wi, W @ z


# -- problem assembly ------------------------------------------------------


@functools.lru_cache(maxsize=64)
def _cones(l: int, qs: tuple) -> _Cones:
    # index tables depend only on the cone sizes; instances are never mutated
    return _Cones(l, qs)


def _standard_form(prog: ConicProgram):
    """Stack into ``G w + s = h, s in K`` with K = R+^l x Q^{q_1} x ..."""
    rows = [prog.G]
    rhs = [prog.r]
    qs = []
    for cone in prog.socs:
        rows.append(np.vstack([-cone.g[None, :], -cone.A]))
        rhs.append(np.concatenate([[cone.h], cone.b]))
        qs.append(cone.A.shape[0] + 1)
    return np.vstack(rows), np.concatenate(rhs), _cones(prog.G.shape[0], tuple(qs))


def solve(prog: ConicProgram, tol: float = 1e-8, max_iters: int = 50,
          dump_dir: Optional[str] = None) -> SolveResult:
    """Solve ``prog``.  Never raises on infeasibility; inspect ``status``.

    When ``dump_dir`` is given, problems that do not reach ``optimal`` are
    written there as text for offline inspection.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    try:
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            result = _solve_hsd(prog, tol, max_iters)
    except (ZeroDivisionError, OverflowError, np.linalg.LinAlgError):
        nan = float("nan")
        result = SolveResult(np.full(prog.dim, nan), NUMERICAL_FAILURE, nan, 0, nan, nan, nan)
    if dump_dir is not None and result.status != OPTIMAL:
        dump_problem(prog, dump_dir, result)
    return result


def _solve_hsd(prog: ConicProgram, tol: float, max_iters: int) -> SolveResult:
    c = prog.c
    A, b = prog.A_eq, prog.b_eq
    G, h, K = _standard_form(prog)
    nx, ny, nz = c.size, b.size, h.size
    e = K.e

    resx0 = max(1.0, float(np.linalg.norm(c)))
    resy0 = max(1.0, float(np.linalg.norm(b)))
    resz0 = max(1.0, float(np.linalg.norm(h)))

    ix = slice(0, nx)
    iy = slice(nx, nx + ny)
    iz = slice(nx + ny, nx + ny + nz)
    itau = nx + ny + nz

    # initial point: least-norm slack / least-norm dual, then shifted inside
    K0 = np.zeros((itau, itau))
    K0[ix, iy] = A.T
    K0[ix, iz] = G.T
    K0[iy, ix] = A
    K0[iz, ix] = G
    K0[iz, iz] = -np.eye(nz)
    rhs_p = np.concatenate([np.zeros(nx), b, h])
    rhs_d = np.concatenate([-c, np.zeros(ny + nz)])
    rhs0 = np.column_stack([rhs_p, rhs_d])
    try:
        sol0 = np.linalg.solve(K0, rhs0)
    except np.linalg.LinAlgError:
        sol0 = np.linalg.lstsq(K0, rhs0, rcond=None)[0]
    sol_p, sol_d = sol0[:, 0], sol0[:, 1]
    x = sol_p[ix]
    s = -sol_p[iz]
    y = sol_d[iy]
    z = sol_d[iz]
    if nz:
        shift = K.shift_distance(s)
        if shift >= -1e-8 * max(1.0, float(np.linalg.norm(s))):
            s = s + (1.0 + shift) * e
        shift = K.shift_distance(z)
        if shift >= -1e-8 * max(1.0, float(np.linalg.norm(z))):
            z = z + (1.0 + shift) * e
    tau = kappa = 1.0

    KKT = np.zeros((itau + 1, itau + 1))
    KKT[ix, iy] = A.T
    KKT[ix, itau] = c
    KKT[iy, ix] = A
    KKT[iy, itau] = -b
    KKT[iz, iz] = -np.eye(nz)
    KKT[itau, ix] = c
    KKT[itau, iy] = b
    reg_signs = np.concatenate([np.ones(nx), -np.ones(ny + nz), [0.0]])

    best = None
    status = MAX_ITERS
    it = 0
    pres = dres = gap = np.inf
    def nrm(v):
        return math.sqrt(float(v @ v))

    AT, GT = A.T, G.T
    for it in range(max_iters + 1):
        ATy_GTz = AT @ y + GT @ z
        Ax, Gx_s = A @ x, G @ x + s
        rx = ATy_GTz + c * tau
        ry = Ax - b * tau
        rz = Gx_s - h * tau
        cx = float(c @ x)
        hz_by = float(h @ z + b @ y)
        sz = float(s @ z)
        rt = kappa + cx + hz_by

        gap_raw = sz + tau * kappa
        mu = gap_raw / (K.degree + 1)
        pcost = cx / tau
        pres = max(nrm(ry) / resy0, nrm(rz) / resz0) / tau
        dres = nrm(rx) / tau / resx0
        gap = sz / tau ** 2

        if best is None or max(pres, dres) < best[0]:
            best = (max(pres, dres), x / tau, pres, dres, gap)

        # relative tests plus an absolute bound on constraint violation
        if pres <= tol and dres <= tol and gap <= tol * (1.0 + abs(pcost)):
            pabs = max(float(np.abs(rz).max(initial=0.0)), float(np.abs(ry).max(initial=0.0))) / tau
            if pabs <= _ABS_FEAS:
                status = OPTIMAL
                break
        # infeasibility certificates
        if hz_by < 0 and nrm(ATy_GTz) / resx0 / -hz_by <= tol:
            status = INFEASIBLE
            break
        if cx < 0 and max(nrm(Ax) / resy0, nrm(Gx_s) / resz0) / -cx <= tol:
            status = UNBOUNDED
            break
        if it == max_iters:
            break

        W, Winv, lam = K.nt_scaling(s, z)
        Gs = Winv @ G
        hs = Winv @ h
        KKT[ix, iz] = Gs.T
        KKT[iz, ix] = Gs
        KKT[iz, itau] = -hs
        KKT[itau, iz] = hs
        KKT[itau, itau] = -kappa / tau
        try:
            lu = _Factor(KKT, reg_signs)
        except np.linalg.LinAlgError:
            status = NUMERICAL_FAILURE
            break

        def newton(eta, rc, rk):
            # rc is the rhs of the scaled complementarity lam o (W^{-1} ds + W dz) = rc
            q = K.jdiv(lam, rc)
            rhs = np.concatenate([
                -(1.0 - eta) * rx,
                -(1.0 - eta) * ry,
                Winv @ (-(1.0 - eta) * rz - W @ q),
                [-(1.0 - eta) * rt - rk / tau],
            ])
            sol = lu.solve(rhs)
            dx, dy, dtau = sol[ix], sol[iy], float(sol[itau])
            dz = Winv @ sol[iz]
            # ds, dkappa come from the linear equations rather than through
            # W, whose conditioning degrades like 1/mu
            ds = -(1.0 - eta) * rz - G @ dx + h * dtau
            dk = -(1.0 - eta) * rt - float(c @ dx + b @ dy + h @ dz)
            return dx, dy, dz, dtau, ds, dk

        def step_to_boundary(ds, dz, dtau, dk):
            amax = min(K.max_step(s, ds), K.max_step(z, dz))
            if dtau < 0:
                amax = min(amax, -tau / dtau)
            if dk < 0:
                amax = min(amax, -kappa / dk)
            return amax

        # predictor
        lam2 = K.jprod(lam, lam)
        dx, dy, dz, dtau, ds, dk = newton(0.0, -lam2, -tau * kappa)
        alpha = min(1.0, step_to_boundary(ds, dz, dtau, dk))
        new_gap = float((s + alpha * ds) @ (z + alpha * dz)) + (tau + alpha * dtau) * (kappa + alpha * dk)
        sigma = min(1.0, max(0.0, new_gap / gap_raw)) ** _EXPON

        # corrector
        rc = -lam2 - K.jprod(Winv @ ds, W @ dz) + sigma * mu * e
        rk = -tau * kappa - dtau * dk + sigma * mu
        dx, dy, dz, dtau, ds, dk = newton(sigma, rc, rk)
        alpha = min(1.0, _STEP * step_to_boundary(ds, dz, dtau, dk))
        if not math.isfinite(alpha) or alpha <= 0:
            status = NUMERICAL_FAILURE
            break

        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds
        tau += alpha * dtau
        kappa += alpha * dk
        if not (np.all(np.isfinite(x)) and math.isfinite(tau)) or tau <= 0:
            status = NUMERICAL_FAILURE
            break

    if status == OPTIMAL:
        w = x / tau
        return SolveResult(w, OPTIMAL, float(c @ w), it, pres, dres, gap)
    if status == INFEASIBLE:
        scale = -float(h @ z + b @ y)
        info = {"certificate_z": z / scale, "certificate_y": y / scale}
        return SolveResult(np.full(nx, np.nan), INFEASIBLE, np.inf, it, pres, dres, gap, info)
    if status == UNBOUNDED:
        return SolveResult(np.full(nx, np.nan), UNBOUNDED, -np.inf, it, pres, dres, gap,
                           {"ray": x / -float(c @ x)})
    _, w, bp, bd, bg = best
    return SolveResult(w, status, float(c @ w), it, bp, bd, bg)


class _Factor:
    """LU of the KKT matrix, reused for predictor and corrector solves.

    When a pivot collapses (constraint sets with a lineality space make the
    matrix singular) the factorization is redone with static regularization,
    ``+delta`` on the primal block and ``-delta`` on the dual blocks, and
    solves use iterative refinement against the unregularized matrix.
    """

    _DELTA = 1e-10
    _PIVOT = 1e-13
    _REFINE = 3

    def __init__(self, M, signs):
        amax = float(np.abs(M).max())  # NaN propagates
        if not math.isfinite(amax):
            raise np.linalg.LinAlgError("non-finite KKT system")
        scale = max(1.0, amax)
        self._M = M
        self._eps = 1e-15 * scale
        self._lu, self._piv, info = dgetrf(M)
        self.regularized = info != 0 or float(np.abs(self._lu.diagonal()).min()) < self._PIVOT * scale
        if self.regularized:
            Mreg = M.copy()
            Mreg.flat[::M.shape[0] + 1] += self._DELTA * scale * signs
            self._lu, self._piv, info = dgetrf(Mreg, overwrite_a=True)
            if info != 0:
                raise np.linalg.LinAlgError("singular KKT system")

    def solve(self, rhs):
        sol = dgetrs(self._lu, self._piv, rhs)[0]
        if not self.regularized:
            # one unconditional refinement step
            sol += dgetrs(self._lu, self._piv, rhs - self._M @ sol)[0]
            return sol
        for _ in range(self._REFINE):
            res = rhs - self._M @ sol
            if np.abs(res).max() <= self._eps * (1.0 + np.abs(sol).max()):
                break
            sol += dgetrs(self._lu, self._piv, res)[0]
        return sol


# -- derived entry points --------------------------------------------------


def solve_qp(H, q, G=None, r=None, cones: Sequence[SOC] = (), tol: float = 1e-8,
             max_iters: int = 50, dump_dir: Optional[str] = None) -> SolveResult:
    """Minimize ``0.5 w^T H w + q^T w`` s.t. ``G w <= r`` (and optional cones).

    The program handed to :func:`solve` minimizes ``t`` subject to
    ``||L w + L^{-T} q|| <= t`` with ``H = L^T L``.  The norm and its square
    share the minimizer, and the plain norm keeps ``t`` on the scale of ``w``
    (a squared epigraph cancels catastrophically once the objective is large).
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    d = H.shape[0]
    q = np.zeros(d) if q is None else np.asarray(q, dtype=float).ravel()
    L = np.linalg.cholesky(H).T  # upper: H = L^T L
    Linv_q = np.linalg.solve(L.T, q)

    # w_ext = [w, t]
    A_obj = np.hstack([L, np.zeros((d, 1))])
    g_obj = np.zeros(d + 1)
    g_obj[d] = 1.0
    ext = [SOC(A_obj, Linv_q, g_obj, 0.0)]
    for cone in cones:
        ext.append(SOC(np.hstack([np.atleast_2d(cone.A), np.zeros((np.atleast_2d(cone.A).shape[0], 1))]),
                       cone.b, np.append(cone.g, 0.0), cone.h))
    if G is not None and np.size(G):
        G = np.atleast_2d(np.asarray(G, dtype=float)).reshape(-1, d)
        G_ext = np.hstack([G, np.zeros((G.shape[0], 1))])
        r_ext = np.asarray(r, dtype=float).ravel()
    else:
        G_ext, r_ext = None, None
    c = np.zeros(d + 1)
    c[d] = 1.0
    prog = ConicProgram(c, ext, G_ext, r_ext)
    res = solve(prog, tol=tol, max_iters=max_iters, dump_dir=dump_dir)
    w = res.w[:d]
    info = dict(res.info)
    if res.status == OPTIMAL and not cones and G_ext is not None:
        polished = _polish(H, q, G, r_ext, w)
        if polished is not None:
            w = polished
            info["polished"] = True
    obj = float(0.5 * w @ H @ w + q @ w) if np.all(np.isfinite(w)) else res.objective
    return SolveResult(w, res.status, obj, res.iterations, res.primal_residual,
                       res.dual_residual, res.gap, info)


def _polish(H, q, G, r, w, act_tol: float = 1e-6) -> Optional[np.ndarray]:
    """Exact KKT solve on the rows that are active at the interior-point answer.

    The epigraph form pins the objective to ``tol`` but the argmin only to
    about its square root; solving the equality-constrained system on the
    detected active set recovers full precision.  Returns None unless the
    result is primal feasible with non-negative multipliers.
    """
    d = H.shape[0]
    act = np.flatnonzero(G @ w - r >= -act_tol * np.maximum(1.0, np.abs(r)))
    k = act.size
    if k > d:
        return None
    Ga = G[act]
    K = np.block([[H, Ga.T], [Ga, np.zeros((k, k))]])
    rhs = np.concatenate([-q, r[act]])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        return None
    wp, mult = sol[:d], sol[d:]
    if not np.all(np.isfinite(sol)):
        return None
    if np.any(G @ wp - r > _ABS_FEAS) or np.any(mult < -1e-9 * max(1.0, float(np.max(np.abs(mult), initial=0.0)))):
        return None
    return wp


def check_feasibility(prog: ConicProgram, tol: float = 1e-8, max_iters: int = 50):
    """Return ``(verdict, witness)`` with verdict in {feasible, infeasible, unknown}.

    The objective of ``prog`` is ignored.  A ``feasible`` verdict always comes
    with a witness satisfying every constraint to within 1e-7.
    """
    zero = ConicProgram(np.zeros(prog.dim), prog.socs, prog.G, prog.r, prog.A_eq, prog.b_eq)
    res = solve(zero, tol=tol, max_iters=max_iters)
    if res.status == INFEASIBLE:
        return INFEASIBLE, None
    # with a zero objective every dual block shrinks to the cone apex together,
    # which can stall the iteration after the primal is already feasible; any
    # verified iterate is a valid witness whatever the termination status
    if np.all(np.isfinite(res.w)) and zero.max_violation(res.w) <= 1e-7:
        return FEASIBLE, res.w
    return UNKNOWN, None


def dump_problem(prog: ConicProgram, directory: str, result: Optional[SolveResult] = None) -> str:
    """Write ``prog`` as plain-text matrices into ``directory``; returns the path."""
    os.makedirs(directory, exist_ok=True)
    idx = len([f for f in os.listdir(directory) if f.startswith("socp_")])
    path = os.path.join(directory, "socp_%05d.txt" % idx)

    def block(name, M):
        M = np.atleast_2d(M)
        lines = ["%%%% %s" % name, "%d %d" % M.shape]
        lines += [" ".join("%.17g" % v for v in row) for row in M]
        return "\n".join(lines)

    parts = []
    if result is not None:
        parts.append("%% status %s iterations %d" % (result.status, result.iterations))
    parts.append(block("c", prog.c[None, :]))
    parts.append(block("G", prog.G))
    parts.append(block("r", prog.r[None, :]))
    parts.append(block("A_eq", prog.A_eq))
    parts.append(block("b_eq", prog.b_eq[None, :]))
    for i, cone in enumerate(prog.socs):
        parts.append(block("soc%d.A" % i, cone.A))
        parts.append(block("soc%d.b" % i, cone.b[None, :]))
        parts.append(block("soc%d.g" % i, cone.g[None, :]))
        parts.append(block("soc%d.h" % i, np.array([[cone.h]])))
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
    return path

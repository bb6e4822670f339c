"""Gaussian process regression with the ADP compound kernel.

The model is zero-mean.  Beyond the usual posterior mean/variance at a
``(x, y)`` query, :func:`posterior_adp` returns the structured posterior at a
state ``x``: a vector ``b`` and a PSD matrix ``C`` such that for every
augmented input ``y``

    mean(x, y)     = b^T y
    variance(x, y) = y^T C y

which is what turns the CLF chance constraint into a second-order cone.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.optimize

from .kernels import ADPKernel, SEKernel, _as_rows, augment, gram_adp


class GPFitError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class TrainingSet:
    """Rows of states ``X`` (N, n), augmented inputs ``Y`` (N, p) and labels ``z`` (N,)."""

    X: np.ndarray
    Y: np.ndarray
    z: np.ndarray
    noise_std: float = 0.0

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        z = np.asarray(self.z, dtype=float).ravel()
        if not (X.shape[0] == Y.shape[0] == z.size):
            raise ValueError("inconsistent sizes: X %s, Y %s, z %s" % (X.shape, Y.shape, z.shape))
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "noise_std", float(self.noise_std))

    @classmethod
    def empty(cls, n: int, p: int, noise_std: float = 0.0) -> "TrainingSet":
        return cls(np.zeros((0, n)), np.zeros((0, p)), np.zeros(0), noise_std)

    @classmethod
    def from_inputs(cls, X, U, z, noise_std: float) -> "TrainingSet":
        """Build from raw control inputs ``U`` (N, m); ``Y`` becomes ``[1, u]``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        U = np.asarray(U, dtype=float).reshape(X.shape[0], -1)
        return cls(X, augment(U), z, noise_std)

    @property
    def N(self) -> int:
        return self.z.size

    @property
    def U(self) -> np.ndarray:
        return self.Y[:, 1:]

    def __len__(self) -> int:
        return self.N

    def extend(self, other: "TrainingSet") -> "TrainingSet":
        return TrainingSet(np.vstack([self.X, other.X]), np.vstack([self.Y, other.Y]),
                           np.concatenate([self.z, other.z]), self.noise_std)

    def subset(self, idx) -> "TrainingSet":
        return TrainingSet(self.X[idx], self.Y[idx], self.z[idx], self.noise_std)

    def with_noise(self, noise_std: float) -> "TrainingSet":
        return TrainingSet(self.X, self.Y, self.z, noise_std)


@dataclass(frozen=True, eq=False)
class GPModel:
    kernel: ADPKernel
    data: TrainingSet
    chol: np.ndarray   # lower Cholesky factor of K_c + noise^2 I (+ jitter)
    alpha: np.ndarray  # (K_c + noise^2 I)^{-1} z

    @property
    def N(self) -> int:
        return self.data.N

    @property
    def p(self) -> int:
        return self.kernel.p


@dataclass(frozen=True)
class StructuredPosterior:
    b: np.ndarray
    C: np.ndarray

    def mean(self, y) -> float:
        return float(self.b @ np.asarray(y, dtype=float))

    def variance(self, y) -> float:
        y = np.asarray(y, dtype=float)
        return max(float(y @ self.C @ y), 0.0)

    def std(self, y) -> float:
        return math.sqrt(self.variance(y))


def _jitter(K: np.ndarray) -> float:
    N = K.shape[0]
    return 1e-10 * float(np.trace(K)) / N if N else 0.0


def _cholesky(A: np.ndarray) -> np.ndarray:
    L, info = scipy.linalg.lapack.dpotrf(A, lower=1, clean=1)
    if info > 0:
        pivot = A[info - 1, info - 1] - L[info - 1, :info - 1] @ L[info - 1, :info - 1]
        raise GPFitError("covariance matrix not positive definite: pivot %d has value %.3e"
                         % (info, pivot))
    if info < 0:
        raise GPFitError("invalid covariance matrix")
    return L


def fit(kernel: ADPKernel, data: TrainingSet) -> GPModel:
    """Condition the zero-mean prior on ``data``."""
    if data.N and data.Y.shape[1] != kernel.p:
        raise ValueError("data has p=%d augmented inputs, kernel expects %d" % (data.Y.shape[1], kernel.p))
    if data.N == 0:
        return GPModel(kernel, data, np.zeros((0, 0)), np.zeros(0))
    K = gram_adp(kernel, data.X, data.Y)
    K[np.diag_indices_from(K)] += data.noise_std ** 2 + _jitter(K)
    L = _cholesky(K)
    alpha = scipy.linalg.cho_solve((L, True), data.z)
    return GPModel(kernel, data, L, alpha)


def posterior_generic(model: GPModel, x, y) -> Tuple[float, float]:
    """Posterior mean and variance at ``(x, y)`` from the plain GP formulas."""
    kc = model.kernel
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    prior = kc(x, y, x, y)
    if model.N == 0:
        return 0.0, max(prior, 0.0)
    k_star = gram_adp(kc, model.data.X, model.data.Y, x[None, :], y[None, :])[:, 0]
    mu = float(k_star @ model.alpha)
    v = scipy.linalg.solve_triangular(model.chol, k_star, lower=True)
    return mu, max(prior - float(v @ v), 0.0)


def _cross_terms(model: GPModel, Xq: np.ndarray) -> np.ndarray:
    """K_{*Y} for each query row, shape (Q, p, N)."""
    data = model.data
    grams = model.kernel.base_grams(Xq, data.X)  # (p, Q, N)
    return np.transpose(grams, (1, 0, 2)) * data.Y.T[None, :, :]


def posterior_adp_batch(model: GPModel, Xq) -> Tuple[np.ndarray, np.ndarray]:
    """Structured posterior at many states: ``b`` (Q, p) and ``C`` (Q, p, p)."""
    kc = model.kernel
    Xq = _as_rows(Xq, kc.input_dim)
    Q, p = Xq.shape[0], kc.p
    prior = np.broadcast_to(np.diag(kc.base_diag()), (Q, p, p)).copy()
    if model.N == 0:
        return np.zeros((Q, p)), prior
    KsY = _cross_terms(model, Xq)
    b = KsY @ model.alpha
    V = scipy.linalg.solve_triangular(model.chol, KsY.reshape(Q * p, -1).T, lower=True)
    V = V.T.reshape(Q, p, -1)
    C = prior - V @ np.transpose(V, (0, 2, 1))
    C = 0.5 * (C + np.transpose(C, (0, 2, 1)))
    return b, C


def posterior_adp(model: GPModel, x_star) -> StructuredPosterior:
    b, C = posterior_adp_batch(model, np.atleast_1d(np.asarray(x_star, dtype=float))[None, :])
    return StructuredPosterior(b[0], C[0])


def predict(model: GPModel, X, Y) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance for paired rows of ``X`` and ``Y``."""
    Y = _as_rows(Y, model.p)
    b, C = posterior_adp_batch(model, X)
    mu = np.einsum("qp,qp->q", b, Y)
    var = np.einsum("qp,qpr,qr->q", Y, C, Y)
    return mu, np.maximum(var, 0.0)


def socp_factors(post: StructuredPosterior, tol: float = 1e-9) -> Tuple[np.ndarray, np.ndarray]:
    """Factor the posterior std as ``sigma(u) = ||M u + n||`` for ``y = [1, u]``.

    Returns ``(M, n)`` with ``M`` of shape (p, p-1) and ``n`` of shape (p,).
    Negative eigenvalues of ``C`` down to ``-tol * max(1, trace C)`` are
    rounding noise and clamped to zero; anything lower raises.
    """
    C = 0.5 * (post.C + post.C.T)
    lam, V = np.linalg.eigh(C)
    if lam.size and lam[0] < -tol * max(1.0, float(np.trace(C))):
        raise ValueError("posterior covariance is indefinite (min eigenvalue %.3e)" % lam[0])
    L = np.sqrt(np.maximum(lam, 0.0))[:, None] * V.T  # L^T L = C
    return L[:, 1:], L[:, 0]


# -- marginal likelihood and training ---------------------------------------


def _pairwise_sq(X: np.ndarray) -> np.ndarray:
    """Per-dimension squared differences, shape (n, N, N)."""
    return (X.T[:, :, None] - X.T[:, None, :]) ** 2


def _lml_and_grad(theta, X, Y, z, p, D2, want_grad=True):
    n = X.shape[1]
    per = n + 1
    noise_var = math.exp(2.0 * theta[-1])
    N = z.size
    parts = []
    K = np.zeros((N, N))
    for i in range(p):
        th = theta[i * per:(i + 1) * per]
        sf2 = math.exp(th[0])
        inv_l2 = np.exp(-2.0 * th[1:])
        Ki = sf2 * np.exp(-0.5 * np.tensordot(inv_l2, D2, axes=1))
        Ki *= np.outer(Y[:, i], Y[:, i])
        parts.append((Ki, inv_l2))
        K += Ki
    jit = _jitter(K)
    K[np.diag_indices_from(K)] += noise_var + jit
    L, info = scipy.linalg.lapack.dpotrf(K, lower=1, clean=1)
    if info != 0:
        return -np.inf, np.zeros_like(theta)
    alpha = scipy.linalg.cho_solve((L, True), z)
    lml = -0.5 * z @ alpha - np.log(np.diag(L)).sum() - 0.5 * N * math.log(2 * math.pi)
    if not want_grad:
        return lml, None
    Kinv = scipy.linalg.cho_solve((L, True), np.eye(N))
    Wm = np.outer(alpha, alpha) - Kinv
    grad = np.empty_like(theta)
    for i, (Ki, inv_l2) in enumerate(parts):
        WK = Wm * Ki
        grad[i * per] = 0.5 * WK.sum()
        # d/dlog l_d of exp(-0.5 r^2 / l^2) = (r^2 / l^2) * k
        grad[i * per + 1:(i + 1) * per] = 0.5 * inv_l2 * np.tensordot(D2, WK, axes=([1, 2], [0, 1]))
    grad[-1] = np.trace(Wm) * noise_var
    return lml, grad


def log_marginal_likelihood(kernel: ADPKernel, data: TrainingSet) -> float:
    """log p(z | X, Y) under the zero-mean prior with the given kernel and noise."""
    theta = np.append(kernel.to_theta(), math.log(max(data.noise_std, 1e-300)))
    lml, _ = _lml_and_grad(theta, data.X, data.Y, data.z, kernel.p, _pairwise_sq(data.X), False)
    return float(lml)


@dataclass
class TrainResult:
    kernel: ADPKernel
    noise_std: float
    lml: float
    improved: bool
    initial_lml: float
    restart_lmls: List[float] = field(default_factory=list)


def _default_bounds(X, z, p, noise_bounds):
    n = X.shape[1]
    scale = float(np.mean(z ** 2)) + 1e-12
    span = np.ptp(X, axis=0) if X.shape[0] > 1 else np.ones(n)
    span = np.where(span > 0, span, 1.0)
    lo, hi = [], []
    for _ in range(p):
        lo += [math.log(scale * 1e-6)] + list(np.log(span * 1e-2))
        hi += [math.log(scale * 1e4)] + list(np.log(span * 1e2))
    nlo = math.log(noise_bounds[0]) if noise_bounds[0] else math.log(math.sqrt(scale) * 1e-4)
    nhi = math.log(noise_bounds[1]) if noise_bounds[1] else math.log(math.sqrt(scale) * 10)
    return np.array(lo + [nlo]), np.array(hi + [nhi]), scale, span


def train_hyperparams(kernel: ADPKernel, data: TrainingSet, restarts: int = 8, seed: int = 0,
                      max_points: Optional[int] = None,
                      noise_bounds: Tuple[Optional[float], Optional[float]] = (None, None),
                      fixed_noise: bool = False, maxiter: int = 200) -> TrainResult:
    """Maximize the log marginal likelihood over kernel hyperparameters and noise.

    The first restart starts at ``kernel`` / ``data.noise_std`` (warm start);
    the rest start at log-uniform random points.  The best restart wins, ties
    going to the lower restart index.  With ``max_points`` set, training uses a
    seeded random subset of the data.
    """
    if data.N < 2:
        raise ValueError("need at least two data points to train")
    rng = np.random.default_rng(seed)
    if max_points is not None and data.N > max_points:
        idx = np.sort(rng.choice(data.N, size=max_points, replace=False))
        data = data.subset(idx)
    X, Y, z, p = data.X, data.Y, data.z, kernel.p
    D2 = _pairwise_sq(X)
    lo, hi, scale, span = _default_bounds(X, z, p, noise_bounds)
    theta0 = np.append(kernel.to_theta(), math.log(max(data.noise_std, 1e-12)))
    theta0 = np.clip(theta0, lo, hi)
    if fixed_noise:
        lo[-1] = hi[-1] = theta0[-1]

    def objective(theta):
        lml, grad = _lml_and_grad(theta, X, Y, z, p, D2)
        if not np.isfinite(lml):
            return 1e25, np.zeros_like(theta)
        return -lml, -grad

    init_lml = -objective(theta0)[0]
    starts = [theta0]
    n = X.shape[1]
    for _ in range(max(restarts - 1, 0)):
        th = []
        for _ in range(p):
            th.append(math.log(scale) + rng.uniform(-3, 2))
            th.extend(np.log(span) + rng.uniform(-2.5, 0.5, size=n))
        th.append(math.log(math.sqrt(scale)) + rng.uniform(-4, -1) if not fixed_noise else theta0[-1])
        starts.append(np.clip(np.array(th), lo, hi))

    best_theta, best_lml = theta0, init_lml
    lmls = []
    for th in starts:
        try:
            res = scipy.optimize.minimize(objective, th, jac=True, method="L-BFGS-B",
                                          bounds=list(zip(lo, hi)), options={"maxiter": maxiter})
            val = -float(res.fun)
            cand = res.x
        except (np.linalg.LinAlgError, ValueError):
            val, cand = -np.inf, th
        lmls.append(val)
        if val > best_lml:
            best_lml, best_theta = val, cand
    improved = best_lml > init_lml
    if not improved:
        warnings.warn("hyperparameter training did not improve on the initial point", RuntimeWarning)
    new_kernel = ADPKernel.from_theta(best_theta[:-1], p)
    return TrainResult(new_kernel, math.exp(best_theta[-1]), best_lml, improved, init_lml, lmls)


# -- confidence scaling -------------------------------------------------------


@dataclass(frozen=True)
class UCBConfig:
    """Confidence scaling for ``|mean - Delta| <= beta * std``.

    ``gamma_mode`` is ``"constant"`` (use ``gamma`` as the information gain)
    or ``"greedy-approx"`` (greedy lower approximation on the model's data).
    ``beta_override``, when set, short-circuits the formula.
    """

    delta: float = 0.05
    rkhs_bound: float = 1.0
    gamma_mode: str = "constant"
    gamma: float = 0.0
    beta_override: Optional[float] = 2.0

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not self.rkhs_bound > 0:
            raise ValueError("rkhs_bound must be positive")
        if self.gamma_mode not in ("constant", "greedy-approx"):
            raise ValueError("gamma_mode must be 'constant' or 'greedy-approx'")
        if self.beta_override is not None and not self.beta_override > 0:
            raise ValueError("beta_override must be positive")


def beta_formula(rkhs_bound: float, gamma: float, N: int, delta: float) -> float:
    return math.sqrt(2.0 * rkhs_bound ** 2 + 300.0 * gamma * math.log((N + 1) / delta) ** 3)


def beta(cfg: UCBConfig, N: int, model: Optional[GPModel] = None) -> float:
    if N < 0:
        raise ValueError("N must be non-negative")
    if cfg.beta_override is not None:
        return float(cfg.beta_override)
    if cfg.gamma_mode == "constant":
        gamma = cfg.gamma
    else:
        if model is None:
            raise ValueError("greedy-approx information gain needs a fitted model")
        gamma = information_gain_greedy(model.kernel, model.data.X, model.data.Y,
                                        max(model.data.noise_std, 1e-6), N + 1)
    return beta_formula(cfg.rkhs_bound, gamma, N, cfg.delta)


def information_gain_greedy(kernel: ADPKernel, X, Y, noise_std: float, T: int) -> float:
    """Greedy approximation of the maximum information gain over ``T`` picks.

    Candidates are the rows of ``(X, Y)``; repeated picks are allowed.  Each
    step takes the candidate with the largest current posterior variance and
    adds ``0.5 * log(1 + var / noise^2)``.
    """
    S = gram_adp(kernel, X, Y)
    s2 = noise_std ** 2
    gain = 0.0
    for _ in range(T):
        var = np.diag(S)
        j = int(np.argmax(var))
        vj = max(float(var[j]), 0.0)
        gain += 0.5 * math.log1p(vj / s2)
        col = S[:, j].copy()
        S -= np.outer(col, col) / (vj + s2)
    return gain


def sample_prior(kernel: ADPKernel, X, Y, rng: np.random.Generator) -> np.ndarray:
    """One joint draw of the zero-mean GP at the rows of ``(X, Y)``."""
    K = gram_adp(kernel, X, Y)
    K[np.diag_indices_from(K)] += 1e-10 * max(float(np.trace(K)) / max(len(K), 1), 1e-12)
    L = np.linalg.cholesky(K)
    return L @ rng.standard_normal(K.shape[0])


def state_only_kernel(kernel: SEKernel) -> ADPKernel:
    """Wrap a single base kernel as a p=1 ADP kernel (a plain GP on the state)."""
    return ADPKernel((kernel,))


# -- checkpoints ----------------------------------------------------------------

CHECKPOINT_VERSION = 1


class CheckpointMismatch(ValueError):
    pass


def save_checkpoint(path: str, model: GPModel, config_hash: str = "") -> None:
    """Write data, noise level, kernel log-hyperparameters and a config hash (``.npz``)."""
    with open(path, "wb") as fh:
        np.savez(fh, version=np.array(CHECKPOINT_VERSION), X=model.data.X, Y=model.data.Y,
                 z=model.data.z, noise_std=np.array(model.data.noise_std),
                 theta=model.kernel.to_theta(), p=np.array(model.kernel.p),
                 config_hash=np.array(config_hash))


def load_checkpoint(path: str, expected_hash: Optional[str] = None,
                    override: bool = False) -> Tuple[GPModel, str]:
    """Rebuild a model from :func:`save_checkpoint` output.

    Refitting from identical arrays is deterministic, so predictions match the
    saved model bit for bit.  A config-hash mismatch raises unless ``override``.
    """
    with np.load(path, allow_pickle=False) as f:
        if int(f["version"]) != CHECKPOINT_VERSION:
            raise CheckpointMismatch("unsupported checkpoint version %d" % int(f["version"]))
        h = str(f["config_hash"])
        if expected_hash is not None and h != expected_hash and not override:
            raise CheckpointMismatch("checkpoint config hash %s does not match %s" % (h, expected_hash))
        kernel = ADPKernel.from_theta(f["theta"], int(f["p"]))
        data = TrainingSet(f["X"], f["Y"], f["z"], float(f["noise_std"]))
    return fit(kernel, data), h

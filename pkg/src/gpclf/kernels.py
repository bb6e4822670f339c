"""Squared-exponential base kernels and the affine dot-product (ADP) compound kernel.

Data are stored row-wise: a state matrix ``X`` has shape ``(N, n)`` and an
augmented-input matrix ``Y`` has shape ``(N, p)``.  In the control setting
``y = [1, u]`` so ``p = m + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np


@dataclass(frozen=True)
class SEKernel:
    """Anisotropic squared-exponential kernel

    k(x, x') = signal_variance * exp(-0.5 * sum_d ((x_d - x'_d) / l_d)^2)
    """

    signal_variance: float
    lengthscales: Tuple[float, ...]

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be positive")
        if not all(v > 0 for v in ls):
            raise ValueError("lengthscales must be positive")

    @property
    def input_dim(self) -> int:
        return len(self.lengthscales)

    @property
    def bound(self) -> float:
        """sup_{x,x'} |k(x, x')|."""
        return self.signal_variance

    def __call__(self, x, x2) -> float:
        return eval_base(self, x, x2)

    def gram(self, X, X2=None) -> np.ndarray:
        """Matrix of kernel values between rows of ``X`` and ``X2``."""
        ell = np.asarray(self.lengthscales)
        X = _as_rows(X, self.input_dim) / ell
        X2 = X if X2 is None else _as_rows(X2, self.input_dim) / ell
        sq = (X * X).sum(1)[:, None] + (X2 * X2).sum(1)[None, :] - 2.0 * X @ X2.T
        np.maximum(sq, 0.0, out=sq)
        return self.signal_variance * np.exp(-0.5 * sq)

    def diag(self, X) -> np.ndarray:
        return np.full(_as_rows(X, self.input_dim).shape[0], self.signal_variance)

    # log-space parameter vector used by the trainer: [log sf2, log l_1..l_n]
    def to_theta(self) -> np.ndarray:
        return np.log(np.concatenate([[self.signal_variance], self.lengthscales]))

    @classmethod
    def from_theta(cls, theta) -> "SEKernel":
        theta = np.exp(np.asarray(theta, dtype=float))
        return cls(theta[0], tuple(theta[1:]))


@dataclass(frozen=True)
class ADPKernel:
    """Affine dot-product compound kernel ``y^T diag(k_1(x,x'), ..., k_p(x,x')) y'``."""

    base_kernels: Tuple[SEKernel, ...]

    def __post_init__(self):
        ks = tuple(self.base_kernels)
        if len(ks) < 1:
            raise ValueError("ADP kernel needs at least one base kernel")
        dims = {k.input_dim for k in ks}
        if len(dims) != 1:
            raise ValueError("base kernels disagree on state dimension: %s" % sorted(dims))
        object.__setattr__(self, "base_kernels", ks)

    @property
    def p(self) -> int:
        return len(self.base_kernels)

    @property
    def input_dim(self) -> int:
        return self.base_kernels[0].input_dim

    def __call__(self, x, y, x2, y2) -> float:
        return eval_adp(self, x, y, x2, y2)

    def base_grams(self, X, X2=None) -> np.ndarray:
        """Stack of base Gram matrices, shape ``(p, N, N2)``."""
        return np.stack([k.gram(X, X2) for k in self.base_kernels])

    def base_diag(self) -> np.ndarray:
        """k_i(x, x) for each base kernel (stationary, so independent of x)."""
        return np.array([k.signal_variance for k in self.base_kernels])

    def gram(self, X, Y, X2=None, Y2=None) -> np.ndarray:
        return gram_adp(self, X, Y, X2, Y2)

    def to_theta(self) -> np.ndarray:
        return np.concatenate([k.to_theta() for k in self.base_kernels])

    @classmethod
    def from_theta(cls, theta, p: int) -> "ADPKernel":
        theta = np.asarray(theta, dtype=float)
        per = theta.size // p
        return cls(tuple(SEKernel.from_theta(theta[i * per:(i + 1) * per]) for i in range(p)))

    @classmethod
    def isotropic(cls, p: int, n: int, signal_variance: float = 1.0,
                  lengthscale: float = 1.0) -> "ADPKernel":
        return cls(tuple(SEKernel(signal_variance, (lengthscale,) * n) for _ in range(p)))


def _as_rows(X, n: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1) if n == 1 else X[None, :]
    if X.shape[1] != n:
        raise ValueError("expected %d columns, got shape %s" % (n, X.shape))
    return X


def eval_base(kernel: SEKernel, x, x2) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    ell = np.asarray(kernel.lengthscales)
    if x.shape != ell.shape or x2.shape != ell.shape:
        raise ValueError("state dimension mismatch: kernel has %d lengthscales, got %s and %s"
                         % (ell.size, x.shape, x2.shape))
    r = (x - x2) / ell
    return kernel.signal_variance * float(np.exp(-0.5 * (r @ r)))


def eval_adp(kc: ADPKernel, x, y, x2, y2) -> float:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    y2 = np.atleast_1d(np.asarray(y2, dtype=float))
    if y.size != kc.p or y2.size != kc.p:
        raise ValueError("augmented inputs must have length p=%d" % kc.p)
    kv = np.array([eval_base(k, x, x2) for k in kc.base_kernels])
    return float(np.sum(y * kv * y2))


def gram_adp(kc: ADPKernel, X, Y, X2=None, Y2=None) -> np.ndarray:
    """K_c = sum_i (y_i y_i'^T) o K_i, the Hadamard-sum form of the ADP Gram matrix."""
    X = _as_rows(X, kc.input_dim)
    Y = _as_rows(Y, kc.p)
    if X.shape[0] != Y.shape[0]:
        raise ValueError("X has %d rows but Y has %d" % (X.shape[0], Y.shape[0]))
    if X2 is None:
        X2, Y2 = X, Y
    else:
        X2 = _as_rows(X2, kc.input_dim)
        Y2 = _as_rows(Y2, kc.p)
        if X2.shape[0] != Y2.shape[0]:
            raise ValueError("X2 has %d rows but Y2 has %d" % (X2.shape[0], Y2.shape[0]))
    K = np.zeros((X.shape[0], X2.shape[0]))
    for i, k in enumerate(kc.base_kernels):
        K += np.outer(Y[:, i], Y2[:, i]) * k.gram(X, X2)
    return K


def gram_adp_bruteforce(kc: ADPKernel, X, Y) -> np.ndarray:
    """Pairwise evaluation of :func:`eval_adp`; slow, kept as a reference."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    N = X.shape[0]
    K = np.empty((N, N))
    for j in range(N):
        for l in range(N):
            K[j, l] = eval_adp(kc, X[j], Y[j], X[l], Y[l])
    return K


def augment(U) -> np.ndarray:
    """Rows ``[1, u]`` for each row of ``U`` (a 1-D ``U`` is a single input)."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    return np.hstack([np.ones((U.shape[0], 1)), U])

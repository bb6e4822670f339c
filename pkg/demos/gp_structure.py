"""How the compound-kernel GP exposes an input-affine posterior.

Run with ``python3 demos/gp_structure.py``.  A GP with one base kernel per
component of ``[1, u]`` is fitted to noisy samples of a mismatch that is affine
in the input.  At a query state the posterior mean is ``b^T [1, u]`` and the
variance is ``[1, u]^T C [1, u]``, so both can be read off for every input at
once.  The last lines check this against the generic GP formulas.
"""
import numpy as np

from gpclf.gp import TrainingSet, fit, posterior_adp, posterior_generic, socp_factors
from gpclf.kernels import ADPKernel, SEKernel

rng = np.random.default_rng(0)


def mismatch(x, u):
    return np.sin(x[:, 0]) + 0.5 * np.cos(x[:, 1]) * u


X = rng.uniform(-2.0, 2.0, size=(80, 2))
U = rng.uniform(-3.0, 3.0, size=(80, 1))
z = mismatch(X, U[:, 0]) + rng.normal(scale=0.05, size=80)
data = TrainingSet.from_inputs(X, U, z, noise_std=0.05)
kernel = ADPKernel((SEKernel(1.0, (1.0, 1.0)), SEKernel(0.5, (1.0, 1.0))))
model = fit(kernel, data)

x_star = np.array([0.7, -0.3])
post = posterior_adp(model, x_star)
print("b =", post.b)
print("C =\n", post.C)
print("true drift term %.4f, true input gain %.4f" % (np.sin(0.7), 0.5 * np.cos(-0.3)))

for u in (-2.0, 0.0, 2.0):
    y = np.array([1.0, u])
    mu, var = posterior_generic(model, x_star, y)
    print("u=%+.1f  structured mean %.6f std %.6f | generic mean %.6f std %.6f"
          % (u, post.mean(y), post.std(y), mu, np.sqrt(var)))

# The standard deviation is a Euclidean norm affine in u, the form a cone constraint needs.
M, n = socp_factors(post)
u = np.array([1.3])
print("||M u + n|| = %.6f, std = %.6f" % (np.linalg.norm(M @ u + n), post.std(np.append(1.0, u))))

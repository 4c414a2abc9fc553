"""
The kernel Gram matrix
======================

Every balance computation starts from one N x N matrix. Entry (i, j) is the
integral of the product of two Gaussian kernels centred at units i and j,
which has a closed form. Here we build it and check one entry by quadrature.
"""

import numpy as np
from scipy import integrate

from kdebalance.data import CovariateTable
from kdebalance.kernel_gram import estimate_bandwidth, build_gram

rng = np.random.default_rng(0)
cov = CovariateTable(rng.standard_normal((12, 1)))

# bandwidth: the covariance of all units, shrunk for a group of N // L units
bw = estimate_bandwidth(cov, L=2)
print("H =", bw.H.ravel(), " |H| =", bw.det_H)

gram = build_gram(cov, bw)
print("W diagonal (constant):", gram.W[0, 0])
print("W row sums w[:4]:", gram.w[:4])

# the same entry, integrated numerically; the kernel is K(H^-1/2 u) with K the
# standard normal density, and the 1/|H| scaling is applied by the criterion
zi, zj = cov.values[0, 0], cov.values[5, 0]
h = np.sqrt(bw.H[0, 0])
k = lambda x, c: np.exp(-0.5 * ((x - c) / h) ** 2) / np.sqrt(2 * np.pi)
num, _ = integrate.quad(lambda x: k(x, zi) * k(x, zj), -np.inf, np.inf, epsabs=1e-13)
print(f"closed form {gram.W[0, 5]:.12f}  quadrature {num:.12f}")

"""Compiled inner loops for the path sampler.

All randomness is drawn by the caller (numpy Generators) and passed in, so the
compiled code is deterministic and never touches numba's RNG.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def total_energy(x, M, eta2):
    # H = sum_{i != j} M_ij V(x_i - x_j) with M symmetric, zero diagonal
    n = x.shape[0]
    h = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            d0 = x[i, 0] - x[j, 0]
            d1 = x[i, 1] - x[j, 1]
            d2 = x[i, 2] - x[j, 2]
            h += M[i, j] / np.sqrt(eta2 + d0 * d0 + d1 * d1 + d2 * d2)
    return 2.0 * h


@njit(cache=True)
def site_delta(x, M, eta2, i, y0, y1, y2):
    n = x.shape[0]
    acc = 0.0
    for j in range(n):
        if j == i:
            continue
        a0 = y0 - x[j, 0]
        a1 = y1 - x[j, 1]
        a2 = y2 - x[j, 2]
        b0 = x[i, 0] - x[j, 0]
        b1 = x[i, 1] - x[j, 1]
        b2 = x[i, 2] - x[j, 2]
        acc += M[i, j] * (1.0 / np.sqrt(eta2 + a0 * a0 + a1 * a1 + a2 * a2)
                          - 1.0 / np.sqrt(eta2 + b0 * b0 + b1 * b1 + b2 * b2))
    return 2.0 * acc


@njit(cache=True)
def local_sweep(x, M, eta2, kappa, dt, pin, width, z, log_u, energy):
    """Metropolised Gaussian-bridge update of every free node in index order.

    The proposal is a Crank-Nicolson move on the Brownian conditional law of
    node i given its neighbours, so it leaves the prior invariant for every
    ``width`` in (0, 1]; ``width = 1`` is an exact conditional resample.
    Returns ``(energy, n_accepted)``.
    """
    n = x.shape[0]
    keep = np.sqrt(1.0 - width * width)
    accepted = 0
    for i in range(n):
        if i == pin:
            continue
        if i == 0:
            m0, m1, m2 = x[1, 0], x[1, 1], x[1, 2]
            sd = np.sqrt(dt)
        elif i == n - 1:
            m0, m1, m2 = x[n - 2, 0], x[n - 2, 1], x[n - 2, 2]
            sd = np.sqrt(dt)
        else:
            m0 = 0.5 * (x[i - 1, 0] + x[i + 1, 0])
            m1 = 0.5 * (x[i - 1, 1] + x[i + 1, 1])
            m2 = 0.5 * (x[i - 1, 2] + x[i + 1, 2])
            sd = np.sqrt(0.5 * dt)
        y0 = m0 + keep * (x[i, 0] - m0) + width * sd * z[i, 0]
        y1 = m1 + keep * (x[i, 1] - m1) + width * sd * z[i, 1]
        y2 = m2 + keep * (x[i, 2] - m2) + width * sd * z[i, 2]
        dh = site_delta(x, M, eta2, i, y0, y1, y2)
        if log_u[i] < kappa * dh:
            x[i, 0] = y0
            x[i, 1] = y1
            x[i, 2] = y2
            energy += dh
            accepted += 1
    return energy, accepted


@njit(cache=True)
def min_pair_distance(x):
    n = x.shape[0]
    best = np.inf
    for i in range(n):
        for j in range(i + 1, n):
            d0 = x[i, 0] - x[j, 0]
            d1 = x[i, 1] - x[j, 1]
            d2 = x[i, 2] - x[j, 2]
            d = np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
            if d < best:
                best = d
    return best

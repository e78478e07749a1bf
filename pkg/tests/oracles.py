"""Independent brute-force oracles shared by the test modules.

Nothing here calls the package's energy kernels: weights, kernels and
Brownian paths are rebuilt from the raw parameters.
"""

import numpy as np


def brute_force_energy(x, eps, T, eta, kernel="polaron"):
    """Plain double loop over i != j (slow, for small lattices only)."""
    n = x.shape[0]
    dt = 2 * T / (n - 1)
    t = -T + dt * np.arange(n)
    w = np.full(n, dt)
    w[0] = w[-1] = dt / 2
    h = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            v = 1.0 / np.sqrt(eta ** 2 + np.sum((x[i] - x[j]) ** 2))
            if kernel == "polaron":
                h += 0.5 * eps * w[i] * w[j] * np.exp(-eps * abs(t[i] - t[j])) * v
            else:
                h += w[i] * w[j] * v / (2 * T)
    return h


def importance_pair_distances(eps, T, n_steps, eta, kappa, n_draws, seed, batch=200_000):
    """Self-normalised importance-sampling estimate of E|x_i - x_j| (i < j).

    Prior draws are pinned Brownian paths; weights are exp(kappa H).
    Returns (means, stderrs, effective sample size).
    """
    n = n_steps + 1
    dt = 2 * T / n_steps
    t = -T + dt * np.arange(n)
    w = np.full(n, dt)
    w[0] = w[-1] = dt / 2
    K = 0.5 * eps * np.outer(w, w) * np.exp(-eps * np.abs(t[:, None] - t[None, :]))
    np.fill_diagonal(K, 0.0)
    iu = np.triu_indices(n, 1)
    pin = n_steps // 2
    rng = np.random.default_rng(seed)
    s_w = s_w2 = 0.0
    s_wf = np.zeros(len(iu[0]))
    s_w2f = np.zeros_like(s_wf)
    s_w2f2 = np.zeros_like(s_wf)
    log_shift = None
    done = 0
    while done < n_draws:
        m = min(batch, n_draws - done)
        steps = rng.standard_normal((m, n_steps, 3)) * np.sqrt(dt)
        x = np.zeros((m, n, 3))
        x[:, 1:] = np.cumsum(steps, axis=1)
        x -= x[:, pin:pin + 1]
        diff = x[:, iu[0]] - x[:, iu[1]]
        d = np.sqrt(np.sum(diff ** 2, axis=-1))
        H = 2.0 * (K[iu][None, :] / np.sqrt(eta ** 2 + d ** 2)).sum(axis=1)
        if log_shift is None:
            log_shift = kappa * H.max()
        wt = np.exp(kappa * H - log_shift)
        s_w += wt.sum()
        s_w2 += (wt ** 2).sum()
        s_wf += wt @ d
        s_w2f += (wt ** 2) @ d
        s_w2f2 += (wt ** 2) @ d ** 2
        done += m
    mu = s_wf / s_w
    var = (s_w2f2 - 2 * mu * s_w2f + mu ** 2 * s_w2) / s_w ** 2
    return mu, np.sqrt(var), s_w ** 2 / s_w2

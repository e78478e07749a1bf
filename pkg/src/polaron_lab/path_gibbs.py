"""Metropolis sampling of the tilted Brownian path measure.

A path is discretised on ``t_i = -T + i dt`` (``i = 0..N``) and pinned at the
centre node ``x_{N/2} = 0``; the prior is the Brownian law of the increments.
The target density against that prior is ``exp(kappa H)`` with

    polaron:    H = (eps/2) sum_{i != j} w_i w_j exp(-eps |t_i - t_j|) V(x_i - x_j)
    mean field: H = 1/(2T)  sum_{i != j} w_i w_j V(x_i - x_j)

where ``V(x) = (eta^2 + |x|^2)^{-1/2}`` and ``w`` are trapezoid weights.  The
interaction is attractive, so the exponent is positive.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from sklearn.base import BaseEstimator

from . import _kernels
from ._validation import check_count, check_interval, check_positive
from .exceptions import InsufficientSamples, PinnedNode, SingularPair

logger = logging.getLogger(__name__)

KERNELS = ("polaron", "mean_field")


@dataclass(frozen=True)
class PathLattice:
    """Time lattice and interaction parameters of the path measure.

    ``kappa`` multiplies ``H`` in the acceptance step only.  Values in [0, 1]
    are the thermodynamic-integration path; larger values express a coupling
    multiplier (used by the Brownian scaling check).
    """

    T: float
    n_steps: int
    eps: float = 1.0
    eta: float = 0.1
    kernel: str = "polaron"
    kappa: float = 1.0

    def __post_init__(self):
        check_positive(self.T, "T")
        check_count(self.n_steps, "n_steps", minimum=2)
        if self.n_steps % 2:
            raise ValueError("n_steps must be even so that t = 0 is a node")
        if self.kernel not in KERNELS:
            raise ValueError(f"kernel must be one of {KERNELS}, got {self.kernel!r}")
        if self.kernel == "polaron":
            check_positive(self.eps, "eps")
        check_positive(self.eta, "eta", strict=False)
        check_positive(self.kappa, "kappa", strict=False)

    @property
    def dt(self):
        return 2.0 * self.T / self.n_steps

    @property
    def n_nodes(self):
        return self.n_steps + 1

    @property
    def pin(self):
        return self.n_steps // 2

    @cached_property
    def times(self):
        return -self.T + self.dt * np.arange(self.n_nodes)

    @cached_property
    def weights(self):
        w = np.full(self.n_nodes, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w

    @cached_property
    def coupling_matrix(self):
        """Symmetric matrix ``M`` with ``H = sum_{i != j} M_ij V(x_i - x_j)``."""
        w = self.weights
        ww = np.outer(w, w)
        if self.kernel == "polaron":
            gap = np.abs(self.times[:, None] - self.times[None, :])
            M = 0.5 * self.eps * ww * np.exp(-self.eps * gap)
        else:
            M = ww / (2.0 * self.T)
        np.fill_diagonal(M, 0.0)
        return M

    def with_kappa(self, kappa):
        return dataclasses.replace(self, kappa=float(kappa))

    def params(self):
        return {"T": float(self.T), "n_steps": int(self.n_steps), "eps": float(self.eps),
                "eta": float(self.eta), "kernel": self.kernel, "kappa": float(self.kappa)}


@dataclass
class PathState:
    """Positions ``(N+1, 3)`` pinned at the centre node, with cached energy."""

    positions: np.ndarray
    energy: float
    stats: dict = field(default_factory=lambda: {"pcn": [0, 0], "local": [0, 0]})

    def copy(self):
        return PathState(self.positions.copy(), self.energy,
                         {k: list(v) for k, v in self.stats.items()})


@dataclass(frozen=True)
class SamplerConfig:
    """Sampler settings.

    ``pcn_beta`` is the pCN step in (0, 1]; ``local_width`` in (0, 1] scales the
    single-site bridge move (1 = exact conditional resample).  One sweep is
    ``pcn_moves`` pCN proposals followed by a full local sweep.
    """

    pcn_beta: float = 0.2
    local_width: float = 1.0
    n_sweeps: int = 2000
    burn_in: int = 500
    thinning: int = 5
    seed: int = 0
    n_chains: int = 4
    pcn_moves: int = 1

    def __post_init__(self):
        check_interval(self.pcn_beta, "pcn_beta", 0.0, 1.0, closed_low=False)
        check_interval(self.local_width, "local_width", 0.0, 1.0, closed_low=False)
        check_count(self.n_sweeps, "n_sweeps")
        check_count(self.burn_in, "burn_in", minimum=0)
        check_count(self.thinning, "thinning")
        check_count(self.n_chains, "n_chains")
        check_count(self.pcn_moves, "pcn_moves", minimum=0)
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.burn_in >= self.n_sweeps:
            raise ValueError("burn_in must be smaller than n_sweeps")

    def params(self):
        return dataclasses.asdict(self)


@dataclass
class ChainOutput:
    """Everything one chain produced.

    ``paths`` holds the thinned post-burn-in path samples, shape
    ``(n_samples, N+1, 3)``; observables are derived from it on demand.
    """

    lattice: PathLattice
    config: SamplerConfig
    chain_id: int
    energy_trace: np.ndarray
    acceptance: dict
    paths: np.ndarray
    manifest: dict
    acceptance_trace: np.ndarray = None

    @property
    def n_samples(self):
        return self.paths.shape[0]

    def post_burn_in_energy(self):
        return self.energy_trace[self.config.burn_in:]

    def mean_energy(self):
        return float(np.mean(self.post_burn_in_energy()))

    def endpoint_displacement(self):
        """``omega(T) - omega(-T)`` per sample, shape ``(n_samples, 3)``."""
        return self.paths[:, -1, :] - self.paths[:, 0, :]

    def lag_steps(self, lag):
        k = lag / self.lattice.dt
        if abs(k - round(k)) > 1e-9:
            raise ValueError(f"lag {lag} is not a multiple of dt={self.lattice.dt}")
        return int(round(k))

    def increments(self, lag, window=None, stride=1):
        """Increments ``x(t + lag) - x(t)`` pooled over samples and start times.

        ``window`` = ``(t_lo, t_hi)`` restricts both end points to that time
        range; ``stride`` subsamples the start nodes.
        """
        k = self.lag_steps(lag)
        t = self.lattice.times
        starts = np.arange(0, self.lattice.n_nodes - k, stride)
        if window is not None:
            keep = (t[starts] >= window[0] - 1e-12) & (t[starts + k] <= window[1] + 1e-12)
            starts = starts[keep]
        d = self.paths[:, starts + k, :] - self.paths[:, starts, :]
        return d.reshape(-1, 3)

    def occupation_points(self, sample=-1, stride=1):
        """Path points of one stored sample (the empirical occupation measure)."""
        return self.paths[sample, ::stride, :]


# ---------------------------------------------------------------------------
# Energies


def _positions(path):
    return path.positions if isinstance(path, PathState) else np.asarray(path, dtype=float)


def interaction_energy(path, lat):
    """Full double-sum interaction energy ``H`` of a path (``kappa`` is not used)."""
    x = np.ascontiguousarray(_positions(path), dtype=float)
    if x.shape != (lat.n_nodes, 3):
        raise ValueError(f"path must have shape {(lat.n_nodes, 3)}, got {x.shape}")
    if lat.eta == 0.0 and _kernels.min_pair_distance(x) == 0.0:
        raise SingularPair("two nodes coincide and eta = 0")
    return float(_kernels.total_energy(x, lat.coupling_matrix, lat.eta ** 2))


def delta_energy(path, lat, i, x_new):
    """``H(path with x_i -> x_new) - H(path)`` in O(N)."""
    if i == lat.pin:
        raise PinnedNode(f"node {i} is pinned")
    if not 0 <= i < lat.n_nodes:
        raise IndexError(f"node {i} out of range")
    x = np.ascontiguousarray(_positions(path), dtype=float)
    y = np.asarray(x_new, dtype=float)
    return float(_kernels.site_delta(x, lat.coupling_matrix, lat.eta ** 2, int(i),
                                     y[0], y[1], y[2]))


# ---------------------------------------------------------------------------
# Moves


def brownian_path(lat, rng, size=None):
    """Brownian path(s) on the lattice pinned at the centre node."""
    shape = (lat.n_steps, 3) if size is None else (size, lat.n_steps, 3)
    steps = rng.standard_normal(shape) * np.sqrt(lat.dt)
    x = np.zeros(shape[:-2] + (lat.n_nodes, 3))
    x[..., 1:, :] = np.cumsum(steps, axis=-2)
    x -= x[..., lat.pin:lat.pin + 1, :]
    return x


def initial_state(lat, rng):
    x = brownian_path(lat, rng)
    return PathState(x, interaction_energy(x, lat))


def pcn_sweep(state, lat, cfg, rng):
    """``cfg.pcn_moves`` preconditioned Crank-Nicolson proposals on the whole path.

    The proposal ``sqrt(1 - beta^2) x + beta xi`` with a fresh pinned Brownian
    path ``xi`` preserves the prior, so acceptance is ``min(1, exp(kappa dH))``.
    """
    beta = cfg.pcn_beta
    keep = np.sqrt(1.0 - beta * beta)
    for _ in range(cfg.pcn_moves):
        proposal = keep * state.positions + beta * brownian_path(lat, rng)
        log_u = np.log(rng.random())
        h_new = interaction_energy(proposal, lat) if lat.kappa != 0 else state.energy
        state.stats["pcn"][1] += 1
        if log_u < lat.kappa * (h_new - state.energy):
            if lat.kappa == 0:
                h_new = interaction_energy(proposal, lat)
            state.positions = proposal
            state.energy = h_new
            state.stats["pcn"][0] += 1
    return state


def local_sweep(state, lat, cfg, rng):
    """One Metropolised Gaussian-bridge update of every free node."""
    z = rng.standard_normal((lat.n_nodes, 3))
    log_u = np.log(rng.random(lat.n_nodes))
    energy, accepted = _kernels.local_sweep(
        state.positions, lat.coupling_matrix, lat.eta ** 2, lat.kappa, lat.dt,
        lat.pin, cfg.local_width, z, log_u, state.energy)
    state.energy = float(energy)
    state.stats["local"][0] += int(accepted)
    state.stats["local"][1] += lat.n_nodes - 1
    return state


# ---------------------------------------------------------------------------
# Chains


def chain_rng(seed, chain_id):
    """Independent stream for ``(seed, chain_id)``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(chain_id),)))


def run_chain(lat, cfg, chain_id=0, debug=False):
    """Run a single chain and return its :class:`ChainOutput`."""
    rng = chain_rng(cfg.seed, chain_id)
    state = initial_state(lat, rng)
    trace = np.empty(cfg.n_sweeps)
    acc_trace = np.empty(cfg.n_sweeps)
    n_keep = (cfg.n_sweeps - cfg.burn_in) // cfg.thinning
    paths = np.empty((n_keep, lat.n_nodes, 3))
    kept = 0
    for sweep in range(cfg.n_sweeps):
        before = [sum(v) for v in zip(*state.stats.values())]
        if cfg.pcn_moves:
            pcn_sweep(state, lat, cfg, rng)
        local_sweep(state, lat, cfg, rng)
        trace[sweep] = state.energy
        after = [sum(v) for v in zip(*state.stats.values())]
        acc_trace[sweep] = (after[0] - before[0]) / max(after[1] - before[1], 1)
        if debug:
            full = interaction_energy(state, lat)
            assert abs(full - state.energy) <= 1e-8 * (1 + abs(full)), (full, state.energy)
        done = sweep + 1 - cfg.burn_in
        if done > 0 and done % cfg.thinning == 0 and kept < n_keep:
            paths[kept] = state.positions
            kept += 1
    # re-anchor the cached energy against accumulated round-off
    state.energy = interaction_energy(state, lat)
    acceptance = {k: (a / p if p else 1.0) for k, (a, p) in state.stats.items()}
    manifest = {"lattice": lat.params(), "sampler": cfg.params(), "chain_id": int(chain_id),
                "seed": int(cfg.seed), "n_samples": int(n_keep)}
    return ChainOutput(lat, cfg, int(chain_id), trace, acceptance, paths, manifest, acc_trace)


def sample_polaron(lat, cfg, debug=False):
    """Run ``cfg.n_chains`` independent chains; returns one :class:`ChainOutput` each."""
    outputs = []
    for c in range(cfg.n_chains):
        out = run_chain(lat, cfg, chain_id=c, debug=debug)
        logger.info("chain %d: <H>=%.4f acceptance=%s", c, out.mean_energy(), out.acceptance)
        outputs.append(out)
    return outputs


# ---------------------------------------------------------------------------
# Estimators of g(eps) and sigma^2(eps)


@dataclass
class FreeEnergyEstimate:
    """Thermodynamic-integration estimate of ``log Z / (2T)``."""

    g_hat: float
    stderr: float
    nodes: np.ndarray
    weights: np.ndarray
    integrand_mean: np.ndarray
    integrand_stderr: np.ndarray
    per_chain: np.ndarray
    lattice: dict

    def __iter__(self):
        yield self.g_hat
        yield self.stderr

    def to_dict(self):
        return {"g_hat": self.g_hat, "stderr": self.stderr, "nodes": self.nodes.tolist(),
                "weights": self.weights.tolist(),
                "integrand_mean": self.integrand_mean.tolist(),
                "integrand_stderr": self.integrand_stderr.tolist(),
                "per_chain": self.per_chain.tolist(), "lattice": self.lattice}


def kappa_quadrature(kappa_nodes=8):
    """Nodes and weights on [0, 1]: Gauss-Legendre for an int, trapezoid for a list."""
    if np.isscalar(kappa_nodes):
        x, w = np.polynomial.legendre.leggauss(int(kappa_nodes))
        return 0.5 * (x + 1.0), 0.5 * w
    nodes = np.sort(np.asarray(kappa_nodes, dtype=float))
    if nodes[0] < 0 or nodes[-1] > 1:
        raise ValueError("kappa nodes must lie in [0, 1]")
    if len(nodes) < 2 or nodes[0] != 0.0 or nodes[-1] != 1.0:
        raise ValueError("explicit kappa nodes must include both 0 and 1")
    w = np.zeros_like(nodes)
    gaps = np.diff(nodes)
    w[:-1] += 0.5 * gaps
    w[1:] += 0.5 * gaps
    return nodes, w


def thermo_integrate(lat, kappa_nodes=8, cfg=None, return_chains=False):
    """Estimate ``g = log Z / (2T)`` as ``(1/2T) int_0^1 E_kappa[H] d kappa``.

    Each chain id contributes one estimate (its own integrand values combined
    with the quadrature weights); the reported standard error is the
    between-chain spread over ``sqrt(n_chains)``.
    """
    cfg = SamplerConfig() if cfg is None else cfg
    nodes, weights = kappa_quadrature(kappa_nodes)
    means = np.empty((len(nodes), cfg.n_chains))
    chains = []
    for k, kappa in enumerate(nodes):
        outs = sample_polaron(lat.with_kappa(kappa), cfg)
        means[k] = [o.mean_energy() for o in outs]
        if return_chains:
            chains.append(outs)
        logger.info("kappa=%.4f  <H>/(2T)=%.5f", kappa, means[k].mean() / (2 * lat.T))
    per_chain = weights @ means / (2.0 * lat.T)
    n = cfg.n_chains
    stderr = float(np.std(per_chain, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    integrand = means / (2.0 * lat.T)
    est = FreeEnergyEstimate(
        g_hat=float(np.mean(per_chain)), stderr=stderr, nodes=nodes, weights=weights,
        integrand_mean=integrand.mean(axis=1),
        integrand_stderr=(integrand.std(axis=1, ddof=1) / np.sqrt(n) if n > 1
                          else np.full(len(nodes), np.nan)),
        per_chain=per_chain, lattice=lat.params())
    return (est, chains) if return_chains else est


def clt_variance(outputs, coordinate=None):
    """Per-axis variance of ``(omega(T) - omega(-T)) / sqrt(2T)``.

    Averaged over the three coordinates unless ``coordinate`` selects one.
    Returns ``(sigma2_hat, stderr)`` with the error from the spread between
    chains.
    """
    if len(outputs) < 2:
        raise InsufficientSamples("clt_variance needs at least two chains")
    per_chain = []
    for out in outputs:
        if out.n_samples < 2:
            raise InsufficientSamples(f"chain {out.chain_id} kept fewer than 2 samples")
        d = out.endpoint_displacement() / np.sqrt(2.0 * out.lattice.T)
        v = np.var(d, axis=0, ddof=1)
        per_chain.append(v.mean() if coordinate is None else v[coordinate])
    per_chain = np.asarray(per_chain)
    return float(per_chain.mean()), float(per_chain.std(ddof=1) / np.sqrt(len(per_chain)))


# ---------------------------------------------------------------------------
# Estimator front ends


class PolaronSampler(BaseEstimator):
    """Estimator-style front end for :func:`sample_polaron`.

    After ``fit`` the chains are in ``chains_`` and ``sigma2_`` /
    ``sigma2_stderr_`` hold the CLT variance estimate.
    """

    def __init__(self, T=8.0, n_steps=64, eps=1.0, eta=0.1, kernel="polaron", kappa=1.0,
                 pcn_beta=0.2, local_width=1.0, n_sweeps=2000, burn_in=500, thinning=5,
                 seed=0, n_chains=4, pcn_moves=1):
        self.T = T
        self.n_steps = n_steps
        self.eps = eps
        self.eta = eta
        self.kernel = kernel
        self.kappa = kappa
        self.pcn_beta = pcn_beta
        self.local_width = local_width
        self.n_sweeps = n_sweeps
        self.burn_in = burn_in
        self.thinning = thinning
        self.seed = seed
        self.n_chains = n_chains
        self.pcn_moves = pcn_moves

    def _lattice(self):
        return PathLattice(self.T, self.n_steps, self.eps, self.eta, self.kernel, self.kappa)

    def _config(self):
        return SamplerConfig(self.pcn_beta, self.local_width, self.n_sweeps, self.burn_in,
                             self.thinning, self.seed, self.n_chains, self.pcn_moves)

    def fit(self, X=None, y=None):
        self.lattice_ = self._lattice()
        self.chains_ = sample_polaron(self.lattice_, self._config())
        if len(self.chains_) >= 2:
            self.sigma2_, self.sigma2_stderr_ = clt_variance(self.chains_)
        return self

    def increments(self, lag, **kwargs):
        return np.concatenate([c.increments(lag, **kwargs) for c in self.chains_])


class FreeEnergyEstimator(PolaronSampler):
    """Thermodynamic integration over ``kappa``; sets ``g_hat_`` and ``stderr_``."""

    def __init__(self, T=8.0, n_steps=64, eps=1.0, eta=0.1, kernel="polaron", kappa=1.0,
                 pcn_beta=0.2, local_width=1.0, n_sweeps=2000, burn_in=500, thinning=5,
                 seed=0, n_chains=4, pcn_moves=1, kappa_nodes=8):
        super().__init__(T, n_steps, eps, eta, kernel, kappa, pcn_beta, local_width,
                         n_sweeps, burn_in, thinning, seed, n_chains, pcn_moves)
        self.kappa_nodes = kappa_nodes

    def fit(self, X=None, y=None):
        self.lattice_ = self._lattice()
        self.estimate_ = thermo_integrate(self.lattice_, self.kappa_nodes, self._config())
        self.g_hat_, self.stderr_ = self.estimate_
        return self

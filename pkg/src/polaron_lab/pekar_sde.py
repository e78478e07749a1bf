"""Euler-Maruyama simulation of the diffusion with generator 1/2 Lap + (grad psi / psi) . grad.

The drift is radial: ``b(|x|) x / |x|`` with ``b = (log psi)'`` from
:func:`polaron_lab.pekar.drift_field`.  Started from ``psi^2 dx`` the process
is stationary; its increments are what the path sampler is compared against.
:func:`girsanov_log_density` gives the log Radon-Nikodym derivative of its
path law against Brownian motion with the same start.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_count, check_finite_array, check_positive
from .diagnostics import IncrementSample
from .exceptions import LagTooLong, NonFinite, NonPositivePsi
from .pekar import drift_field, laplace_log_psi
from .radial import FOUR_PI, RadialFunction

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiffusionConfig:
    """Integrator settings.

    ``record_every`` thins the stored trajectory (every k-th Euler step is
    kept); ``block_size`` paths share one derived RNG stream.
    """

    dt: float = 1e-3
    n_steps: int = 1000
    n_paths: int = 1000
    seed: int = 0
    drift_clamp: float = 50.0
    record_every: int = 10
    block_size: int = 1024

    def __post_init__(self):
        check_positive(self.dt, "dt")
        check_positive(self.drift_clamp, "drift_clamp")
        check_count(self.n_steps, "n_steps")
        check_count(self.n_paths, "n_paths")
        check_count(self.record_every, "record_every")
        check_count(self.block_size, "block_size")
        if self.n_steps % self.record_every:
            raise ValueError("n_steps must be a multiple of record_every")

    @property
    def record_dt(self):
        return self.dt * self.record_every

    def params(self):
        return {"dt": self.dt, "n_steps": self.n_steps, "n_paths": self.n_paths,
                "seed": self.seed, "drift_clamp": self.drift_clamp,
                "record_every": self.record_every, "block_size": self.block_size}


@dataclass
class TrajectorySample:
    """Recorded trajectories stored as an origin plus recorded steps.

    ``positions`` is reconstructed as ``origin + cumsum(steps)``.  Keeping the
    steps makes increments independent of the origin bit for bit, so
    :meth:`shifted` leaves every increment unchanged exactly.
    """

    origin: np.ndarray          # (n_paths, 3)
    steps: np.ndarray           # (n_paths, n_records, 3)
    dt: float                   # time between recorded points
    source: str = "pekar"
    n_clamped: int = 0
    manifest: dict = field(default_factory=dict)

    @classmethod
    def from_positions(cls, positions, dt, source="pekar", **kwargs):
        positions = check_finite_array(positions, "positions", ndim=3)
        return cls(positions[:, 0, :].copy(), np.diff(positions, axis=1), dt, source, **kwargs)

    @property
    def n_paths(self):
        return self.origin.shape[0]

    @property
    def n_records(self):
        return self.steps.shape[1] + 1

    @property
    def times(self):
        return self.dt * np.arange(self.n_records)

    @property
    def positions(self):
        out = np.empty((self.n_paths, self.n_records, 3))
        out[:, 0] = self.origin
        out[:, 1:] = self.origin[:, None, :] + np.cumsum(self.steps, axis=1)
        return out

    def shifted(self, vector):
        return TrajectorySample(self.origin + np.asarray(vector, dtype=float), self.steps,
                                self.dt, self.source, self.n_clamped, dict(self.manifest))


# ---------------------------------------------------------------------------
# Radial helpers


def _radial_cdf(psi):
    grid = psi.grid
    x = np.concatenate([[0.0], grid.nodes])
    dens = np.concatenate([[0.0], FOUR_PI * grid.nodes ** 2 * psi.values ** 2])
    cdf = cumulative_simpson(dens, x=x, initial=0.0)
    cdf = np.maximum.accumulate(np.maximum(cdf, 0.0))
    return x, cdf / cdf[-1]


def radial_cdf(psi, r):
    """CDF of ``|X|`` under ``psi^2 dx`` evaluated at radii ``r``."""
    x, cdf = _radial_cdf(psi)
    return np.interp(r, x, cdf)


def sample_stationary_start(psi, rng, size=None):
    """Draw point(s) from ``psi^2(x) dx``: radius by inverse CDF, direction uniform."""
    if np.any(psi.values <= 0):
        raise NonPositivePsi("psi must be strictly positive")
    n = 1 if size is None else int(size)
    x, cdf = _radial_cdf(psi)
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    radius = np.interp(rng.random(n), cdf[keep], x[keep])
    direction = rng.standard_normal((n, 3))
    direction /= np.linalg.norm(direction, axis=1)[:, None]
    points = radius[:, None] * direction
    return points[0] if size is None else points


def _log_psi_function(psi):
    if np.any(psi.values <= 0):
        raise NonPositivePsi("psi must be strictly positive")
    tail = psi.tail_model
    log_tail = None if tail is None else (
        tail.r_start, lambda r: np.log(tail.amplitude) - tail.decay * r - np.log(r))
    return RadialFunction(psi.grid, np.log(psi.values), parity="even", tail=log_tail)


class _Drift:
    """Vectorised 3D drift ``b(|x|) x/|x|`` with clamping."""

    def __init__(self, psi, clamp, override=None):
        self.b = None if override == "zero" else drift_field(psi)
        self.clamp = clamp

    def __call__(self, X):
        if self.b is None:
            return np.zeros_like(X), 0
        r = np.sqrt(np.einsum("ij,ij->i", X, X))
        b = self.b(r)
        over = np.abs(b) > self.clamp
        n_clamped = int(np.count_nonzero(over))
        if n_clamped:
            b = np.clip(b, -self.clamp, self.clamp)
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(r > 0, b / r, 0.0)
        return scale[:, None] * X, n_clamped


# ---------------------------------------------------------------------------
# Simulation


def block_rng(seed, block):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(block),)))


def simulate_pekar(psi, cfg, start="stationary", drift=None):
    """Euler-Maruyama paths ``X_{k+1} = X_k + b(X_k) dt + sqrt(dt) xi_k``.

    Parameters
    ----------
    psi : WaveFunction
        Strictly positive on its nodes.
    cfg : DiffusionConfig
    start : {'stationary', 'origin'}
        Initial law ``psi^2 dx`` or the point mass at 0.
    drift : {None, 'zero'}
        ``'zero'`` switches the drift off (Brownian control).

    Returns
    -------
    TrajectorySample
        ``n_clamped`` counts drift evaluations that hit ``cfg.drift_clamp``.
    """
    if start not in ("stationary", "origin"):
        raise ValueError(f"unknown start {start!r}")
    field_ = _Drift(psi, cfg.drift_clamp, drift)
    n_rec = cfg.n_steps // cfg.record_every
    origin = np.empty((cfg.n_paths, 3))
    steps = np.empty((cfg.n_paths, n_rec, 3))
    sqdt = np.sqrt(cfg.dt)
    n_clamped = 0
    for block, lo in enumerate(range(0, cfg.n_paths, cfg.block_size)):
        hi = min(lo + cfg.block_size, cfg.n_paths)
        rng = block_rng(cfg.seed, block)
        if start == "stationary":
            X = sample_stationary_start(psi, rng, size=hi - lo)
        else:
            X = np.zeros((hi - lo, 3))
        origin[lo:hi] = X
        last = X.copy()
        for k in range(1, cfg.n_steps + 1):
            b, c = field_(X)
            n_clamped += c
            X = X + b * cfg.dt + sqdt * rng.standard_normal(X.shape)
            if k % cfg.record_every == 0:
                j = k // cfg.record_every - 1
                steps[lo:hi, j] = X - last
                last = X
    if not np.all(np.isfinite(steps)):
        raise NonFinite("trajectory blew up")
    if n_clamped:
        logger.warning("drift clamped %d times at |b| = %g", n_clamped, cfg.drift_clamp)
    source = "brownian" if drift == "zero" else "pekar"
    manifest = {"diffusion": cfg.params(), "start": start, "drift": drift or "psi"}
    return TrajectorySample(origin, steps, cfg.record_dt, source, n_clamped, manifest)


def simulate_ou(lam, cfg, start="stationary"):
    """Exact-in-law OU reference ``dX = -lam X dt + dW`` sampled on the record grid.

    Closed-form transition; used as the OU control in tests.
    """
    n_rec = cfg.n_steps // cfg.record_every
    h = cfg.record_dt
    a = np.exp(-lam * h)
    s = np.sqrt((1 - a * a) / (2 * lam))
    rng = block_rng(cfg.seed, 0)
    X = (rng.standard_normal((cfg.n_paths, 3)) / np.sqrt(2 * lam) if start == "stationary"
         else np.zeros((cfg.n_paths, 3)))
    origin = X.copy()
    steps = np.empty((cfg.n_paths, n_rec, 3))
    for j in range(n_rec):
        new = a * X + s * rng.standard_normal(X.shape)
        steps[:, j] = new - X
        X = new
    return TrajectorySample(origin, steps, h, "ou_test")


# ---------------------------------------------------------------------------
# Girsanov density


def girsanov_log_density(path, psi, dt):
    """Discretised log-density of the psi-diffusion path law against Brownian motion.

    ``G = log psi(x_N) - log psi(x_0) - 1/2 sum_k [Lap log psi + |grad log psi|^2](x_k) dt``
    with a left-point sum over ``k = 0..N-1``.  ``path`` is ``(N+1, 3)`` or a
    batch ``(n_paths, N+1, 3)``; a float or an array of floats is returned.
    """
    X = np.asarray(path, dtype=float)
    single = X.ndim == 2
    if single:
        X = X[None]
    log_psi = _log_psi_function(psi)
    lap = laplace_log_psi(psi)
    b = drift_field(psi)
    r = np.linalg.norm(X, axis=-1)
    body = r[:, :-1]
    integrand = lap(body.ravel()).reshape(body.shape) + b(body.ravel()).reshape(body.shape) ** 2
    G = (log_psi(r[:, -1]) - log_psi(r[:, 0])) - 0.5 * dt * integrand.sum(axis=1)
    if not np.all(np.isfinite(G)):
        raise NonFinite("log-density is not finite")
    return float(G[0]) if single else G


def brownian_girsanov(psi, n_paths, n_steps, dt, seed=0, observables=(), batch=2000):
    """Stream ``psi^2``-started Brownian paths and return ``G`` and observables.

    Each observable is a callable ``f(X0, X_end) -> (n,)``.  Returns
    ``(G, values)`` with ``values`` of shape ``(len(observables), n_paths)``.
    Paths are generated in batches and never stored whole.
    """
    log_psi = _log_psi_function(psi)
    lap = laplace_log_psi(psi)
    b = drift_field(psi)
    G = np.empty(n_paths)
    values = np.empty((len(observables), n_paths))
    sqdt = np.sqrt(dt)
    for block, lo in enumerate(range(0, n_paths, batch)):
        hi = min(lo + batch, n_paths)
        rng = block_rng(seed, block)
        X0 = sample_stationary_start(psi, rng, size=hi - lo)
        X = X0.copy()
        acc = np.zeros(hi - lo)
        for _ in range(n_steps):
            r = np.sqrt(np.einsum("ij,ij->i", X, X))
            acc += lap(r) + b(r) ** 2
            X = X + sqdt * rng.standard_normal(X.shape)
        r0 = np.linalg.norm(X0, axis=1)
        r1 = np.linalg.norm(X, axis=1)
        G[lo:hi] = log_psi(r1) - log_psi(r0) - 0.5 * dt * acc
        for m, f in enumerate(observables):
            values[m, lo:hi] = f(X0, X)
    return G, values


# ---------------------------------------------------------------------------
# Increments


def increments(traj, lags, stride=None):
    """Pooled increments ``X(t + lag) - X(t)`` for each lag in ``lags``.

    Start times run over the recorded grid with ``stride`` records between
    them (default: one per lag length, i.e. non-overlapping).  Increments are
    sums of stored steps, so they do not depend on the trajectory origin.
    """
    total = traj.dt * (traj.n_records - 1)
    out = []
    csum = np.concatenate([np.zeros((traj.n_paths, 1, 3)), np.cumsum(traj.steps, axis=1)],
                          axis=1)
    for lag in np.atleast_1d(lags):
        lag = float(lag)
        if lag > total + 1e-12:
            raise LagTooLong(f"lag {lag} exceeds simulated time {total}")
        k = lag / traj.dt
        if abs(k - round(k)) > 1e-9:
            raise ValueError(f"lag {lag} is not a multiple of the record spacing {traj.dt}")
        k = int(round(k))
        if k == 0:
            out.append(IncrementSample(0.0, np.zeros((traj.n_paths, 3)), traj.source))
            continue
        step = k if stride is None else int(stride)
        starts = np.arange(0, traj.n_records - k, step)
        d = csum[:, starts + k, :] - csum[:, starts, :]
        out.append(IncrementSample(lag, d.reshape(-1, 3), traj.source))
    return out


# ---------------------------------------------------------------------------
# Estimator front ends


class PekarDiffusion(BaseEstimator):
    """``fit(psi)`` simulates trajectories; results in ``trajectories_``."""

    def __init__(self, dt=1e-3, n_steps=1000, n_paths=1000, seed=0, drift_clamp=50.0,
                 record_every=10, start="stationary", drift=None):
        self.dt = dt
        self.n_steps = n_steps
        self.n_paths = n_paths
        self.seed = seed
        self.drift_clamp = drift_clamp
        self.record_every = record_every
        self.start = start
        self.drift = drift

    def fit(self, psi, y=None):
        psi = getattr(psi, "psi_", psi)
        cfg = DiffusionConfig(self.dt, self.n_steps, self.n_paths, self.seed,
                              self.drift_clamp, self.record_every)
        self.trajectories_ = simulate_pekar(psi, cfg, start=self.start, drift=self.drift)
        return self


class IncrementExtractor(TransformerMixin, BaseEstimator):
    """Transformer mapping a :class:`TrajectorySample` to increment samples."""

    def __init__(self, lags=(0.5, 1.0, 2.0, 3.0, 5.0), stride=None):
        self.lags = lags
        self.stride = stride

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return increments(X, self.lags, stride=self.stride)

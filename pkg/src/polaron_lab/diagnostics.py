"""Statistics comparing increment laws, free energies and localisation.

Everything here is a pure function of sample arrays plus an explicit seed.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from ._validation import check_points
from .exceptions import (InsufficientSamples, LagMismatch, LatticeMismatch,
                         NonFinite)


@dataclass
class IncrementSample:
    """Increments ``X(t + lag) - X(t)`` at one lag, shape ``(n, 3)``."""

    lag: float
    vectors: np.ndarray
    source: str = ""

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.vectors)):
            raise NonFinite("increment sample contains non-finite entries")
        if self.lag < 0:
            raise ValueError("lag must be >= 0")

    def __len__(self):
        return self.vectors.shape[0]


@dataclass
class MSDCurve:
    lags: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    source: str = ""

    def to_rows(self):
        return [{"lag": float(l), "msd": float(m), "stderr": float(s)}
                for l, m, s in zip(self.lags, self.mean, self.stderr)]


def msd_curve(samples, min_vectors=30):
    """Mean squared displacement ``E|dX|^2`` per lag with its standard error.

    The error treats the pooled vectors as independent; for overlapping or
    autocorrelated increments it is a lower bound.
    """
    lags, means, errs = [], [], []
    for s in sorted(samples, key=lambda s: s.lag):
        if len(s) < min_vectors:
            raise InsufficientSamples(f"lag {s.lag}: {len(s)} vectors < {min_vectors}")
        sq = np.einsum("ij,ij->i", s.vectors, s.vectors)
        lags.append(s.lag)
        means.append(sq.mean())
        errs.append(sq.std(ddof=1) / np.sqrt(len(sq)))
    source = samples[0].source if samples else ""
    return MSDCurve(np.array(lags), np.array(means), np.array(errs), source)


# ---------------------------------------------------------------------------
# Localisation functional


def gaussian_bump(width=1.0):
    def V(d):
        return np.exp(-0.5 * (d / width) ** 2)
    V.label = f"gaussian(width={width})"
    return V


def regularized_coulomb(eta=1.0):
    """``(eta^2 + d^2)^{-1/2} * eta`` scaled so that ``V(0) = 1``."""
    def V(d):
        return eta / np.sqrt(eta ** 2 + d ** 2)
    V.label = f"coulomb(eta={eta})"
    return V


def localization_functional(points, V=None, max_points=10_000, seed=0):
    """``int int V(y1 - y2) L(dy1) L(dy2)`` for the empirical measure ``L`` of ``points``.

    ``V`` is a radial profile ``d -> V(d)`` (default Gaussian bump of width 1).
    Above ``max_points`` a seeded uniform subsample is used.
    """
    pts = check_points(points)
    if pts.shape[0] < 1:
        raise InsufficientSamples("need at least one point")
    V = gaussian_bump() if V is None else V
    if pts.shape[0] > max_points:
        idx = np.random.default_rng(seed).choice(pts.shape[0], max_points, replace=False)
        pts = pts[idx]
    # differences only, so the value is translation invariant
    pts = pts - pts[0]
    total = 0.0
    for lo in range(0, pts.shape[0], 2000):
        total += V(cdist(pts[lo:lo + 2000], pts)).sum()
    return float(total / pts.shape[0] ** 2)


# ---------------------------------------------------------------------------
# Two-sample statistics


def _as_vectors(sample):
    return sample.vectors if isinstance(sample, IncrementSample) else check_points(sample)


def energy_distance(a, b, unbiased=False):
    """Energy distance ``2 E|X-Y| - E|X-X'| - E|Y-Y'|``.

    The default V-statistic is nonnegative and exactly zero for identical
    samples; ``unbiased=True`` gives the U-statistic (can be slightly
    negative).
    """
    x, y = _as_vectors(a), _as_vectors(b)
    n, m = len(x), len(y)
    dxy = cdist(x, y).mean()
    dxx = cdist(x, x).sum()
    dyy = cdist(y, y).sum()
    if unbiased:
        return float(2 * dxy - dxx / (n * (n - 1)) - dyy / (m * (m - 1)))
    return float(max(2 * dxy - dxx / n ** 2 - dyy / m ** 2, 0.0))


def _ks_statistic(a, b):
    a = np.sort(a)
    b = np.sort(b)
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / len(a)
    fb = np.searchsorted(b, grid, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


@dataclass
class TwoSampleResult:
    lag: float
    energy_distance: float
    ks_radial: float
    p_energy: float
    p_ks: float
    n_a: int
    n_b: int
    n_permutations: int

    def to_dict(self):
        return dict(self.__dict__)


def two_sample_distance(a, b, n_permutations=999, max_n=1000, seed=0, min_vectors=100):
    """Energy distance and radial KS statistic with permutation p-values.

    Both samples need at least ``min_vectors`` vectors.  Each sample is subsampled (seeded) to at most ``max_n`` vectors before
    testing.  p-values use the ``(1 + #{T_perm >= T}) / (1 + n_perm)`` rule.
    """
    if isinstance(a, IncrementSample) and isinstance(b, IncrementSample):
        if abs(a.lag - b.lag) > 1e-9:
            raise LagMismatch(f"lags differ: {a.lag} vs {b.lag}")
    lag = getattr(a, "lag", float("nan"))
    x, y = _as_vectors(a), _as_vectors(b)
    if min(len(x), len(y)) < max(min_vectors, 2):
        raise InsufficientSamples(
            f"two_sample_distance needs {min_vectors} vectors per sample, "
            f"got {len(x)} and {len(y)}")
    rng = np.random.default_rng(seed)
    if len(x) > max_n:
        x = x[rng.choice(len(x), max_n, replace=False)]
    if len(y) > max_n:
        y = y[rng.choice(len(y), max_n, replace=False)]
    n, m = len(x), len(y)
    pooled = np.concatenate([x, y])
    D = cdist(pooled, pooled)
    radii = np.linalg.norm(pooled, axis=1)

    def stat(labels):
        # labels: (N, P) boolean, True for group X
        A = labels.astype(float)
        B = 1.0 - A
        DA = D @ A
        DB = D @ B
        sxx = np.einsum("ip,ip->p", A, DA)
        syy = np.einsum("ip,ip->p", B, DB)
        sxy = np.einsum("ip,ip->p", A, DB)
        return 2 * sxy / (n * m) - sxx / n ** 2 - syy / m ** 2

    observed = np.zeros((n + m, 1), dtype=bool)
    observed[:n] = True
    e_obs = float(max(stat(observed)[0], 0.0))
    ks_obs = _ks_statistic(radii[:n], radii[n:])
    perms = np.stack([rng.permutation(n + m) < n for _ in range(n_permutations)], axis=1)
    e_perm = np.concatenate([stat(perms[:, lo:lo + 200])
                             for lo in range(0, n_permutations, 200)])
    ks_perm = np.array([_ks_statistic(radii[perms[:, p]], radii[~perms[:, p]])
                        for p in range(n_permutations)])
    p_e = (1 + np.count_nonzero(e_perm >= e_obs - 1e-12)) / (1 + n_permutations)
    p_ks = (1 + np.count_nonzero(ks_perm >= ks_obs - 1e-12)) / (1 + n_permutations)
    return TwoSampleResult(float(lag), e_obs, ks_obs, float(p_e), float(p_ks), n, m,
                           int(n_permutations))


def distance_to_reference(groups, reference, max_n=1000, seed=0):
    """Energy distance of each group (e.g. one chain's increments) to ``reference``.

    Returns ``(mean, stderr, per_group)`` using the unbiased statistic so that
    groups of equal size are comparable across settings.
    """
    rng = np.random.default_rng(seed)
    ref = _as_vectors(reference)
    if len(ref) > max_n:
        ref = ref[rng.choice(len(ref), max_n, replace=False)]
    values = []
    for g in groups:
        v = _as_vectors(g)
        if len(v) > max_n:
            v = v[rng.choice(len(v), max_n, replace=False)]
        values.append(energy_distance(v, ref, unbiased=True))
    values = np.asarray(values)
    se = values.std(ddof=1) / np.sqrt(len(values)) if len(values) > 1 else float("nan")
    return float(values.mean()), float(se), values


# ---------------------------------------------------------------------------
# Brownian scaling check


def rescaled_lattice_matches(lat_a, lat_b, rtol=1e-9):
    """True when run B's lattice is the Brownian rescaling of run A's.

    With ``s = lat_a.eps / lat_b.eps`` the map ``omega -> sqrt(s) omega(. / s)``
    carries A's discrete measure onto B's when ``T_b = s T_a``, the node
    counts agree, ``eta_b = sqrt(s) eta_a`` and ``kappa_b = kappa_a / sqrt(s)``.
    """
    if lat_a.kernel != "polaron" or lat_b.kernel != "polaron":
        return False
    s = lat_a.eps / lat_b.eps
    close = lambda p, q: abs(p - q) <= rtol * max(1.0, abs(q))  # noqa: E731
    return (lat_a.n_steps == lat_b.n_steps and close(lat_b.T, s * lat_a.T)
            and close(lat_b.eta, np.sqrt(s) * lat_a.eta)
            and close(lat_b.kappa, lat_a.kappa / np.sqrt(s)))


@dataclass
class ScalingReport:
    scale: float
    results: list
    level: float = 0.01
    rejections: int = 0
    passed: bool = True

    def to_dict(self):
        return {"scale": self.scale, "level": self.level, "rejections": self.rejections,
                "passed": self.passed, "results": [r.to_dict() for r in self.results]}


def scaling_identity_check(chains_a, chains_b, lags=(0.5, 1.0, 1.5), level=0.01,
                           n_permutations=999, max_n=1000, stride=None, seed=0,
                           rescale=True, allowed_rejections=0):
    """Compare rescaled increments of run A with run B at each lag (B's time units).

    A's increments at lag ``lag / s`` are multiplied by ``sqrt(s)``
    (``s = eps_a / eps_b``) and tested against B's increments at ``lag``.
    ``rescale=False`` keeps the time map but drops the spatial factor
    ``sqrt(s)`` (a deliberate mismatch).
    """
    lat_a, lat_b = chains_a[0].lattice, chains_b[0].lattice
    if rescale and not rescaled_lattice_matches(lat_a, lat_b):
        raise LatticeMismatch("run B's lattice is not the rescaled lattice of run A")
    s = lat_a.eps / lat_b.eps
    results = []
    for j, lag in enumerate(lags):
        lag_a = lag / s
        k_a = chains_a[0].lag_steps(lag_a)
        k_b = chains_b[0].lag_steps(lag)
        inc_a = np.concatenate([c.increments(lag_a, stride=stride or max(k_a, 1))
                                for c in chains_a])
        inc_b = np.concatenate([c.increments(lag, stride=stride or max(k_b, 1))
                                for c in chains_b])
        if rescale:
            inc_a = np.sqrt(s) * inc_a
        res = two_sample_distance(IncrementSample(lag, inc_a, "A"),
                                  IncrementSample(lag, inc_b, "B"),
                                  n_permutations=n_permutations, max_n=max_n,
                                  seed=seed + j)
        results.append(res)
    rejections = sum(r.p_energy < level for r in results)
    return ScalingReport(s, results, level, int(rejections), rejections <= allowed_rejections)


# ---------------------------------------------------------------------------
# Report


def trend_flag(values, stderrs, z=2.0):
    """Flag for a strictly decreasing sequence, each step exceeding ``z`` combined errors.

    Returns ``'pass'``, ``'fail'`` or ``'insufficient levels'``.
    """
    values = np.asarray(values, dtype=float)
    stderrs = np.asarray(stderrs, dtype=float)
    if len(values) < 2:
        return "insufficient levels"
    drops = values[:-1] - values[1:]
    bars = z * np.sqrt(stderrs[:-1] ** 2 + stderrs[1:] ** 2)
    return "pass" if np.all(drops > bars) else "fail"


@dataclass
class ComparisonReport:
    g0: float
    g_table: list
    sigma_table: list
    comparisons: list
    msd: dict = field(default_factory=dict)
    localization: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)

    def to_dict(self):
        return {"g0": self.g0, "g_table": self.g_table, "sigma_table": self.sigma_table,
                "comparisons": self.comparisons, "msd": self.msd,
                "localization": self.localization, "flags": self.flags, "seeds": self.seeds}


def assemble_report(solver, g_table, sigma_table=(), comparisons=(), msd=None,
                    localization=None, seeds=None, z=2.0):
    """Juxtapose ``g_hat(eps)`` with the solver's ``g0`` and increment distances.

    ``g_table`` rows are ``{'eps', 'g_hat', 'stderr'}`` in table order
    (decreasing eps); ``comparisons`` rows are ``{'eps', 'lag', 'distance',
    'stderr'}``.  Trend flags never raise.
    """
    if not g_table and not comparisons:
        raise ValueError("at least one eps level is required")
    g0 = float(getattr(solver, "g", solver))
    g_table = [dict(row) for row in g_table]
    for row in g_table:
        row["gap"] = abs(row["g_hat"] - g0)
    flags = {"g_trend": trend_flag([r["gap"] for r in g_table],
                                   [r["stderr"] for r in g_table], z)}
    by_lag = {}
    for row in comparisons:
        by_lag.setdefault(float(row["lag"]), []).append(row)
    for lag, rows in sorted(by_lag.items()):
        rows = sorted(rows, key=lambda r: -r["eps"])
        flags[f"distance_trend_lag_{lag:g}"] = trend_flag(
            [r["distance"] for r in rows], [r["stderr"] for r in rows], z)
    sigma_rows = [dict(r) for r in sigma_table]
    if sigma_rows:
        ok = all(r["sigma2"] - z * r["stderr"] <= 1.0 and r["sigma2"] + z * r["stderr"] > 0
                 for r in sigma_rows)
        flags["sigma2_in_unit_interval"] = "pass" if ok else "fail"
    return ComparisonReport(g0, g_table, sigma_rows, [dict(c) for c in comparisons],
                            msd or {}, localization or {}, flags, seeds or {})

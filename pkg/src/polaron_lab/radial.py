"""Radial grids, radial functions and shell quadrature.

All radial objects describe functions of ``|x|`` on R^3.  Integrals are taken
against the shell measure ``4 pi r^2 dr``.  The origin is never a node; it is
added implicitly as the left end of the quadrature interval, where the shell
density vanishes.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from ._validation import check_count, check_finite_array, check_positive
from .exceptions import AllZero, NonFinite

FOUR_PI = 4.0 * np.pi


def _simpson_weights(x):
    """Composite Simpson weights on a uniform node set ``x`` (exact for cubics).

    An odd number of intervals is closed with a Simpson 3/8 panel.
    """
    n_int = len(x) - 1
    h = x[1] - x[0]
    w = np.zeros(len(x))
    if n_int == 1:
        w[:] = h / 2.0
        return w
    if n_int % 2 == 0:
        m = n_int
    else:
        m = n_int - 3
    if m > 0:
        w[0:m + 1:2] += 2.0 * h / 3.0
        w[1:m:2] += 4.0 * h / 3.0
        w[0] -= h / 3.0
        w[m] -= h / 3.0
    if m < n_int:
        w[m:] += np.array([3.0, 9.0, 9.0, 3.0]) * h / 8.0
    return w


@dataclass(frozen=True)
class RadialGrid:
    """Strictly increasing radial nodes ``r_1 < ... < r_n = r_max`` with ``r_1 > 0``.

    Parameters
    ----------
    r_max : float
        Outer radius (last node).
    n_points : int
        Number of nodes.
    spacing : {'uniform', 'geometric'}
        Uniform nodes ``r_i = i r_max / n``; geometric nodes start at
        ``1e-4 r_max`` and grow by a constant ratio.
    """

    r_max: float = 20.0
    n_points: int = 2000
    spacing: str = "uniform"
    nodes: np.ndarray = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        check_positive(self.r_max, "r_max")
        check_count(self.n_points, "n_points", minimum=4)
        if self.spacing == "uniform":
            nodes = self.r_max * np.arange(1, self.n_points + 1) / self.n_points
        elif self.spacing == "geometric":
            nodes = np.geomspace(1e-4 * self.r_max, self.r_max, self.n_points)
        else:
            raise ValueError(f"unknown spacing {self.spacing!r}")
        nodes[-1] = self.r_max
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", self._shell_weights(nodes))

    def _shell_weights(self, r):
        # weights for the plain dr integral over [0, r_max]; the shell factor
        # 4 pi r^2 is applied in ``integrate``
        if self.spacing == "uniform":
            w = _simpson_weights(np.concatenate([[0.0], r]))
            return w[1:]
        # geometric: Simpson in s = log r (dr = r ds) on [r_1, r_max] plus the
        # inner ball [0, r_1] lumped on the first node (r^2 dr over it)
        s = np.log(r)
        w = _simpson_weights(s) * r
        w[0] += r[0] / 3.0
        return w

    @property
    def spacings(self):
        """Interval lengths ``h_i = r_{i+1} - r_i`` with ``r_0 = 0`` prepended."""
        return np.diff(np.concatenate([[0.0], self.nodes]))

    @property
    def wall(self):
        """Dirichlet wall one spacing beyond the last node."""
        return self.nodes[-1] + (self.nodes[-1] - self.nodes[-2])

    def integrate(self, values):
        """Return ``int_0^{r_max} 4 pi r^2 f(r) dr`` for node values ``f``."""
        values = np.asarray(values, dtype=float)
        return float(np.dot(self.weights, FOUR_PI * self.nodes ** 2 * values))

    def params(self):
        return {"r_max": float(self.r_max), "n_points": int(self.n_points),
                "spacing": self.spacing}


@dataclass(frozen=True)
class TailModel:
    """Exponential tail ``A exp(-kappa r) / r`` used beyond the fitted window."""

    amplitude: float
    decay: float
    r_start: float

    def value(self, r):
        return self.amplitude * np.exp(-self.decay * r) / r

    def log_derivative(self, r):
        return -self.decay - 1.0 / r

    def log_laplacian(self, r):
        # (log f)'' + (2/r)(log f)' for log f = log A - kappa r - log r
        return -2.0 * self.decay / r - 1.0 / r ** 2


def fit_tail(grid, values, window=(0.6, 0.8)):
    """Fit :class:`TailModel` to ``values`` on ``window`` (fractions of r_max).

    Nodes next to the Dirichlet wall are excluded from the fit because the
    wall bends the solution down.
    """
    r = grid.nodes
    lo, hi = window[0] * grid.r_max, window[1] * grid.r_max
    mask = (r >= lo) & (r <= hi) & (values > 0)
    if mask.sum() < 3:
        return None
    slope, intercept = np.polyfit(r[mask], np.log(r[mask] * values[mask]), 1)
    decay = max(-slope, 1e-8)
    return TailModel(float(np.exp(intercept)), float(decay), float(hi))


class RadialFunction:
    """Node values on a :class:`RadialGrid`, evaluable anywhere in ``[0, inf)``.

    Between nodes the function is interpolated by a monotone cubic (PCHIP)
    built on the mirrored node set ``(-r_n, ..., -r_1, r_1, ..., r_n)``;
    ``parity`` selects even or odd mirroring, so the value at the origin is
    the symmetric limit.  Past ``tail.r_start`` an optional tail callable
    takes over.
    """

    parity = "even"

    def __init__(self, grid, values, parity=None, tail=None):
        self.grid = grid
        self.values = check_finite_array(values, "values", ndim=1)
        if self.values.shape != grid.nodes.shape:
            raise ValueError(
                f"values has shape {self.values.shape}, grid has {grid.nodes.shape}")
        if parity is not None:
            self.parity = parity
        self.tail = tail
        self._interp = None

    def _build(self):
        r = self.grid.nodes
        sign = 1.0 if self.parity == "even" else -1.0
        xs = np.concatenate([-r[::-1], r])
        ys = np.concatenate([sign * self.values[::-1], self.values])
        self._interp = PchipInterpolator(xs, ys, extrapolate=True)

    def __call__(self, r):
        if self._interp is None:
            self._build()
        r = np.abs(np.asarray(r, dtype=float))
        out = self._interp(np.minimum(r, self.grid.r_max))
        if self.tail is not None:
            far = r > self.tail[0]
            if np.any(far):
                out = np.where(far, self.tail[1](np.where(far, r, 1.0)), out)
        return out

    def copy_with(self, values, **kwargs):
        kw = {"parity": self.parity, "tail": self.tail}
        kw.update(kwargs)
        return RadialFunction(self.grid, values, **kw)

    def __repr__(self):
        return (f"{type(self).__name__}(n_points={self.grid.n_points}, "
                f"r_max={self.grid.r_max}, parity={self.parity!r})")


class WaveFunction(RadialFunction):
    """Nonnegative radial wave function ``psi(|x|)`` normalised in L^2(R^3).

    ``tail_model`` (optional :class:`TailModel`) replaces the node values
    beyond ``tail_model.r_start``; solver outputs carry one because the
    Dirichlet wall distorts the last nodes.
    """

    def __init__(self, grid, values, tail_model=None):
        tail = None if tail_model is None else (tail_model.r_start, tail_model.value)
        super().__init__(grid, values, parity="even", tail=tail)
        if np.any(self.values < 0):
            raise ValueError("wave function values must be nonnegative")
        self.tail_model = tail_model

    @property
    def norm2(self):
        return self.grid.integrate(self.values ** 2)

    def with_tail(self):
        """Copy carrying an exponential tail fitted to the node values."""
        return WaveFunction(self.grid, self.values,
                            tail_model=fit_tail(self.grid, self.values))


def normalize(f):
    """Return ``|f| / ||f||_2`` under the shell measure as a :class:`WaveFunction`.

    Raises
    ------
    NonFinite
        If any node value is NaN or infinite.
    AllZero
        If the function vanishes identically.
    """
    values = np.asarray(f.values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise NonFinite("cannot normalise a function with non-finite values")
    grid = f.grid
    values = np.abs(values)
    norm2 = grid.integrate(values ** 2)
    if not norm2 > 0:
        raise AllZero("cannot normalise the zero function")
    return WaveFunction(grid, values / np.sqrt(norm2))


def gaussian_wavefunction(grid, lam):
    """Normalised Gaussian with density ``(lam/pi)^{3/2} exp(-lam r^2)``."""
    lam = check_positive(lam, "lam")
    r = grid.nodes
    return WaveFunction(grid, (lam / np.pi) ** 0.75 * np.exp(-0.5 * lam * r ** 2))

"""Radial solver for the Pekar (Choquard) maximisation problem.

The functional maximised over normalised radial ``psi`` is

    g(psi) = C(psi) - K(psi),
    C = int int psi^2(x) psi^2(y) / |x - y| dx dy,
    K = 1/2 int |grad psi|^2 dx.

Its Euler-Lagrange equation is ``-1/2 Lap psi - 2 Phi psi = mu psi`` with
``Phi = psi^2 * |x|^{-1}``.  The solver iterates the lowest eigenpair of that
linear problem (self-consistent field) with damping.  All radial operators
work on ``u = r psi`` so that no ``1/r`` factor is ever evaluated at 0.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.linalg import eigh_tridiagonal, solve_banded
from sklearn.base import BaseEstimator

from ._validation import check_count, check_interval, check_positive
from .exceptions import GridTooCoarse, NoConvergence, NonFinite, NonPositivePsi
from .radial import (FOUR_PI, RadialFunction, RadialGrid, WaveFunction,
                     fit_tail, gaussian_wavefunction, normalize)

logger = logging.getLogger(__name__)

#: optimal Gaussian trial exponent and its value 2 / (3 pi)
GAUSSIAN_TRIAL_EXPONENT = 8.0 / (9.0 * np.pi)
GAUSSIAN_TRIAL_BOUND = 2.0 / (3.0 * np.pi)


@dataclass
class PekarSolution:
    """Converged maximiser together with its energy split.

    ``g`` is always ``coulomb - kinetic``; ``mu`` is the Lagrange multiplier
    (lowest eigenvalue of the final linear problem).
    """

    psi: WaveFunction
    coulomb: float
    kinetic: float
    mu: float
    residual: float
    iterations: int

    @property
    def g(self):
        return self.coulomb - self.kinetic

    @property
    def virial_defect(self):
        """Relative violation ``|C - 2K| / C`` of the virial identity."""
        return abs(self.coulomb - 2.0 * self.kinetic) / self.coulomb

    @property
    def grid(self):
        return self.psi.grid


# ---------------------------------------------------------------------------
# Hartree potential and energies


def _padded(grid, values):
    return np.concatenate([[0.0], grid.nodes]), np.concatenate([[0.0], values])


def hartree_potential(psi, debug=False):
    """Coulomb potential ``Phi(r) = int psi^2(y) / |x - y| dy`` of a radial density.

    Uses the shell formula ``Phi(r) = q(r)/r + int_r^{r_max} 4 pi s psi^2(s) ds``
    with the enclosed mass ``q(r) = int_0^r 4 pi s^2 psi^2(s) ds``.

    With ``debug=True`` the result is checked against
    :func:`hartree_potential_bruteforce` on a few nodes, raising
    :class:`GridTooCoarse` on a relative disagreement above 1e-5.
    """
    grid = psi.grid
    r = grid.nodes
    rho = psi.values ** 2
    x, inner = _padded(grid, FOUR_PI * r ** 2 * rho)
    q = cumulative_simpson(inner, x=x, initial=0.0)[1:]
    _, outer_density = _padded(grid, FOUR_PI * r * rho)
    c = cumulative_simpson(outer_density, x=x, initial=0.0)
    outer = (c[-1] - c)[1:]
    phi = q / r + outer
    if not np.all(np.isfinite(phi)):
        raise NonFinite("Hartree potential is not finite")
    result = RadialFunction(grid, phi, tail=(grid.r_max, lambda s: 1.0 / s))
    if debug:
        idx = np.linspace(0, len(r) - 1, 5).astype(int)
        brute = hartree_potential_bruteforce(psi, r[idx])
        rel = np.max(np.abs(brute - phi[idx]) / phi[idx])
        if rel > 1e-5:
            raise GridTooCoarse(f"shell formula off by {rel:.2e} against 3D quadrature")
    return result


def hartree_potential_bruteforce(psi, radii, n_rho=1600, n_cos=96):
    """Direct 3D quadrature of ``int psi^2(y) / |x - y| dy`` at ``|x| = radii``.

    Spherical coordinates centred at the evaluation point turn the Coulomb
    kernel into the regular weight ``rho d rho``; the remaining angular
    integral is done by Gauss-Legendre.  Independent of the shell theorem.
    """
    grid = psi.grid
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    # cosine-graded angular nodes resolve the polar caps, where the density
    # sits when |x| is large
    v, wv = np.polynomial.legendre.leggauss(n_cos)
    v = 0.5 * (v + 1.0)
    c = -np.cos(np.pi * v)
    wc = 0.5 * wv * np.pi * np.sin(np.pi * v)
    g, wg = np.polynomial.legendre.leggauss(16)
    out = np.empty_like(radii)
    for k, r in enumerate(radii):
        # composite Gauss-Legendre over rho in [0, r + r_max]; psi vanishes beyond
        edges = np.linspace(0.0, r + grid.r_max, n_rho // 16 + 1)
        mid = 0.5 * (edges[1:] + edges[:-1])
        half = 0.5 * (edges[1:] - edges[:-1])
        rho = (mid[:, None] + half[:, None] * g[None, :]).ravel()
        w_rho = (half[:, None] * wg[None, :]).ravel()
        dist = np.sqrt(np.maximum(r ** 2 + rho[:, None] ** 2
                                  + 2.0 * r * rho[:, None] * c[None, :], 0.0))
        dens = np.where(dist <= grid.r_max, psi(dist) ** 2, 0.0)
        angular = 2.0 * np.pi * dens @ wc
        out[k] = np.sum(w_rho * rho * angular)
    return out


def _u_padded(psi):
    # u = r psi with u(0) = 0 and u(wall) = 0
    grid = psi.grid
    u = np.concatenate([[0.0], grid.nodes * psi.values, [0.0]])
    h = np.concatenate([grid.spacings, [grid.wall - grid.nodes[-1]]])
    return u, h


def kinetic_energy(psi):
    """``1/2 ||grad psi||^2 = 2 pi int (u')^2 dr`` by forward differences of ``u``."""
    u, h = _u_padded(psi)
    return float(2.0 * np.pi * np.sum(np.diff(u) ** 2 / h))


def energy(psi):
    """Return ``(C, K, g)`` for a normalised wave function.

    ``C = int 4 pi r^2 psi^2 Phi dr``, ``K = 1/2 ||grad psi||^2`` and
    ``g = C - K``.
    """
    phi = hartree_potential(psi)
    coulomb = psi.grid.integrate(psi.values ** 2 * phi.values)
    kinetic = kinetic_energy(psi)
    if not (np.isfinite(coulomb) and np.isfinite(kinetic)):
        raise NonFinite("energy evaluation produced non-finite values")
    return coulomb, kinetic, coulomb - kinetic


# ---------------------------------------------------------------------------
# Inner eigen-solve


def _tridiagonal(W, grid):
    """Symmetrised 3-point discretisation of ``-1/2 u'' + W u`` on the grid.

    Returns ``(diag, offdiag, mass)``; eigenvectors ``v`` of the symmetric
    matrix map back through ``u = v / sqrt(mass)``.
    """
    h = np.concatenate([grid.spacings, [grid.wall - grid.nodes[-1]]])
    h_left, h_right = h[:-1], h[1:]
    mass = 0.5 * (h_left + h_right)
    diag = 0.5 * (1.0 / h_left + 1.0 / h_right) / mass + W
    off = -0.5 / (h_right[:-1] * np.sqrt(mass[:-1] * mass[1:]))
    return diag, off, mass


def _sign_changes(v):
    big = np.abs(v) > 1e-8 * np.max(np.abs(v))
    s = np.sign(v[big])
    return int(np.count_nonzero(s[1:] != s[:-1]))


def ground_state_radial(W, grid, shift=None, tol=1e-13, max_iter=50):
    """Lowest eigenpair of ``-1/2 u'' + W u = e u`` with ``u(0) = 0 = u(wall)``.

    Shifted inverse power iteration on the tridiagonal operator.  Without a
    ``shift`` the starting shift is the lowest eigenvalue located by Sturm
    bisection; in the SCF loop the previous eigenvalue is passed instead.
    The wall sits one spacing beyond ``r_max`` so every node is interior.

    Returns
    -------
    e : float
    u : RadialFunction
        Nonnegative, odd-parity, normalised so that ``4 pi int u^2 dr = 1``.
    """
    W = np.asarray(W.values if isinstance(W, RadialFunction) else W, dtype=float)
    if W.shape != grid.nodes.shape or not np.all(np.isfinite(W)):
        raise NonFinite("potential must be finite on every node")
    diag, off, mass = _tridiagonal(W, grid)

    def lapack_lowest():
        return float(eigh_tridiagonal(diag, off, eigvals_only=True,
                                      select="i", select_range=(0, 0))[0])

    for attempt in range(2):
        sigma = lapack_lowest() if (shift is None or attempt == 1) else float(shift)
        sigma -= 1e-9 * max(1.0, abs(sigma))
        ab = np.zeros((3, len(diag)))
        ab[0, 1:] = off
        ab[1] = diag - sigma
        ab[2, :-1] = off
        v = np.sqrt(mass) * np.exp(-grid.nodes / max(grid.r_max / 10, 1.0))
        v /= np.linalg.norm(v)
        e_old = np.inf
        converged = False
        for _ in range(max_iter):
            y = solve_banded((1, 1), ab, v)
            v_new = y / np.linalg.norm(y)
            if np.dot(v_new, v) < 0:
                v_new = -v_new
            Av = diag * v_new
            Av[:-1] += off * v_new[1:]
            Av[1:] += off * v_new[:-1]
            e = float(np.dot(v_new, Av))
            delta = np.max(np.abs(v_new - v))
            v = v_new
            if abs(e - e_old) <= tol * max(1.0, abs(e)) and delta < 1e-10:
                converged = True
                break
            e_old = e
        if converged and _sign_changes(v) == 0:
            break
        if attempt == 1:
            raise NoConvergence(
                f"inverse iteration did not reach the ground state in {max_iter} steps",
                residual=float(delta), iterations=max_iter)
    u = np.abs(v) / np.sqrt(mass)
    u /= np.sqrt(FOUR_PI * np.dot(grid.weights, u ** 2))
    return e, RadialFunction(grid, u, parity="odd")


# ---------------------------------------------------------------------------
# Self-consistent field


def _scf_map(psi, shift=None):
    phi = hartree_potential(psi)
    e, u = ground_state_radial(-2.0 * phi.values, psi.grid, shift=shift)
    return normalize(RadialFunction(psi.grid, u.values / psi.grid.nodes)), e


def _mix(psi, new, damping):
    return normalize(RadialFunction(psi.grid, damping * new.values
                                    + (1.0 - damping) * psi.values))


def scf_step(psi, damping=0.7):
    """One damped fixed-point step: new ground state in ``W = -2 Phi[psi]``, mixed
    with ``psi`` by ``damping`` and renormalised."""
    check_interval(damping, "damping", 0.0, 1.0, closed_low=False)
    new, _ = _scf_map(psi)
    return _mix(psi, new, damping)


def _initial_guess(grid, init):
    if isinstance(init, WaveFunction):
        return normalize(init)
    if init is None or init == "gaussian":
        return gaussian_wavefunction(grid, GAUSSIAN_TRIAL_EXPONENT)
    if init == "hydrogenic":
        return normalize(RadialFunction(grid, np.exp(-grid.nodes)))
    raise ValueError(f"unknown init {init!r}")


def solve_pekar(grid=None, tol=1e-10, max_iter=500, init="gaussian", damping=0.7):
    """Maximise the Pekar functional on ``grid`` by damped SCF iteration.

    Parameters
    ----------
    grid : RadialGrid, optional
        Defaults to ``RadialGrid(20.0, 2000)``.
    tol : float
        Stop when the sup-norm change of ``psi`` between iterates is below it.
    max_iter : int
    init : {'gaussian', 'hydrogenic'} or WaveFunction
    damping : float in (0, 1]
        Mixing weight of the new iterate.  Halved whenever ``g`` decreases.

    Returns
    -------
    PekarSolution

    Raises
    ------
    NoConvergence
        After ``max_iter`` iterations; carries the last residual and the
        partial solution.
    """
    grid = RadialGrid() if grid is None else grid
    check_positive(tol, "tol")
    check_count(max_iter, "max_iter")
    check_interval(damping, "damping", 0.0, 1.0, closed_low=False)
    psi = _initial_guess(grid, init)
    g_old = energy(psi)[2]
    mix = damping
    shift = None
    residual = np.inf
    for it in range(1, max_iter + 1):
        new, shift = _scf_map(psi, shift)
        cand = _mix(psi, new, mix)
        g_new = energy(cand)[2]
        # halve the mixing while g drops by more than round-off
        while g_new < g_old - 1e-13 and mix > 1e-3:
            mix *= 0.5
            cand = _mix(psi, new, mix)
            g_new = energy(cand)[2]
        residual = float(np.max(np.abs(cand.values - psi.values)))
        psi, g_old = cand, g_new
        logger.debug("scf iteration %d: g=%.12f residual=%.3e mix=%.3g",
                     it, g_new, residual, mix)
        if residual < tol:
            break
    coulomb, kinetic, _ = energy(psi)
    psi = WaveFunction(grid, psi.values, tail_model=fit_tail(grid, psi.values))
    solution = PekarSolution(psi, coulomb, kinetic, shift, residual, it)
    if residual >= tol:
        raise NoConvergence(
            f"SCF did not converge in {max_iter} iterations (residual {residual:.3e})",
            residual=residual, iterations=it, partial=solution)
    return solution


# ---------------------------------------------------------------------------
# Drift and Laplacian of log psi


def _mirrored_log(psi):
    if np.any(psi.values <= 0):
        raise NonPositivePsi("psi must be strictly positive on every node")
    r = psi.grid.nodes
    logv = np.log(psi.values)
    return np.concatenate([-r[::-1], r]), np.concatenate([logv[::-1], logv])


def _second_derivative(y, x):
    h1 = x[1:-1] - x[:-2]
    h2 = x[2:] - x[1:-1]
    d2 = 2.0 * (h2 * y[:-2] - (h1 + h2) * y[1:-1] + h1 * y[2:]) / (h1 * h2 * (h1 + h2))
    return np.concatenate([[d2[0]], d2, [d2[-1]]])


def drift_field(psi):
    """Radial drift ``b(r) = d/dr log psi(r)``; the 3D drift is ``b(|x|) x / |x|``.

    Derivatives are second-order differences on the even extension of
    ``log psi`` through the origin.  Nodes past the wave function's tail
    model start use the tail's log-derivative.
    """
    xs, ys = _mirrored_log(psi)
    n = psi.grid.n_points
    b = np.gradient(ys, xs, edge_order=2)[n:]
    tail = psi.tail_model
    if tail is not None:
        far = psi.grid.nodes > tail.r_start
        b[far] = tail.log_derivative(psi.grid.nodes[far])
    if not np.all(np.isfinite(b)):
        raise NonFinite("drift is not finite")
    return RadialFunction(psi.grid, b, parity="odd",
                          tail=None if tail is None else (tail.r_start, tail.log_derivative))


def laplace_log_psi(psi):
    """``(Lap log psi)(r) = (log psi)'' + (2/r)(log psi)'`` on the nodes."""
    xs, ys = _mirrored_log(psi)
    n = psi.grid.n_points
    r = psi.grid.nodes
    first = np.gradient(ys, xs, edge_order=2)[n:]
    second = _second_derivative(ys, xs)[n:]
    lap = second + 2.0 * first / r
    tail = psi.tail_model
    if tail is not None:
        far = r > tail.r_start
        lap[far] = tail.log_laplacian(r[far])
    if not np.all(np.isfinite(lap)):
        raise NonFinite("Laplacian of log psi is not finite")
    return RadialFunction(psi.grid, lap, parity="even",
                          tail=None if tail is None else (tail.r_start, tail.log_laplacian))


# ---------------------------------------------------------------------------
# Estimator front end


class PekarSolver(BaseEstimator):
    """Estimator-style wrapper around :func:`solve_pekar`.

    ``fit`` takes no data; afterwards ``solution_``, ``psi_`` and ``g_`` are
    available, and ``predict(X)`` evaluates ``psi(|x|)`` at points ``X``.
    """

    def __init__(self, r_max=20.0, n_points=2000, spacing="uniform", tol=1e-10,
                 max_iter=500, init="gaussian", damping=0.7):
        self.r_max = r_max
        self.n_points = n_points
        self.spacing = spacing
        self.tol = tol
        self.max_iter = max_iter
        self.init = init
        self.damping = damping

    def fit(self, X=None, y=None):
        grid = RadialGrid(self.r_max, self.n_points, self.spacing)
        self.solution_ = solve_pekar(grid, tol=self.tol, max_iter=self.max_iter,
                                     init=self.init, damping=self.damping)
        self.psi_ = self.solution_.psi
        self.g_ = self.solution_.g
        return self

    def _radii(self, X):
        X = np.asarray(X, dtype=float)
        return np.linalg.norm(X, axis=-1) if X.ndim == 2 else np.abs(X)

    def predict(self, X):
        return self.psi_(self._radii(X))

    def drift(self, X):
        """3D drift ``grad psi / psi`` at points ``X`` of shape (n, 3)."""
        X = np.asarray(X, dtype=float)
        r = np.linalg.norm(X, axis=1)
        b = drift_field(self.psi_)(r)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[:, None] > 0, X / r[:, None], 0.0)
        return b[:, None] * unit

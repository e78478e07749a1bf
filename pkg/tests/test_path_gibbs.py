import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from oracles import brute_force_energy
from polaron_lab.exceptions import InsufficientSamples, PinnedNode, SingularPair
from polaron_lab.path_gibbs import (FreeEnergyEstimator, PathLattice, PolaronSampler,
                                    SamplerConfig, brownian_path, chain_rng, clt_variance,
                                    delta_energy, interaction_energy, kappa_quadrature,
                                    run_chain, sample_polaron, thermo_integrate)


def test_lattice_geometry():
    lat = PathLattice(2.0, 8)
    assert lat.dt == 0.5
    assert lat.times[0] == -2.0 and lat.times[-1] == pytest.approx(2.0)
    assert lat.times[lat.pin] == 0.0
    assert lat.weights.sum() == pytest.approx(4.0)
    assert lat.weights[0] == lat.weights[-1] == 0.25


@pytest.mark.parametrize("kwargs", [dict(T=-1.0, n_steps=8), dict(T=1.0, n_steps=7),
                                    dict(T=1.0, n_steps=8, eps=0.0),
                                    dict(T=1.0, n_steps=8, eta=-0.1),
                                    dict(T=1.0, n_steps=8, kernel="other")])
def test_lattice_validation(kwargs):
    with pytest.raises(ValueError):
        PathLattice(**kwargs)


@pytest.mark.parametrize("kernel", ["polaron", "mean_field"])
@given(seed=st.integers(0, 2 ** 32 - 1), eps=st.floats(0.2, 3.0), eta=st.floats(0.05, 1.0))
@settings(max_examples=15, deadline=None)
def test_energy_matches_bruteforce(kernel, seed, eps, eta):
    lat = PathLattice(1.5, 6, eps, eta, kernel)
    x = brownian_path(lat, np.random.default_rng(seed))
    ref = brute_force_energy(x, eps, 1.5, eta, kernel)
    assert interaction_energy(x, lat) == pytest.approx(ref, rel=1e-12)


@given(seed=st.integers(0, 2 ** 32 - 1), i=st.sampled_from([0, 1, 2, 4, 5, 6]))
@settings(max_examples=25, deadline=None)
def test_delta_energy_is_difference_of_totals(seed, i):
    lat = PathLattice(1.5, 6, 0.7, 0.2)
    rng = np.random.default_rng(seed)
    x = brownian_path(lat, rng)
    y = rng.standard_normal(3)
    moved = x.copy()
    moved[i] = y
    full = interaction_energy(moved, lat) - interaction_energy(x, lat)
    assert delta_energy(x, lat, i, y) == pytest.approx(full, abs=1e-12)


def test_pinned_node_cannot_move():
    lat = PathLattice(1.0, 4)
    with pytest.raises(PinnedNode):
        delta_energy(np.zeros((5, 3)), lat, lat.pin, np.ones(3))


def test_coincident_nodes_with_zero_eta():
    lat = PathLattice(1.0, 4, eta=0.0)
    with pytest.raises(SingularPair):
        interaction_energy(np.zeros((5, 3)), lat)


def test_sampler_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(n_sweeps=100, burn_in=100)
    with pytest.raises(ValueError):
        SamplerConfig(pcn_beta=0.0)
    with pytest.raises(ValueError):
        SamplerConfig(local_width=1.5)


def test_chain_invariants_in_debug_mode():
    lat = PathLattice(2.0, 16, 1.0, 0.1)
    cfg = SamplerConfig(n_sweeps=200, burn_in=50, thinning=5, n_chains=1, seed=3)
    out = run_chain(lat, cfg, debug=True)
    assert out.paths.shape == (30, 17, 3)
    assert np.all(out.paths[:, lat.pin] == 0.0)
    assert out.acceptance_trace.shape == (200,)
    assert np.all((out.acceptance_trace >= 0) & (out.acceptance_trace <= 1))
    assert out.manifest["seed"] == 3 and out.manifest["lattice"] == lat.params()


def test_prior_moves_always_accept():
    lat = PathLattice(2.0, 16, kappa=0.0)
    cfg = SamplerConfig(pcn_beta=0.3, n_sweeps=100, burn_in=10, n_chains=2)
    for out in sample_polaron(lat, cfg):
        assert out.acceptance == {"pcn": 1.0, "local": 1.0}
        assert np.all(out.acceptance_trace == 1.0)


def test_reproducible_and_independent_streams():
    lat = PathLattice(2.0, 8)
    cfg = SamplerConfig(n_sweeps=50, burn_in=10, n_chains=2, seed=9)
    a = sample_polaron(lat, cfg)
    b = sample_polaron(lat, cfg)
    assert np.array_equal(a[0].paths, b[0].paths)
    assert np.array_equal(a[1].energy_trace, b[1].energy_trace)
    assert not np.array_equal(a[0].paths, a[1].paths)
    x = chain_rng(9, 0).random(4)
    assert not np.array_equal(x, chain_rng(9, 1).random(4))
    assert not np.array_equal(x, chain_rng(10, 0).random(4))


def test_increments_and_lag_validation():
    lat = PathLattice(2.0, 8)
    out = run_chain(lat, SamplerConfig(n_sweeps=30, burn_in=10, thinning=2, n_chains=1))
    inc = out.increments(1.0)
    assert inc.shape == (out.n_samples * 7, 3)
    central = out.increments(1.0, window=(-1.0, 1.0))
    assert central.shape == (out.n_samples * 3, 3)
    with pytest.raises(ValueError):
        out.increments(0.3)


def test_kappa_quadrature():
    nodes, w = kappa_quadrature(8)
    assert w.sum() == pytest.approx(1.0)
    assert w @ nodes ** 7 == pytest.approx(1 / 8)
    nodes, w = kappa_quadrature([0.0, 0.5, 1.0])
    assert np.allclose(w, [0.25, 0.5, 0.25])
    with pytest.raises(ValueError):
        kappa_quadrature([0.2, 1.0])


def test_prior_clt_variance_is_one():
    lat = PathLattice(4.0, 16, kappa=0.0)
    outs = sample_polaron(lat, SamplerConfig(n_sweeps=3000, burn_in=10, thinning=1,
                                             n_chains=4, seed=1))
    s2, se = clt_variance(outs)
    assert abs(s2 - 1.0) < 3 * se + 0.02
    with pytest.raises(InsufficientSamples):
        clt_variance(outs[:1])


def test_thermodynamic_integration_matches_importance_sampling():
    lat = PathLattice(1.0, 4, 1.0, 0.5)
    rng = np.random.default_rng(2024)
    x = brownian_path(lat, rng, size=400_000)
    d = np.linalg.norm(x[:, :, None] - x[:, None, :], axis=-1)
    H = (lat.coupling_matrix / np.sqrt(lat.eta ** 2 + d ** 2)).sum(axis=(1, 2))
    w = np.exp(H - H.max())
    log_z = np.log(w.mean()) + H.max()
    g_ref = log_z / (2 * lat.T)
    g_ref_se = w.std() / w.mean() / np.sqrt(len(w)) / (2 * lat.T)
    est = thermo_integrate(lat, 8, SamplerConfig(n_sweeps=4000, burn_in=200, thinning=5,
                                                 n_chains=4, seed=5))
    assert abs(est.g_hat - g_ref) < 3 * np.hypot(est.stderr, g_ref_se)
    g_hat, stderr = est
    assert est.to_dict()["g_hat"] == g_hat and stderr > 0


def test_estimator_front_ends():
    s = PolaronSampler(T=2.0, n_steps=8, n_sweeps=100, burn_in=20, n_chains=2)
    assert clone(s).get_params()["T"] == 2.0
    s.fit()
    assert len(s.chains_) == 2 and s.sigma2_ > 0
    assert s.increments(0.5).shape[1] == 3
    f = FreeEnergyEstimator(T=1.0, n_steps=4, n_sweeps=200, burn_in=20, n_chains=2,
                            kappa_nodes=[0.0, 1.0]).fit()
    assert np.isfinite(f.g_hat_) and f.g_hat_ > 0

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ougauss import hilbert as hb
from ougauss import kernels as K
from ougauss import simulate as sim
from ougauss.errors import NotPSDError


@pytest.fixture(scope="module")
def gm_small():
    return hb.gram(K.fbm(0.6), hb.Grid(2.0, 40))


def test_factor_reproduces_gamma(gm_small):
    fac = sim.factor(gm_small)
    np.testing.assert_allclose(fac.L @ fac.L.T, gm_small.gamma, atol=1e-13)
    assert fac.jitter == 0.0
    assert np.allclose(fac.L, np.tril(fac.L))


def test_factor_of_zero_matrix(gm_small):
    z = hb.GramMatrix(gm_small.spec, gm_small.grid, np.zeros((40, 40)), gm_small.gamma1, gm_small.cell_weights)
    fac = sim.factor(z)
    assert not fac.L.any()


def test_factor_escalates_jitter_for_singular_gamma(gm_small):
    v = np.arange(1.0, 41.0)
    singular = hb.GramMatrix(gm_small.spec, gm_small.grid, np.outer(v, v), gm_small.gamma1, gm_small.cell_weights)
    fac = sim.factor(singular)
    assert fac.jitter > 0
    np.testing.assert_allclose(fac.L @ fac.L.T, np.outer(v, v), rtol=1e-6, atol=1e-6)


def test_factor_raises_on_indefinite_matrix(gm_small):
    bad = hb.GramMatrix(gm_small.spec, gm_small.grid, -np.eye(40), gm_small.gamma1, gm_small.cell_weights)
    with pytest.raises(NotPSDError, match="fbm:H=0.6"):
        sim.factor(bad)


def test_replication_streams_are_independent_of_order(gm_small):
    fac = sim.factor(gm_small)
    batch = sim.sample_increments_batch(fac, 11, [3, 0, 7])
    # same normals; the batched product may differ from the single one in the last ulp
    np.testing.assert_allclose(batch[0], sim.sample_increments(fac, 11, 3), rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(batch[2], sim.sample_increments(fac, 11, 7), rtol=1e-12, atol=1e-15)
    np.testing.assert_array_equal(sim.standard_normals(40, 11, [7])[0], sim.generator(11, 7).standard_normal(40))
    assert not np.array_equal(sim.sample_increments(fac, 11, 0), sim.sample_increments(fac, 12, 0))
    assert not np.array_equal(sim.sample_increments(fac, 11, 0, stream=1), sim.sample_increments(fac, 11, 0))


def test_increment_covariance_monte_carlo(gm_small):
    fac = sim.factor(gm_small)
    dg = sim.sample_increments_batch(fac, 5, range(20000))
    emp = dg.T @ dg / dg.shape[0]
    scale = np.sqrt(np.outer(np.diag(gm_small.gamma), np.diag(gm_small.gamma)))
    # each entry has standard error <= sqrt(2/N) relative to the diagonal scale
    assert np.max(np.abs(emp - gm_small.gamma) / scale) < 6 * np.sqrt(2 / 20000)


def test_ou_path_matches_convolution_formula(gm_small):
    grid = gm_small.grid
    theta = 1.4
    dg = sim.sample_increments(sim.factor(gm_small), 2, 0)
    path = sim.build_ou_path(dg, theta, grid)
    expected = [sum(np.exp(-theta * (grid.nodes[k] - grid.midpoints[i])) * dg[i] for i in range(k))
                for k in range(grid.n + 1)]
    np.testing.assert_allclose(path.x, expected, atol=1e-13)
    np.testing.assert_allclose(path.g[1:], np.cumsum(dg))
    assert path.x[0] == 0.0


def test_ou_path_converges_to_continuous_solution():
    # G(t) = t (deterministic) gives X_t = (1 - e^{-theta t}) / theta
    theta, T = 0.9, 3.0
    errs = []
    for n in (30, 60, 120):
        grid = hb.Grid(T, n)
        x = sim.build_ou_path(np.full(n, grid.dt), theta, grid).x
        errs.append(np.max(np.abs(x - (1 - np.exp(-theta * grid.nodes)) / theta)))
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_coarse_step_warns():
    grid = hb.Grid(10.0, 10)
    with pytest.warns(RuntimeWarning, match="refine"):
        sim.build_ou_path(np.zeros(10), 1.0, grid)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        sim.build_ou_path(np.zeros(10), 0.05, grid)


def test_build_rejects_wrong_length(gm_small):
    with pytest.raises(ValueError):
        sim.build_ou_path(np.zeros(7), 1.0, gm_small.grid)


def test_simulate_path_reproducible(gm_small):
    a = sim.simulate_path(gm_small, 1.0, seed=9, rep_index=4)
    b = sim.simulate_path(gm_small, 1.0, seed=9, rep_index=4)
    np.testing.assert_array_equal(a.x, b.x)
    assert a.seed == 9 and a.rep_index == 4


def test_chaos_i2_moments(gm_small):
    fac = sim.factor(gm_small)
    phi = hb.g_T(gm_small.grid, 1.0)
    dg = sim.sample_increments_batch(fac, 3, range(20000))
    v = sim.chaos_i2(phi, dg, gm_small)
    target = 2 * hb.norm_h_sq(phi, gm_small)
    assert abs(v.mean()) < 4 * np.sqrt(target / v.size)
    assert v.var() == pytest.approx(target, rel=0.06)
    assert sim.chaos_i2(phi, dg[0], gm_small) == pytest.approx(v[0])


def test_chaos_i2_shape_check(gm_small):
    with pytest.raises(ValueError):
        sim.chaos_i2(np.zeros((3, 3)), np.zeros(40), gm_small)


@settings(deadline=None, max_examples=20)
@given(seed=st.integers(0, 2**64 - 1), rep=st.integers(0, 10**6))
def test_generator_is_a_pure_function_of_seed_and_rep(seed, rep):
    a = sim.generator(seed, rep).standard_normal(5)
    b = sim.generator(seed, rep).standard_normal(5)
    np.testing.assert_array_equal(a, b)


@settings(deadline=None, max_examples=20)
@given(seed=st.integers(0, 2**32), scale=st.floats(0.1, 10.0))
def test_path_is_linear_in_the_noise(seed, scale):
    grid = hb.Grid(1.0, 16)
    dg = np.random.default_rng(seed).normal(size=16)
    x1 = sim.build_ou_path(dg, 1.0, grid).x
    x2 = sim.build_ou_path(scale * dg, 1.0, grid).x
    np.testing.assert_allclose(x2, scale * x1, rtol=1e-12, atol=1e-14)

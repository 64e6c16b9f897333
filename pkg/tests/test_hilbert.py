import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ougauss import hilbert as hb
from ougauss import kernels as K
from ougauss.errors import KernelDomainError


def brute_gamma(spec, grid):
    t = grid.nodes
    n = grid.n
    G = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            G[i, j] = (K.cov(spec, t[i + 1], t[j + 1]) - K.cov(spec, t[i + 1], t[j])
                       - K.cov(spec, t[i], t[j + 1]) + K.cov(spec, t[i], t[j]))
    return G


def brute_tensor_inner(phi, psi, G):
    n = G.shape[0]
    total = 0.0
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for m in range(n):
                    total += phi[i, j] * psi[k, m] * G[i, k] * G[j, m]
    return total


def brute_b_T(gm, theta):
    """(1/T) sum_k w_k ||u_k||^2 with u_k(i) = exp(-theta (t_k - m_i)) for cells i < k, O(n^3)."""
    grid = gm.grid
    total = 0.0
    for k in range(1, grid.n + 1):
        u = hb.exp_decay(grid, theta, grid.nodes[k])
        total += grid.weights[k] * hb.inner_h(u, u, gm)
    return total / grid.T


@pytest.mark.parametrize("spec", [K.fbm(0.6), K.subfbm(0.7), K.bifbm(0.9, 0.7)], ids=str)
def test_gram_is_double_increment(spec):
    grid = hb.Grid(3.0, 12)
    gm = hb.gram(spec, grid)
    np.testing.assert_allclose(gm.gamma, brute_gamma(spec, grid), rtol=0, atol=1e-13)


def test_gram_fbm_is_toeplitz_autocovariance():
    H = 0.6
    grid = hb.Grid(10.0, 64)
    gm = hb.gram(K.fbm(H), grid)
    k = np.abs(np.arange(64)[:, None] - np.arange(64)[None, :]).astype(float)
    rho = 0.5 * grid.dt ** (2 * H) * ((k + 1) ** (2 * H) + np.abs(k - 1) ** (2 * H) - 2 * k ** (2 * H))
    np.testing.assert_allclose(gm.gamma, rho, atol=1e-12)


@pytest.mark.parametrize("spec", [K.subfbm(0.6), K.gensubfbm(0.8, 0.8), K.bifbm(0.9, 0.7)], ids=str)
def test_gamma1_is_scaled_fbm_gram(spec):
    # the singular part alone is the mixed partial of C/(b(2b-1)) times an fBm covariance
    grid = hb.Grid(5.0, 40)
    b = spec.beta
    gm = hb.gram(spec, grid)
    ref = hb.gram(K.fbm(b), grid).gamma * spec.c_beta / (b * (2 * b - 1))
    np.testing.assert_allclose(gm.gamma1, ref, rtol=1e-10, atol=1e-14)


@pytest.mark.parametrize("spec", [K.subfbm(0.6), K.gensubfbm(0.8, 0.8), K.bifbm(0.9, 0.7), K.gensubfbm(0.45, 1.5)], ids=str)
def test_remainder_cells_bounded_by_majorant(spec):
    grid = hb.Grid(10.0, 50)
    gm = hb.gram(spec, grid)
    diff = np.abs(gm.gamma - gm.gamma1)
    assert np.all(diff <= gm.gamma2_majorant * (1 + 1e-9) + 1e-13)


def test_fbm_has_no_remainder():
    gm = hb.gram(K.fbm(0.7), hb.Grid(4.0, 30))
    np.testing.assert_allclose(gm.gamma, gm.gamma1, atol=1e-13)
    assert hb.norm_h2_sq(np.ones(30), gm) == 0.0


def test_tensor_inner_and_contraction_against_brute_force():
    rng = np.random.default_rng(1)
    gm = hb.gram(K.subfbm(0.65), hb.Grid(2.0, 5))
    phi, psi = rng.normal(size=(2, 5, 5))
    assert hb.inner_h2tensor(phi, psi, gm) == pytest.approx(brute_tensor_inner(phi, psi, gm.gamma), rel=1e-12)
    G = gm.gamma
    c = np.einsum("aj,jl,bl->ab", phi, G, psi)
    np.testing.assert_allclose(hb.contract1(phi, psi, gm), c, rtol=1e-12)


def test_rank_one_tensor_norm_factorises():
    gm = hb.gram(K.fbm(0.6), hb.Grid(3.0, 20))
    f = np.linspace(1, 2, 20)
    g = np.cos(np.arange(20.0))
    assert hb.norm_h_sq(np.outer(f, g), gm) == pytest.approx(hb.norm_h_sq(f, gm) * hb.norm_h_sq(g, gm))


def test_shape_errors():
    gm = hb.gram(K.fbm(0.6), hb.Grid(1.0, 4))
    with pytest.raises(ValueError):
        hb.inner_h(np.ones(3), np.ones(4), gm)
    with pytest.raises(ValueError):
        hb.contract1(np.ones((4, 3)), np.ones((4, 4)), gm)


def test_grid_validation():
    with pytest.raises(KernelDomainError):
        hb.Grid(0.0, 10)
    with pytest.raises(KernelDomainError):
        hb.Grid(1.0, 0)
    with pytest.raises(KernelDomainError):
        hb.Grid.from_step(1.0, 0.3)
    g = hb.Grid.from_step(40.0, 0.02)
    assert g.n == 2000 and g.weights.sum() == pytest.approx(40.0)


def test_single_cell_grid():
    gm = hb.gram(K.fbm(0.6), hb.Grid(2.0, 1))
    assert gm.gamma[0, 0] == pytest.approx(2.0 ** 1.2)


@pytest.mark.parametrize("spec", [K.fbm(0.6), K.subfbm(0.6), K.gensubfbm(0.8, 0.8)], ids=str)
@pytest.mark.parametrize("theta", [0.7, 1.0, 2.0])
def test_b_T_against_direct_sum(spec, theta):
    gm = hb.gram(spec, hb.Grid(4.0, 40))
    assert hb.b_T(gm, theta) == pytest.approx(brute_b_T(gm, theta), rel=1e-11)


def test_alpha_T_identity():
    gm = hb.gram(K.subfbm(0.6), hb.Grid(5.0, 100))
    mom = hb.ou_moments(gm, 1.3)
    assert mom.alpha_T == pytest.approx(0.5 * mom.q[-1] + 1.3 * 5.0 * mom.b_T)
    b_half, _ = mom.at(50)
    assert b_half == pytest.approx(hb.b_T(hb.gram(K.subfbm(0.6), hb.Grid(2.5, 50)), 1.3), rel=1e-12)


def test_forward_mean_is_sum_of_cross_terms():
    gm = hb.gram(K.fbm(0.6), hb.Grid(2.0, 20))
    theta = 1.0
    mom = hb.ou_moments(gm, theta)
    # E[x_k dg_k] = <u_k, 1_{cell k}> with u_k the kernel of x_k
    direct = sum(hb.inner_h(hb.exp_decay(gm.grid, theta, gm.grid.nodes[k]), np.eye(20)[k], gm) for k in range(20))
    assert mom.forward_mean == pytest.approx(direct, rel=1e-12)


def test_occupation_kernel_matches_definition_and_g_T():
    grid = hb.Grid(3.0, 30)
    theta = 1.2
    w = grid.weights
    U = np.array([hb.exp_decay(grid, theta, grid.nodes[k]) for k in range(grid.n + 1)])
    direct = (U.T * w) @ U / grid.T
    np.testing.assert_allclose(hb.occupation_kernel(grid, theta), direct, rtol=1e-12, atol=1e-15)
    errs = []
    for n in (50, 100, 200):
        g = hb.Grid(3.0, n)
        errs.append(np.max(np.abs(hb.occupation_kernel(g, theta) - hb.g_T(g, theta))))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.01


def test_exponential_kernel_relation():
    grid = hb.Grid(6.0, 60)
    theta = 0.8
    lhs = 2 * theta * grid.T * hb.g_T(grid, theta)
    np.testing.assert_allclose(lhs, hb.f_T(grid, theta) - hb.h_T(grid, theta), atol=1e-14)
    assert np.allclose(hb.f_T(grid, theta), hb.f_T(grid, theta).T)


def test_b_T_converges_to_ergodic_limit():
    spec, theta = K.fbm(0.6), 1.0
    a = K.ergodic_limit(spec, theta)
    gaps = [abs(hb.b_T(hb.gram(spec, hb.Grid(T, 40 * int(T))), theta) - a) for T in (5, 10, 20)]
    assert gaps[0] > gaps[1] > gaps[2]


def test_refine_reports_convergence():
    r = hb.refine(lambda gm: hb.b_T(gm, 1.0), K.fbm(0.6), 5.0, 400)
    assert r.converged and r.rel_change < 1e-3
    rough = hb.refine(lambda gm: hb.b_T(gm, 1.0), K.fbm(0.6), 5.0, 2, rtol=1e-6)
    assert not rough.converged


theta_st = st.floats(0.3, 3.0)


@settings(deadline=None, max_examples=25)
@given(H=st.floats(0.52, 0.74), T=st.sampled_from([1.0, 3.0, 10.0]), theta=theta_st)
def test_norm_sandwich_property(H, T, theta):
    gm = hb.gram(K.subfbm(H), hb.Grid(T, 48))
    for phi in (hb.f_T(gm.grid, theta), hb.h_T(gm.grid, theta)):
        gap = abs(hb.norm_h_sq(phi, gm) - hb.norm_h1_sq(phi, gm))
        bound = hb.norm_h2_sq(phi, gm) + 2 * gm.spec.c_beta_prime * hb.norm_h1_sq(hb.k_operator(phi, gm), gm)
        assert gap <= bound * (1 + 1e-9) + 1e-12


@settings(deadline=None, max_examples=25)
@given(H=st.floats(0.52, 0.95), seed=st.integers(0, 2**32 - 1))
def test_gram_positive_semidefinite(H, seed):
    gm = hb.gram(K.subfbm(H), hb.Grid(5.0, 32))
    v = np.random.default_rng(seed).normal(size=32)
    assert hb.inner_h(v, v, gm) >= -1e-12
    assert np.linalg.eigvalsh(gm.gamma).min() >= -1e-12 * np.trace(gm.gamma)


@settings(deadline=None, max_examples=25)
@given(seed=st.integers(0, 2**32 - 1))
def test_contraction_is_bilinear_and_symmetric_for_symmetric_kernels(seed):
    rng = np.random.default_rng(seed)
    gm = hb.gram(K.fbm(0.6), hb.Grid(2.0, 8))
    a = rng.normal(size=(8, 8))
    a = a + a.T
    c = hb.contract1(a, a, gm)
    np.testing.assert_allclose(c, c.T, atol=1e-12)
    assert hb.inner_h2tensor(a, a, gm) >= -1e-12


def test_forward_sum_mean_monte_carlo():
    from ougauss import simulate as sim

    gm = hb.gram(K.fbm(0.6), hb.Grid(10.0, 512))
    theta = 1.0
    mom = hb.ou_moments(gm, theta)
    dg = sim.sample_increments_batch(sim.factor(gm), 21, range(20000))
    decay, gain = sim.ou_coefficients(gm.grid, theta)
    from ougauss import _accel

    x = _accel.ou_paths(dg, decay, gain)
    fwd = np.einsum("rk,rk->r", x[:, :-1], dg)
    assert abs(fwd.mean() - mom.forward_mean) < 3 * fwd.std(ddof=1) / np.sqrt(fwd.size)
    # alpha_T is the mean of X_T^2/2 + theta int X^2, which is not the forward sum
    pathwise = 0.5 * x[:, -1] ** 2 + theta * (x**2 @ gm.grid.weights)
    assert abs(pathwise.mean() - mom.alpha_T) < 3 * pathwise.std(ddof=1) / np.sqrt(pathwise.size)
    assert abs(mom.alpha_T - mom.forward_mean) > 10 * pathwise.std(ddof=1) / np.sqrt(pathwise.size)


def test_alpha_T_small_and_large_horizon():
    spec, theta = K.fbm(0.6), 1.0
    # near zero X_T is essentially G_T, so alpha_T ~ E G_T^2 / 2 = T^(2H) / 2
    for T in (1e-2, 1e-3, 1e-4):
        assert hb.alpha_T(hb.gram(spec, hb.Grid(T, 64)), theta) == pytest.approx(0.5 * T**1.2, rel=0.02)
    a = K.ergodic_limit(spec, theta)
    ratios = [hb.alpha_T(hb.gram(spec, hb.Grid(T, 50 * int(T))), theta) / T for T in (10, 20, 40)]
    gaps = [abs(r - theta * a) for r in ratios]
    assert gaps[0] > gaps[1] > gaps[2]

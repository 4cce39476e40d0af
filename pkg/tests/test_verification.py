import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdfo.rewards import NotDifferentiable, RewardSpec
from fdfo.verification import (LinearFlowOracle, analytic_gaussian_velocity, ascent_statistic,
                               finite_difference_jacobian, flow_completion, gaussian_std, jacobian_psd_stat,
                               marginal_check, prototype_oracle_step, random_small_net, sampler_degeneracy,
                               stein_check)
from fdfo.velocity_model import VelocityNet

LINEAR_B = RewardSpec("linear", coef=(1.0, 0.0))


def test_analytic_velocity_examples():
    x = np.array([[0.7], [-2.0]])
    np.testing.assert_allclose(analytic_gaussian_velocity(x, 1.0, 0.5), x)
    np.testing.assert_allclose(analytic_gaussian_velocity(x, 0.0, 2.0), -x)
    assert not analytic_gaussian_velocity(x, 0.5, 1.0).any()
    assert not analytic_gaussian_velocity(np.zeros((3, 1)), 0.3, 0.7).any()
    with pytest.raises(ValueError):
        analytic_gaussian_velocity(x, 1.2, 1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0.2, 3.0))
def test_analytic_velocity_is_conditional_mean(t, sigma_d):
    # regression of (eps - x0) on x_t for jointly Gaussian variables
    cov = t - (1 - t) * sigma_d**2
    slope = cov / gaussian_std(t, sigma_d) ** 2
    assert analytic_gaussian_velocity(np.array([[1.0]]), t, sigma_d)[0, 0] == pytest.approx(slope, rel=1e-12)


def test_gaussian_std_endpoints():
    assert gaussian_std(0.0, 0.3) == pytest.approx(0.3)
    assert gaussian_std(1.0, 0.3) == pytest.approx(1.0)


@pytest.mark.parametrize("gamma", [0.0, 0.05, 0.2])
def test_marginals_preserved_with_exact_transport(gamma):
    rep = marginal_check(1.0, gamma, 10_000, 40, np.random.default_rng(11))
    assert rep.passed and rep.z_var.shape == (41,)


def test_broken_mixer_is_detected():
    rep = marginal_check(1.0, 0.2, 10_000, 40, np.random.default_rng(11), break_mixer=True)
    assert not rep.passed and rep.max_z > 10


def test_zero_gamma_ignores_broken_mixer():
    # the mixer is never called with a positive gamma when there is no stochasticity
    rep = marginal_check(0.5, 0.0, 10_000, 20, np.random.default_rng(2), break_mixer=True)
    assert rep.passed


def test_marginal_check_rejects_unknown_integrator():
    with pytest.raises(ValueError):
        marginal_check(1.0, 0.0, 100, 4, np.random.default_rng(0), integrator="rk4")


def test_stein_identity_on_identity_flow():
    oracle = LinearFlowOracle(np.eye(2), LINEAR_B, 0.1)
    rep = stein_check(oracle, 200_000, np.random.default_rng(0))
    np.testing.assert_allclose(rep.analytic, [0.01, 0.0])
    assert rep.max_z < 4


def test_stein_constant_reward_gives_zero():
    oracle = LinearFlowOracle(np.eye(2), RewardSpec("linear", coef=(0.0, 0.0)), 0.1)
    rep = stein_check(oracle, 10_000, np.random.default_rng(0))
    assert not rep.estimate.any() and not rep.analytic.any()


def test_stein_baseline_constant_only_adds_noise():
    oracle = LinearFlowOracle(np.array([[2.0, 1.0], [0.0, 1.0]]), LINEAR_B, 0.1)
    rep = stein_check(oracle, 400_000, np.random.default_rng(5), baseline=3.0)
    assert rep.max_z < 4


def test_stein_radial_reward():
    # radial reward: smoothing a quadratic keeps its gradient at the mean
    oracle = LinearFlowOracle(np.array([[1.0, 0.5], [0.0, 1.5]]), RewardSpec("radial", center=(0.0, 0.0)), 0.1)
    rep = stein_check(oracle, 400_000, np.random.default_rng(6), x=np.array([1.0, -1.0]))
    assert rep.max_z < 4


def test_stein_oracle_validation():
    with pytest.raises(ValueError):
        LinearFlowOracle(np.ones((2, 3)), LINEAR_B, 0.1)
    with pytest.raises(ValueError):
        LinearFlowOracle(np.eye(2), LINEAR_B, 0.0)
    with pytest.raises(ValueError):
        LinearFlowOracle(np.eye(2), RewardSpec("sigmoid_halfplane", direction=(1.0, 0.0)), 0.1)
    with pytest.raises(ValueError):
        stein_check(LinearFlowOracle(np.eye(2), LINEAR_B, 0.1), 100, np.random.default_rng(0))


def test_prototype_linear_oracle_mean():
    # linear reward: each sample is (b^T A d)(b^T A A d) with d ~ N(0, s^2 I), so the mean is s^2 b^T A^3 b
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    b = np.array([1.0, -1.0])
    s = 0.1
    oracle = LinearFlowOracle(A, RewardSpec("linear", coef=tuple(b)), s)
    rep = prototype_oracle_step(oracle, 200_000, np.random.default_rng(0))
    expected = s**2 * b @ A @ A @ A @ b
    assert abs(rep.mean - expected) < 4 * rep.stderr
    assert rep.z > 5


def test_ascent_statistic_rejects_non_differentiable():
    oracle = LinearFlowOracle(np.eye(2), LINEAR_B, 0.1)
    with pytest.raises(NotDifferentiable):
        ascent_statistic(oracle.flow, RewardSpec("mode_indicator", modes=((0.0, 0.0),), preferred=(0,)),
                         np.zeros((3, 2)), 0.1, np.random.default_rng(0))


def test_jacobian_of_zero_net_is_identity():
    net = VelocityNet.initialize(2, 3, np.random.default_rng(0))  # zero output layer: the flow is the identity
    grid = np.linspace(1, 0, 11)
    f = flow_completion(net, grid, 3, 1)
    J = finite_difference_jacobian(f, np.array([0.3, -0.2]))
    np.testing.assert_allclose(J, np.eye(2), atol=1e-10)
    assert jacobian_psd_stat(f, np.array([0.3, -0.2])) == pytest.approx(1.0, abs=1e-10)


def test_jacobian_stat_of_linear_map():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    stat = jacobian_psd_stat(lambda x: x @ A.T, np.zeros(2))
    assert stat == pytest.approx(np.linalg.eigvalsh(A).min(), rel=1e-9)
    # antisymmetric parts do not count
    R = np.array([[1.0, 3.0], [-3.0, 1.0]])
    assert jacobian_psd_stat(lambda x: x @ R.T, np.zeros(2)) == pytest.approx(1.0, rel=1e-9)
    with pytest.raises(ValueError):
        jacobian_psd_stat(lambda x: x, np.zeros(2), h=0.0)


def test_sampler_degeneracy_on_random_nets():
    rng = np.random.default_rng(3)
    for _ in range(5):
        net = random_small_net(rng)
        eps = rng.standard_normal((4, net.dim))
        assert sampler_degeneracy(net, eps, rng.integers(0, net.n_conditions, 4), 10)

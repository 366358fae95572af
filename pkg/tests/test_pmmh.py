import numpy as np
import pytest

from helpers import exact_marginal_mh, mcmc_se, scalar_kalman_loglik

from smclab import (
    LinearGaussianSSM,
    ParametricSSM,
    PmmhConfig,
    PmmhState,
    ProposalKernel,
    pmmh_step,
    run_pmmh,
    simulate,
)
from smclab.filtering import FilterConfig
from smclab.pmmh import _INNER_RESAMPLING, _pf_loglik
from smclab.filtering import run_filter


def lg_family(V=1.0, R=1.0):
    def builder(theta):
        return LinearGaussianSSM(
            F=[[theta[0]]], V=[[V]], H=[[1.0]], R=[[R]], m0=[0.0], P0=[[1.0]]
        )

    def prior(theta):
        return 0.0 if -1.0 < theta[0] < 1.0 else -np.inf

    return ParametricSSM(builder, prior, theta_dim=1)


@pytest.fixture(scope="module")
def dataset():
    model = LinearGaussianSSM(F=[[0.7]], V=[[1.0]], H=[[1.0]], R=[[1.0]], m0=[0.0], P0=[[1.0]])
    _, ys = simulate(model, 20, np.random.default_rng(42))
    return ys


class TestInnerFilter:
    def test_fast_loglik_matches_run_filter_bitwise(self, dataset):
        family = lg_family()
        model = family.build(np.array([0.6]))
        cfg = FilterConfig(40, resampling=_INNER_RESAMPLING)
        for seed in range(8):
            fast = _pf_loglik(model, dataset, 40, np.random.default_rng(seed))
            slow = run_filter(model, dataset, cfg, np.random.default_rng(seed)).total_loglik
            assert fast == slow


class TestPmmhStep:
    def test_zero_prior_always_rejected(self, dataset):
        family = lg_family()
        cur = PmmhState(np.array([0.99]), log_lik=-30.0, log_prior=0.0)
        # proposal pushed far outside the prior support
        prop = ProposalKernel(
            sampler=lambda rng, th: th + 1.0, logdensity=lambda a, b: 0.0
        )
        for seed in range(20):
            out = pmmh_step(cur, family, dataset, prop, PmmhConfig(5),
                            np.random.default_rng(seed))
            np.testing.assert_array_equal(out.theta, cur.theta)
            assert out.iteration == 1

    def test_better_estimate_at_same_theta_always_accepted(self, dataset):
        family = lg_family()
        # stored estimate is far worse than any fresh one: ratio >= 1
        cur = PmmhState(np.array([0.7]), log_lik=-1e6, log_prior=0.0)
        prop = ProposalKernel(sampler=lambda rng, th: th.copy(),
                              logdensity=lambda a, b: 0.0)
        for seed in range(20):
            out = pmmh_step(cur, family, dataset, prop, PmmhConfig(5),
                            np.random.default_rng(seed))
            assert out.log_lik > -1e5

    def test_degenerate_filter_counts_as_rejection(self):
        def builder(theta):
            return LinearGaussianSSM(
                F=[[theta[0]]], V=[[1.0]], H=[[1.0]], R=[[1.0]], m0=[0.0], P0=[[1.0]]
            )

        class DoomedModel(LinearGaussianSSM):
            def obs_logpdf(self, states, y):
                return np.full(states.shape[0], -np.inf)

        family = ParametricSSM(
            lambda th: DoomedModel(
                F=[[th[0]]], V=[[1.0]], H=[[1.0]], R=[[1.0]], m0=[0.0], P0=[[1.0]]
            ),
            lambda th: 0.0,
            theta_dim=1,
        )
        cur = PmmhState(np.array([0.5]), log_lik=-10.0, log_prior=0.0)
        prop = ProposalKernel(sampler=lambda rng, th: th + 0.01,
                              logdensity=lambda a, b: 0.0)
        ys = np.zeros((3, 1))
        with pytest.warns(RuntimeWarning, match="degenerated"):
            out = pmmh_step(cur, family, ys, prop, PmmhConfig(5), np.random.default_rng(0))
        np.testing.assert_array_equal(out.theta, cur.theta)


class TestRunPmmh:
    def test_zero_iterations_empty_chain(self, dataset):
        chain = run_pmmh(lg_family(), dataset, ProposalKernel.gaussian_random_walk(0.2),
                         0, 0, PmmhConfig(5), np.random.default_rng(0), [0.5])
        assert chain.thetas.shape == (0, 1)
        assert chain.acceptance_rate == 0.0

    def test_seeded_rerun_is_bit_identical(self, dataset):
        kw = dict(n_iters=300, burn_in=50)
        a = run_pmmh(lg_family(), dataset, ProposalKernel.gaussian_random_walk(0.2),
                     kw["n_iters"], kw["burn_in"], PmmhConfig(10),
                     np.random.default_rng(7), [0.5])
        b = run_pmmh(lg_family(), dataset, ProposalKernel.gaussian_random_walk(0.2),
                     kw["n_iters"], kw["burn_in"], PmmhConfig(10),
                     np.random.default_rng(7), [0.5])
        assert np.array_equal(a.thetas, b.thetas)
        assert np.array_equal(a.log_liks, b.log_liks)
        assert a.acceptance_rate == b.acceptance_rate

    def test_acceptance_rate_interior(self, dataset):
        chain = run_pmmh(lg_family(), dataset, ProposalKernel.gaussian_random_walk(0.15),
                         2000, 200, PmmhConfig(30), np.random.default_rng(3), [0.5])
        assert 0.0 < chain.acceptance_rate < 1.0

    def test_store_paths(self, dataset):
        chain = run_pmmh(lg_family(), dataset, ProposalKernel.gaussian_random_walk(0.2),
                         20, 0, PmmhConfig(10, store_paths=True),
                         np.random.default_rng(5), [0.5])
        assert chain.paths is not None and len(chain.paths) == 20
        assert chain.paths[0].shape == (21, 1)

    def test_single_particle_chain_matches_oracle(self, dataset):
        # N=1 still leaves the exact posterior invariant, just mixes worse
        family = lg_family()
        chain = run_pmmh(family, dataset, ProposalKernel.gaussian_random_walk(0.35),
                         40_000, 4_000, PmmhConfig(1), np.random.default_rng(9), [0.3])
        oracle = exact_marginal_mh(
            loglik=lambda th: scalar_kalman_loglik(th, 1.0, 1.0, 1.0, 0.0, 1.0, dataset),
            prior_logpdf=lambda th: 0.0 if -1 < th < 1 else -np.inf,
            init_theta=0.3, scale=0.25, n_iters=40_000, burn_in=4_000,
            rng=np.random.default_rng(10),
        )
        se = np.hypot(mcmc_se(chain.thetas[:, 0]), mcmc_se(oracle))
        assert abs(chain.thetas[:, 0].mean() - oracle.mean()) < 3.5 * se


class TestDetailedBalance:
    def test_flow_symmetry_on_three_point_space(self, dataset):
        # discrete parameter space {0.2, 0.5, 0.8}, proposal = uniform over the others
        values = np.array([0.2, 0.5, 0.8])

        def sampler(rng, th):
            cur = int(np.argmin(np.abs(values - th[0])))
            other = [i for i in range(3) if i != cur]
            return np.array([values[other[rng.integers(0, 2)]]])

        prop = ProposalKernel(sampler=sampler, logdensity=lambda a, b: np.log(0.5))
        family = lg_family()
        chain = run_pmmh(family, dataset, prop, 25_000, 1000, PmmhConfig(10),
                         np.random.default_rng(11), [0.5])
        labels = np.argmin(np.abs(chain.thetas[:, 0][:, None] - values[None, :]), axis=1)
        flows = np.zeros((3, 3))
        for a, b in zip(labels[:-1], labels[1:]):
            flows[a, b] += 1
        for i in range(3):
            for j in range(i + 1, 3):
                diff = abs(flows[i, j] - flows[j, i])
                se = np.sqrt(flows[i, j] + flows[j, i])
                assert diff <= 4 * max(se, 1.0)

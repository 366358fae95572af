import numpy as np
import pytest

from helpers import enumerate_hmm, joint_gaussian_smoother, scalar_kalman_loglik

from smclab import (
    DegenerateModelError,
    DiscreteBelief,
    FiniteHMM,
    GaussianBelief,
    LinearGaussianSSM,
    NumericalError,
    hmm_backward_smooth,
    hmm_forward,
    kalman_predict,
    kalman_smoother,
    kalman_update,
    run_kalman_filter,
    simulate,
)


class TestBeliefs:
    def test_gaussian_belief_symmetrizes(self):
        b = GaussianBelief([0.0, 0.0], [[1.0, 0.2 + 5e-11], [0.2, 1.0]])
        np.testing.assert_allclose(b.cov, b.cov.T)

    def test_gaussian_belief_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            GaussianBelief([0.0, 0.0], [[1.0, 0.5], [0.1, 1.0]])

    def test_gaussian_belief_rejects_negative(self):
        with pytest.raises(ValueError):
            GaussianBelief([0.0], [[-1.0]])

    def test_discrete_belief_normalization(self):
        with pytest.raises(ValueError):
            DiscreteBelief([0.5, 0.4])


class TestKalmanPredict:
    def test_identity(self):
        b = GaussianBelief([1.0], [[2.0]])
        out = kalman_predict(b, np.eye(1), np.zeros((1, 1)))
        assert out.mean[0] == 1.0 and out.cov[0, 0] == 2.0

    def test_scalar_formula(self):
        out = kalman_predict(GaussianBelief([1.0], [[2.0]]), [[0.5]], [[1.0]])
        assert out.mean[0] == pytest.approx(0.5)
        assert out.cov[0, 0] == pytest.approx(1.5)

    def test_forgetting(self):
        out = kalman_predict(GaussianBelief([3.0], [[2.0]]), [[0.0]], [[1.3]])
        assert out.mean[0] == 0.0 and out.cov[0, 0] == pytest.approx(1.3)


class TestKalmanUpdate:
    def test_confident_prior_ignores_data(self):
        b = GaussianBelief([1.0], [[0.0]])
        out, _ = kalman_update(b, [5.0], [[1.0]], [[1.0]])
        assert out.mean[0] == pytest.approx(1.0)
        assert out.cov[0, 0] == pytest.approx(0.0, abs=1e-15)

    def test_scalar_gain_half(self):
        b = GaussianBelief([0.0], [[1.0]])
        out, inc = kalman_update(b, [2.0], [[1.0]], [[1.0]])
        assert out.mean[0] == pytest.approx(1.0)
        assert out.cov[0, 0] == pytest.approx(0.5)
        # evidence N(2; 0, 2)
        assert inc == pytest.approx(-0.5 * (np.log(2 * np.pi * 2.0) + 4.0 / 2.0))

    def test_uninformative_observation(self):
        b = GaussianBelief([0.7], [[1.0]])
        out, _ = kalman_update(b, [100.0], [[1.0]], [[1e8]])
        assert abs(out.mean[0] - 0.7) < 1e-6

    def test_non_pd_innovation(self):
        b = GaussianBelief([0.0], [[0.0]])
        with pytest.raises(NumericalError):
            kalman_update(b, [0.0], [[1.0]], [[0.0]])


@pytest.fixture
def scalar_model():
    return LinearGaussianSSM(F=[[0.8]], V=[[0.5]], H=[[1.0]], R=[[0.4]], m0=[0.2], P0=[[1.0]])


class TestKalmanFilterSmoother:
    def test_evidence_matches_joint_gaussian(self, scalar_model):
        rng = np.random.default_rng(0)
        _, ys = simulate(scalar_model, 20, rng)
        res = run_kalman_filter(scalar_model, ys)
        _, _, log_ev = joint_gaussian_smoother(0.8, 0.5, 1.0, 0.4, 0.2, 1.0, ys)
        assert res.total_log_evidence == pytest.approx(log_ev, abs=1e-8)

    def test_matches_textbook_scalar_recursion(self, scalar_model):
        rng = np.random.default_rng(1)
        _, ys = simulate(scalar_model, 15, rng)
        res = run_kalman_filter(scalar_model, ys)
        assert res.total_log_evidence == pytest.approx(
            scalar_kalman_loglik(0.8, 0.5, 1.0, 0.4, 0.2, 1.0, ys), abs=1e-10
        )

    def test_smoother_against_joint_conditioning(self, scalar_model):
        rng = np.random.default_rng(2)
        _, ys = simulate(scalar_model, 5, rng)
        res = run_kalman_filter(scalar_model, ys)
        smoothed = kalman_smoother(res, scalar_model.F)
        means, variances, _ = joint_gaussian_smoother(0.8, 0.5, 1.0, 0.4, 0.2, 1.0, ys)
        for n in range(6):
            assert smoothed[n].mean[0] == pytest.approx(means[n], abs=1e-8)
            assert smoothed[n].cov[0, 0] == pytest.approx(variances[n], abs=1e-8)

    def test_smoother_empty_series(self, scalar_model):
        res = run_kalman_filter(scalar_model, np.empty((0, 1)))
        smoothed = kalman_smoother(res, scalar_model.F)
        assert smoothed[0].mean[0] == pytest.approx(0.2)

    def test_static_state_smoothed_means_constant(self):
        model = LinearGaussianSSM(F=[[1.0]], V=[[0.0]], H=[[1.0]], R=[[1.0]], m0=[0.0], P0=[[1.0]])
        rng = np.random.default_rng(3)
        _, ys = simulate(model, 6, rng)
        res = run_kalman_filter(model, ys)
        smoothed = kalman_smoother(res, model.F)
        final = smoothed[-1].mean[0]
        for b in smoothed:
            assert b.mean[0] == pytest.approx(final, rel=1e-12)

    def test_singular_prediction_warns_and_falls_back(self):
        model = LinearGaussianSSM(F=[[1.0]], V=[[0.0]], H=[[1.0]], R=[[1.0]], m0=[0.5], P0=[[0.0]])
        res = run_kalman_filter(model, np.array([[0.9], [0.1]]))
        with pytest.warns(RuntimeWarning, match="pseudo-inverse"):
            smoothed = kalman_smoother(res, model.F)
        for b in smoothed:
            assert b.mean[0] == pytest.approx(0.5)

    def test_covariances_stay_psd(self):
        model = LinearGaussianSSM(
            F=[[0.99, 0.1], [0.0, 0.95]],
            V=[[1e-8, 0.0], [0.0, 1.0]],
            H=[[1.0, 0.0]],
            R=[[1e-6]],
            m0=[0.0, 0.0],
            P0=np.eye(2),
        )
        rng = np.random.default_rng(4)
        _, ys = simulate(model, 40, rng)
        res = run_kalman_filter(model, ys)
        for b in res.filtered + res.predicted:
            vals = np.linalg.eigvalsh(b.cov)
            assert vals.min() >= -1e-10
            np.testing.assert_allclose(b.cov, b.cov.T)


@pytest.fixture
def hmm3():
    return FiniteHMM.with_gaussian_emissions(
        [0.2, 0.5, 0.3],
        [[0.7, 0.2, 0.1], [0.15, 0.7, 0.15], [0.1, 0.3, 0.6]],
        means=[-2.0, 0.0, 2.0],
        sds=[1.0, 1.0, 1.0],
    )


class TestHmmForwardBackward:
    def test_single_state(self):
        hmm = FiniteHMM.with_gaussian_emissions([1.0], [[1.0]], [0.5], [1.0])
        ys = np.array([[0.1], [0.7], [-0.3]])
        beliefs, loglik = hmm_forward(hmm, ys)
        assert all(b.probs[0] == pytest.approx(1.0) for b in beliefs)
        direct = sum(float(hmm.emission_logpdf_all(y)[0]) for y in ys)
        assert loglik == pytest.approx(direct, rel=1e-12)

    def test_uninformative_emissions_keep_prior(self):
        hmm = FiniteHMM.with_gaussian_emissions(
            [0.3, 0.7], np.eye(2), means=[0.0, 0.0], sds=[1.0, 1.0]
        )
        beliefs, _ = hmm_forward(hmm, np.array([[0.2], [0.4]]))
        for b in beliefs:
            np.testing.assert_allclose(b.probs, [0.3, 0.7], rtol=1e-12)

    def test_two_state_enumeration(self, ):
        hmm = FiniteHMM.with_gaussian_emissions(
            [0.4, 0.6], [[0.9, 0.1], [0.25, 0.75]], means=[-1.0, 1.5], sds=[0.8, 1.2]
        )
        rng = np.random.default_rng(5)
        _, ys = simulate(hmm, 3, rng)
        emit = np.array([hmm.emission_logpdf_all(y) for y in ys])
        exp_filt, exp_smooth, exp_ll = enumerate_hmm(
            hmm.init_probs, hmm.trans_matrix, emit
        )
        beliefs, loglik = hmm_forward(hmm, ys)
        smoothed = hmm_backward_smooth(hmm, ys)
        assert loglik == pytest.approx(exp_ll, abs=1e-12)
        for n in range(4):
            np.testing.assert_allclose(beliefs[n].probs, exp_filt[n], atol=1e-12)
            np.testing.assert_allclose(smoothed[n].probs, exp_smooth[n], atol=1e-12)

    def test_three_state_longer_enumeration(self, hmm3):
        rng = np.random.default_rng(6)
        _, ys = simulate(hmm3, 8, rng)
        emit = np.array([hmm3.emission_logpdf_all(y) for y in ys])
        exp_filt, exp_smooth, exp_ll = enumerate_hmm(
            hmm3.init_probs, hmm3.trans_matrix, emit
        )
        beliefs, loglik = hmm_forward(hmm3, ys)
        smoothed = hmm_backward_smooth(hmm3, ys)
        assert loglik == pytest.approx(exp_ll, abs=1e-12)
        for n in range(9):
            np.testing.assert_allclose(beliefs[n].probs, exp_filt[n], atol=1e-12)
            np.testing.assert_allclose(smoothed[n].probs, exp_smooth[n], atol=1e-12)

    def test_impossible_observation_raises(self):
        hmm = FiniteHMM.with_categorical_emissions(
            [0.5, 0.5], [[0.5, 0.5], [0.5, 0.5]], [[1.0, 0.0], [1.0, 0.0]]
        )
        with pytest.raises(DegenerateModelError, match="step 1"):
            hmm_forward(hmm, np.array([[1.0]]))

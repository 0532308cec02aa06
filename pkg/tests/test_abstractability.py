import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maxent_abstraction.abstractability import (
    MinEntropyMixture,
    MixtureModel,
    TargetDensity,
    abstractability_score,
    candidate_portfolio,
    fit_divergence,
    fit_min_entropy_mixture,
    spike_mixture,
)
from maxent_abstraction.exceptions import ToleranceUnreachable
from maxent_abstraction.maxent import StateSpace, shannon_entropy


def gaussian_target(means, stds, weights=None, start=-6.0, stop=6.0, step=0.1):
    k = len(means)
    w = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, float)
    return TargetDensity.from_mixture(StateSpace.grid(start, stop, step), w, means, stds)


class TestTypes:
    def test_target_needs_increasing_grid(self):
        with pytest.raises(ValueError):
            TargetDensity.from_columns([0.0, 0.0, 1.0], [0.3, 0.3, 0.4])

    def test_mixture_weights_normalized(self):
        with pytest.raises(ValueError):
            MixtureModel(np.array([0.5, 0.6]), np.zeros(2), np.ones(2))

    def test_mixture_rejects_negative_std(self):
        with pytest.raises(ValueError):
            MixtureModel(np.array([1.0]), np.zeros(1), np.array([-1.0]))

    def test_pmf_is_normalized(self):
        x = np.linspace(-5, 5, 101)
        mix = MixtureModel(np.array([0.3, 0.7]), np.array([-1.0, 2.0]), np.array([0.5, 1.0]))
        assert mix.pmf(x).sum() == pytest.approx(1.0, abs=1e-12)

    def test_spike_solution_is_exact(self, rng):
        w = rng.dirichlet(np.ones(20))
        target = TargetDensity.from_columns(np.arange(20.0), w)
        spikes = spike_mixture(target)
        np.testing.assert_allclose(spikes.pmf(target.coordinates), w, atol=1e-15)
        assert fit_divergence(target, spikes) == pytest.approx(0.0, abs=1e-14)


class TestScore:
    def test_single_gaussian(self):
        target = gaussian_target([0.0], [1.0])
        rep = abstractability_score(target, 10, 1e-3)
        assert rep.score < 0.05
        # the one-component fit meets the tolerance directly
        single = MixtureModel(np.array([1.0]), np.array([0.0]), np.array([1.0]))
        assert fit_divergence(target, single) <= 1e-3

    def test_two_bumps(self):
        target = gaussian_target([-3.0, 3.0], [0.5, 0.5])
        rep = abstractability_score(target, 10, 1e-3)
        assert abs(rep.score - np.log(2)) < 0.05

    @pytest.mark.parametrize("m", [1, 2, 4])
    def test_equal_separated_components(self, m):
        means = 12.0 * (np.arange(m) - (m - 1) / 2)
        target = gaussian_target(means, np.ones(m), start=means[0] - 8, stop=means[-1] + 8, step=0.25)
        rep = abstractability_score(target, 10, 1e-3)
        assert abs(rep.score - np.log(m)) < 0.05

    def test_eight_spikes(self):
        x = np.arange(40.0)
        w = np.zeros(40)
        w[::5] = 1 / 8
        target = TargetDensity.from_columns(x, w)
        rep = abstractability_score(target, 8, 1e-3)
        assert rep.entropy_bound == pytest.approx(np.log(8), abs=1e-12)
        assert rep.score == pytest.approx(np.log(8), abs=1e-9)

    def test_monotone_in_eps(self):
        target = gaussian_target([-2.0, 0.5, 3.0], [0.6, 0.4, 0.8], [0.5, 0.3, 0.2])
        portfolio = candidate_portfolio(target, 6)
        scores = [abstractability_score(target, 6, eps, candidates=portfolio).score for eps in (1e-4, 1e-3, 1e-2)]
        assert scores[0] >= scores[1] >= scores[2]

    def test_report_invariants(self):
        target = gaussian_target([-1.0, 1.5], [0.7, 0.4], [0.6, 0.4])
        rep = abstractability_score(target, 5, 1e-3)
        assert 0 <= rep.score <= rep.entropy_bound + 1e-9
        assert rep.fit_error <= 1e-3
        assert rep.entropy_bound == pytest.approx(shannon_entropy(target.weights))
        assert rep.candidates_examined == len(candidate_portfolio(target, 5))

    def test_deterministic(self):
        target = gaussian_target([-1.0, 2.0], [0.5, 0.5])
        a = abstractability_score(target, 4, 1e-3)
        b = abstractability_score(target, 4, 1e-3)
        assert a.score == b.score
        np.testing.assert_array_equal(a.mixture.means, b.mixture.means)

    @settings(max_examples=15)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_bound_on_random_targets(self, seed):
        rng = np.random.default_rng(seed)
        target = TargetDensity.from_columns(np.arange(12.0), rng.dirichlet(np.ones(12)))
        rep = abstractability_score(target, 3, 1e-3)
        assert 0 <= rep.score <= rep.entropy_bound + 1e-9
        assert rep.fit_error <= 1e-3


class TestErrors:
    def test_unreachable_without_spikes(self):
        target = gaussian_target([-3.0, 3.0], [0.5, 0.5])
        wrong = MixtureModel(np.array([1.0]), np.array([0.0]), np.array([0.5]))
        with pytest.raises(ToleranceUnreachable):
            fit_min_entropy_mixture(target, 1, 1e-3, candidates=[wrong])

    def test_bad_arguments(self):
        target = gaussian_target([0.0], [1.0])
        with pytest.raises(ValueError):
            fit_min_entropy_mixture(target, 3, 0.0)
        with pytest.raises(ValueError):
            candidate_portfolio(target, 0)


class TestMinEntropyMixture:
    def test_fit(self):
        target = gaussian_target([-3.0, 3.0], [0.5, 0.5])
        X = np.column_stack([target.coordinates, target.weights])
        est = MinEntropyMixture(n_components=4).fit(X)
        assert abs(est.abstractability_ - np.log(2)) < 0.05
        assert est.fit_error_ <= est.eps
        lp = est.score_samples(X)
        assert lp.shape == (X.shape[0],)
        assert np.exp(lp).sum() == pytest.approx(1.0, abs=1e-9)

    def test_rejects_wrong_shape(self):
        with pytest.raises(ValueError):
            MinEntropyMixture().fit(np.ones((5, 3)))

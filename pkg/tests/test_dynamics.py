import itertools

import numpy as np
import pytest

from maxent_abstraction.dynamics import (
    AbstractDynamicsLearner,
    MarkovSystem,
    PathConstraintSet,
    StateEncoder,
    _composite_outputs,
    contrastive_loss,
    dynamical_loss,
    endpoint_feature,
    enumerate_paths,
    induced_two_state_map,
    learn_abstract_dynamics,
    marginal_constraints,
    occupancy_feature,
    path_marginals,
    rollout_ensemble,
    solve_maxcal,
)
from maxent_abstraction.evaluation import AbstractionModel, queryset_loss
from maxent_abstraction.exceptions import HorizonOverflow, PathSpaceTooLarge
from maxent_abstraction.learning import INNER_OPTS, LearningConfig
from maxent_abstraction.maxent import FeatureFunction, shannon_entropy, solve_maxent
from maxent_abstraction.queries import Query, QuerySet

P0 = (FeatureFunction("p_state0", np.array([1.0, 0.0])),)
RECON2 = QuerySet.single(Query.reconstruction(2))


class TestRollout:
    def test_identity_transition(self):
        system = MarkovSystem(3, np.eye(3), [0.2, 0.3, 0.5])
        for m in rollout_ensemble(system, 5).marginals:
            np.testing.assert_array_equal(m, [0.2, 0.3, 0.5])

    def test_doubly_stochastic_keeps_uniform(self):
        P = np.array([[0.2, 0.5, 0.3], [0.5, 0.1, 0.4], [0.3, 0.4, 0.3]])
        for m in rollout_ensemble(MarkovSystem(3, P, np.full(3, 1 / 3)), 6).marginals:
            np.testing.assert_allclose(m, 1 / 3, atol=1e-15)

    def test_fair_flip(self):
        traj = rollout_ensemble(MarkovSystem.two_state(0.5, 0.5, [1.0, 0.0]), 1)
        np.testing.assert_allclose(traj.marginals[1], [0.5, 0.5])

    def test_matrix_power_linearity(self, rng):
        P = rng.dirichlet(np.ones(4), size=4)
        init = rng.dirichlet(np.ones(4))
        traj = rollout_ensemble(MarkovSystem(4, P, init), 12)
        for t, m in enumerate(traj.marginals):
            np.testing.assert_allclose(m, init @ np.linalg.matrix_power(P, t), atol=1e-12)

    def test_horizon_cap(self):
        with pytest.raises(HorizonOverflow):
            rollout_ensemble(MarkovSystem.two_state(0.1, 0.1, [1, 0]), 20, max_horizon=10)

    def test_rejects_non_stochastic(self):
        with pytest.raises(ValueError):
            MarkovSystem(2, [[0.5, 0.6], [0.5, 0.5]], [1, 0])

    def test_rows(self):
        traj = rollout_ensemble(MarkovSystem.two_state(0.5, 0.5, [1.0, 0.0]), 1)
        assert traj.rows()[:2] == [(0, 0, 1.0), (0, 1, 0.0)]
        assert traj.horizon == 1


class TestMaxCal:
    def test_unconstrained_uniform(self):
        paths, sol = solve_maxcal(2, 3)
        assert paths.shape == (16, 4)
        np.testing.assert_allclose(sol.weights, 1 / 16, atol=1e-15)

    def test_occupancy_against_group_grid(self):
        T = 2
        pcs = PathConstraintSet(2, T)
        paths = pcs.paths
        feature = occupancy_feature(paths, 0)
        paths, sol = solve_maxcal(2, T, pcs.add(feature, 0.75))
        # paths sharing an occupancy value get equal mass at the optimum, so
        # search over the masses of the four occupancy groups
        levels = np.array([0, 1, 2, 3]) / 3
        counts = np.array([1, 3, 3, 1])
        best, best_masses = -np.inf, None
        for m0, m1 in itertools.product(np.arange(0, 1.0001, 1e-3), repeat=2):
            # m2 + m3 = 1 - m0 - m1 and (m1 + 2 m2 + 3 m3) / 3 = 0.75
            rest = 1 - m0 - m1
            m3 = 2.25 - m1 - 2 * rest
            m2 = rest - m3
            masses = np.array([m0, m1, m2, m3])
            if np.any(masses < -1e-12):
                continue
            masses = np.clip(masses, 0, None)
            h = shannon_entropy(masses) + masses @ np.log(counts)
            if h > best:
                best, best_masses = h, masses
        assert sol.entropy >= best - 1e-6
        group = np.rint(feature.values * 3).astype(int)
        masses = np.bincount(group, weights=sol.weights, minlength=4)
        np.testing.assert_allclose(masses, best_masses, atol=5e-3)
        assert sol.weights @ feature.values == pytest.approx(0.75, abs=1e-10)

    def test_endpoint_constraint(self):
        pcs = PathConstraintSet(2, 3)
        paths = pcs.paths
        paths, sol = solve_maxcal(2, 3, pcs.add(endpoint_feature(paths, 1), 1.0))
        ends = paths[:, -1] == 1
        np.testing.assert_allclose(sol.weights[ends], 1 / ends.sum(), atol=1e-15)
        assert np.all(sol.weights[~ends] == 0)

    def test_path_marginal_consistency(self, rng):
        P = rng.dirichlet(np.ones(3), size=3)
        traj = rollout_ensemble(MarkovSystem(3, P, rng.dirichlet(np.ones(3))), 3)
        paths, sol = solve_maxcal(3, 3, marginal_constraints(traj, 3), INNER_OPTS)
        marg = path_marginals(paths, sol.weights, 3)
        for t, target in enumerate(traj.marginals):
            oracle = solve_maxent(3, (np.eye(3)[:, :2], target[:2]), INNER_OPTS).weights
            np.testing.assert_allclose(marg[t], oracle, atol=1e-8)

    def test_path_space_cap(self):
        with pytest.raises(PathSpaceTooLarge):
            enumerate_paths(10, 6)


class TestDynamicalLoss:
    def setup_method(self):
        self.system = MarkovSystem.two_state(0.2, 0.1, [0.9, 0.1])
        self.traj = rollout_ensemble(self.system, 5)
        self.encoded = StateEncoder.from_features(P0).encode_trajectory(self.traj)

    def test_encoded_fixed_point(self):
        assert dynamical_loss(self.traj, self.encoded, P0, RECON2).total < 1e-8

    def test_single_step_is_static_loss(self):
        a = np.array([[0.6]])
        traj = rollout_ensemble(self.system, 0)
        static = queryset_loss(traj.marginals[0], AbstractionModel(P0, a[0]), RECON2, opts=INNER_OPTS).total
        assert dynamical_loss(traj, a, P0, RECON2).total == static

    def test_perturbation_changes_one_term(self):
        base = dynamical_loss(self.traj, self.encoded, P0, RECON2)
        bumped = self.encoded.copy()
        bumped[2] += 0.1
        new = dynamical_loss(self.traj, bumped, P0, RECON2)
        step = queryset_loss(self.traj.marginals[2], AbstractionModel(P0, bumped[2]), RECON2, opts=INNER_OPTS).total
        assert new.total - base.total == pytest.approx(step - base.per_step[2], abs=1e-14)

    def test_horizon_additivity(self):
        abstract = self.encoded + np.linspace(0, 0.05, 6)[:, None]
        full = dynamical_loss(self.traj, abstract, P0, RECON2)
        head = dynamical_loss(self.traj.marginals[:3], abstract[:3], P0, RECON2)
        tail = dynamical_loss(self.traj.marginals[3:], abstract[3:], P0, RECON2)
        assert full.total == pytest.approx(head.total + tail.total, abs=1e-15)
        assert full.per_step.sum() == pytest.approx(full.total, abs=1e-12)

    def test_error_carries_timestep(self):
        bad = self.encoded.copy()
        bad[3] = 1.5
        with pytest.raises(Exception) as info:
            dynamical_loss(self.traj, bad, P0, RECON2)
        assert info.value.timestep == 3


class TestLearnAbstractDynamics:
    def test_recovers_closed_form(self):
        alpha, beta = 0.2, 0.1
        system = MarkovSystem.two_state(alpha, beta, [0.9, 0.1])
        fit = learn_abstract_dynamics(system, 6, StateEncoder.from_features(P0), RECON2)
        W, b = induced_two_state_map(alpha, beta)
        np.testing.assert_allclose(fit.dynamics.coef, W, atol=1e-4)
        np.testing.assert_allclose(fit.dynamics.intercept, b, atol=1e-4)
        losses = [row[1] for row in fit.trace]
        assert np.all(np.diff(losses) <= 1e-9)
        traj = rollout_ensemble(system, 6)
        assert dynamical_loss(traj, fit.dynamics.rollout(6), P0, RECON2).total < 1e-8

    def test_identity_transition(self):
        system = MarkovSystem(2, np.eye(2), [0.7, 0.3])
        fit = learn_abstract_dynamics(system, 4, StateEncoder.from_features(P0), RECON2)
        np.testing.assert_allclose(fit.dynamics.coef, [[1.0]], atol=1e-4)
        np.testing.assert_allclose(fit.dynamics.intercept, [0.0], atol=1e-4)

    def test_closed_form_contrastive_loss(self):
        alpha, beta = 0.3, 0.15
        system = MarkovSystem.two_state(alpha, beta, [0.2, 0.8])
        encoded = StateEncoder.from_features(P0).encode_trajectory(rollout_ensemble(system, 5))
        W, b = induced_two_state_map(alpha, beta)
        composite = _composite_outputs(P0, RECON2, INNER_OPTS)
        assert contrastive_loss(encoded, W, b, composite, RECON2) < 1e-8

    def test_encoder_from_pairs(self):
        traj = rollout_ensemble(MarkovSystem.two_state(0.2, 0.1, [0.9, 0.1]), 5)
        A = traj.as_array()[:, :1]
        enc = StateEncoder.from_pairs(traj.as_array(), A)
        np.testing.assert_allclose(enc.encode_trajectory(traj), A, atol=1e-12)

    def test_estimator(self):
        traj = rollout_ensemble(MarkovSystem.two_state(0.2, 0.1, [0.9, 0.1]), 6)
        est = AbstractDynamicsLearner(P0, Query.reconstruction(2)).fit(traj.as_array())
        np.testing.assert_allclose(est.coef_, [[0.7]], atol=1e-4)
        np.testing.assert_allclose(est.predict([[0.5]]), [[0.45]], atol=1e-4)

    def test_config_strictness(self):
        system = MarkovSystem.two_state(0.2, 0.1, [0.9, 0.1])
        fit = learn_abstract_dynamics(system, 3, StateEncoder.from_features(P0), RECON2, LearningConfig(max_iters=50))
        assert fit.converged

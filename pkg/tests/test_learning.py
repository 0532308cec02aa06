import numpy as np
import pytest

from maxent_abstraction.evaluation import AbstractionModel, queryset_loss
from maxent_abstraction.exceptions import InfeasibleStep, NonConvergence
from maxent_abstraction.learning import (
    AbstractionLearner,
    CompositeQueryModel,
    LearningConfig,
    fd_gradient,
    fd_ratio_test,
    learn_composite_query,
    learn_encoder,
    learn_targets,
    minimize_fd,
    select_dimension,
)
from maxent_abstraction.maxent import FeatureFunction, solve_maxent
from maxent_abstraction.queries import Query, QuerySet, kl_divergence

E = np.array([0.0, 1.0, 2.0, 3.0])
ENERGY = FeatureFunction("energy", E)
CORNERS = FeatureFunction("corners", np.array([1.0, 0.0, 0.0, 1.0]))
BOLTZMANN = np.exp(-E) / np.exp(-E).sum()


def nonincreasing(trace, slack=1e-9):
    losses = np.array([row[1] for row in trace])
    return bool(np.all(np.diff(losses) <= slack))


class TestConfig:
    @pytest.mark.parametrize("kwargs", [{"step_size": 0}, {"fd_step": -1}, {"tolerance": 2}, {"max_iters": 0}, {"method": "bfgs"}])
    def test_rejects_bad_settings(self, kwargs):
        with pytest.raises(ValueError):
            LearningConfig(**kwargs)


class TestOptimizer:
    def test_quadratic(self):
        res = minimize_fd(lambda x: float(np.sum((x - [1.0, -2.0]) ** 2)), np.zeros(2), LearningConfig())
        np.testing.assert_allclose(res.x, [1, -2], atol=1e-6)
        assert res.converged and nonincreasing(res.trace)

    def test_gradient_method_descends(self):
        cfg = LearningConfig(step_size=0.5, method="gradient", max_iters=500)
        res = minimize_fd(lambda x: float((x[0] - 3) ** 2 + 10 * x[1] ** 2), np.array([0.0, 1.0]), cfg)
        assert nonincreasing(res.trace)
        np.testing.assert_allclose(res.x, [3, 0], atol=1e-4)

    def test_one_sided_at_bounds(self):
        g = fd_gradient(lambda x: float(x[0] ** 2), np.array([0.0]), 1e-4, np.array([0.0]), np.array([1.0]))
        assert g[0] == pytest.approx(1e-4, rel=1e-6)

    def test_infeasible_start(self):
        with pytest.raises(InfeasibleStep):
            minimize_fd(lambda x: np.inf, np.zeros(1), LearningConfig())

    def test_strict_nonconvergence(self):
        cfg = LearningConfig(max_iters=1, method="gradient", step_size=1e-3, strict=True)
        with pytest.raises(NonConvergence) as info:
            minimize_fd(lambda x: float(np.sum(x**2)), np.array([5.0]), cfg)
        assert info.value.trace

    def test_ratio_test_smooth(self):
        fun = lambda x: float(np.sin(x[0]) + np.exp(0.3 * x[1]) * x[0] ** 2)  # noqa: E731
        assert 3.5 <= fd_ratio_test(fun, np.array([0.7, -0.4]), 1e-2) <= 4.5


class TestLearnTargets:
    def test_recovers_mean_energy(self):
        fit = learn_targets(BOLTZMANN, [ENERGY], Query.reconstruction(4))
        assert fit.model.targets[0] == pytest.approx(BOLTZMANN @ E, abs=1e-4)
        assert fit.loss < 1e-8
        assert nonincreasing(fit.trace)

    def test_sampled_dataset_moment_matching(self, rng):
        X = rng.choice(4, size=300, p=[0.1, 0.4, 0.3, 0.2])
        emp = np.bincount(X, minlength=4) / X.size
        fit = learn_targets(emp, [ENERGY, CORNERS], Query.reconstruction(4), LearningConfig(tolerance=1e-10))
        np.testing.assert_allclose(fit.model.targets, [emp @ E, emp @ CORNERS.values], atol=1e-6)

    def test_constant_query_keeps_init(self):
        fit = learn_targets(BOLTZMANN, [ENERGY], Query.constant([0.5, 0.5]), init=[1.3])
        assert fit.gradient_norm == 0
        assert fit.model.targets[0] == pytest.approx(1.3, abs=1e-10)

    def test_dataset_average(self, rng):
        data = [rng.dirichlet(np.ones(4)) for _ in range(3)]
        fit = learn_targets(data, [ENERGY], Query.coarse_grain([0, 0, 1, 1]))
        assert nonincreasing(fit.trace)
        assert fit.loss <= fit.trace[0][1]

    def test_estimator(self, rng):
        X = rng.choice(4, size=200, p=BOLTZMANN)
        est = AbstractionLearner([ENERGY], Query.reconstruction(4), samples=True).fit(X)
        assert est.targets_[0] == pytest.approx(E[X].mean(), abs=1e-6)
        assert est.transform(X).shape == (1, 4)
        assert est.score(X) <= 0
        assert est.get_params()["samples"] is True


class TestLearnEncoder:
    def setup_method(self):
        rng = np.random.default_rng(7)
        self.data = [rng.dirichlet(np.ones(4)) for _ in range(3)]
        self.block = FeatureFunction("block", np.array([0.0, 0.0, 1.0, 1.0]))
        self.parity = FeatureFunction("parity", np.array([0.0, 1.0, 0.0, 1.0]))

    def test_sufficient_capacity(self):
        fit = learn_encoder(self.data, [self.parity], [self.block], Query.coarse_grain([0, 0, 1, 1]))
        assert fit.loss < 1e-6
        for p, row in zip(self.data, fit.encoder.table):
            assert row[0] == pytest.approx(p[2] + p[3], abs=1e-4)
        assert nonincreasing(fit.trace)

    def test_tied_encoder_matches_learn_targets(self):
        qs = Query.reconstruction(4)
        tied = learn_encoder(self.data, [self.parity], [self.block], qs, tied=True)
        plain = learn_targets(self.data, [self.parity, self.block], qs)
        assert tied.loss == pytest.approx(plain.loss, abs=1e-6)
        assert np.allclose(tied.encoder.table, tied.encoder.table[0])

    def test_single_datapoint_reduces(self):
        qs = Query.reconstruction(4)
        p = self.data[:1]
        enc = learn_encoder(p, [self.parity], [self.block], qs)
        plain = learn_targets(p, [self.parity, self.block], qs)
        assert enc.loss == pytest.approx(plain.loss, abs=1e-6)

    def test_blocks_must_be_disjoint(self):
        with pytest.raises(ValueError):
            learn_encoder(self.data, [self.block], [self.block], Query.reconstruction(4))


class TestSelectDimension:
    def test_two_active_constraints(self):
        p = solve_maxent(4, ([[0.0, 1.0], [1.0, 0.0], [2.0, 0.0], [3.0, 1.0]], [1.1, 0.6])).weights
        extra = FeatureFunction("extra", np.array([0.0, 1.0, 0.0, 0.0]))
        sel = select_dimension(p, [[ENERGY], [ENERGY, CORNERS], [ENERGY, CORNERS, extra]], Query.reconstruction(4))
        assert sel.index == 1
        assert sel.table[0]["loss"] > sel.table[1]["loss"]

    def test_boltzmann_selects_one(self):
        extra = FeatureFunction("extra", np.array([0.0, 1.0, 0.0, 0.0]))
        sel = select_dimension(BOLTZMANN, [[ENERGY], [ENERGY, CORNERS], [ENERGY, CORNERS, extra]], Query.reconstruction(4))
        assert sel.index == 0

    def test_empty_candidate(self):
        sel = select_dimension(BOLTZMANN, [[]], Query.reconstruction(4))
        assert sel.index == 0
        assert sel.table[0]["loss"] == pytest.approx(kl_divergence(BOLTZMANN, np.full(4, 0.25)))

    def test_failures_recorded(self):
        bad = FeatureFunction("short", np.array([0.0, 1.0]))
        sel = select_dimension(BOLTZMANN, [[bad], [ENERGY]], Query.reconstruction(4))
        assert sel.table[0]["error"] is not None
        assert sel.index == 1


class TestCompositeQuery:
    def test_exact_at_nodes_and_midpoints(self):
        grid = np.linspace(0.2, 2.8, 50)
        q = Query.coarse_grain([0, 0, 1, 1])
        model, val = learn_composite_query(grid, [ENERGY], q)
        for a in grid[::7]:
            exact = q(solve_maxent(4, (E[:, None], [a])).weights)
            assert kl_divergence(exact, model(a)) < 1e-12
        assert val.max_divergence < 1e-4
        assert val.node_max_divergence < 1e-12

    def test_constant_query(self):
        model, val = learn_composite_query(np.linspace(0.5, 2.5, 5), [ENERGY], Query.constant([0.2, 0.8]))
        for a in np.linspace(0.5, 2.5, 13):
            np.testing.assert_allclose(model(a), [0.2, 0.8], atol=1e-15)

    def test_two_dimensional_grid(self):
        axes = [np.linspace(1.2, 1.8, 9), np.linspace(0.3, 0.6, 7)]
        model, val = learn_composite_query(axes, [ENERGY, CORNERS], Query.reconstruction(4))
        assert model.nodes.shape == (63, 2)
        assert val.max_divergence < 1e-2

    def test_rejects_unordered_nodes(self):
        with pytest.raises(ValueError):
            CompositeQueryModel([np.array([1.0, 0.5])], np.ones((2, 2)) / 2)


def test_loss_matches_queryset_loss():
    model = AbstractionModel((ENERGY,), [1.0])
    assert queryset_loss(BOLTZMANN, model, QuerySet.single(Query.reconstruction(4))).total > 0

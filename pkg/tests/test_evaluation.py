import itertools

import numpy as np
import pytest

from maxent_abstraction.evaluation import (
    AbstractionModel,
    abstraction_loss,
    perfect_abstraction_check,
    queryset_loss,
)
from maxent_abstraction.exceptions import UnsupportedQueryKind
from maxent_abstraction.information import (
    conditional_mutual_information,
    encoder_codes,
    joint_from_maps,
    mutual_information,
)
from maxent_abstraction.maxent import FeatureFunction, SolverOptions, analytic_boltzmann
from maxent_abstraction.queries import Query, QuerySet, partition_from_blocks

E3 = np.array([0.0, 1.0, 2.0])
BOLTZMANN = np.exp(-E3) / np.exp(-E3).sum()
TIGHT = SolverOptions(tolerance=1e-12)


def energy_model(E, target):
    return AbstractionModel((FeatureFunction("energy", np.asarray(E, float)),), [target])


class TestMutualInformation:
    def test_product_joint(self):
        assert mutual_information(np.outer([0.3, 0.7], [0.2, 0.5, 0.3])) == pytest.approx(0, abs=1e-15)

    def test_diagonal_joint(self):
        assert mutual_information(np.eye(4) / 4) == pytest.approx(np.log(4), abs=1e-14)

    def test_known_value(self):
        P = np.array([[0.4, 0.1], [0.1, 0.4]])
        direct = sum(P[i, j] * np.log(P[i, j] / 0.25) for i in range(2) for j in range(2))
        assert mutual_information(P) == pytest.approx(direct, abs=1e-15)
        assert direct == pytest.approx(0.1927, abs=1e-4)

    def test_symmetry(self, rng):
        P = rng.dirichlet(np.ones(12)).reshape(3, 4)
        assert mutual_information(P) == pytest.approx(mutual_information(P.T), abs=1e-14)

    def test_conditional_independent(self, rng):
        pz = rng.dirichlet(np.ones(2))
        P = np.einsum("i,j,k->ijk", [0.2, 0.8], [0.6, 0.4], pz)
        assert conditional_mutual_information(P) == pytest.approx(0, abs=1e-15)

    def test_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            mutual_information(np.ones((2, 2)))

    def test_encoder_codes_merge_equal_rows(self):
        np.testing.assert_array_equal(encoder_codes([[1.0], [2.0], [1.0]]), [0, 1, 0])


class TestAbstractionLoss:
    def test_fixed_point_any_query(self):
        model = energy_model(E3, BOLTZMANN @ E3)
        for q in (Query.reconstruction(3), Query.coarse_grain([0, 1, 1]), Query.pushforward([0, 1, 0])):
            assert abstraction_loss(BOLTZMANN, model, q, opts=TIGHT) < 1e-8

    def test_matches_boltzmann_oracle(self):
        E = np.array([0.0, 1.0, 2.0, 3.0])
        p = np.array([0.7, 0.1, 0.1, 0.1])
        oracle = analytic_boltzmann(E, p @ E).weights
        expected = np.sum(p * np.log(p / oracle))
        got = abstraction_loss(p, energy_model(E, p @ E), Query.reconstruction(4), opts=TIGHT)
        assert expected > 0
        assert got == pytest.approx(expected, rel=1e-8)

    def test_constant_query_always_perfect(self):
        p = np.array([0.7, 0.1, 0.1, 0.1])
        model = energy_model([0, 1, 2, 3], 2.5)
        assert abstraction_loss(p, model, Query.constant([0.3, 0.7])) == 0


class TestQuerysetLoss:
    def test_single_query_matches(self):
        p = np.array([0.7, 0.1, 0.1, 0.1])
        model = energy_model([0, 1, 2, 3], 0.6)
        q = Query.coarse_grain([0, 0, 1, 1])
        assert queryset_loss(p, model, QuerySet.single(q)).total == abstraction_loss(p, model, q)

    def test_weighted_mean(self):
        p = np.array([0.7, 0.1, 0.1, 0.1])
        model = energy_model([0, 1, 2, 3], 0.6)
        q1, q2 = Query.reconstruction(4), Query.coarse_grain([0, 1, 1, 0])
        rep = queryset_loss(p, model, QuerySet((q1, q2), [0.5, 0.5]))
        l1, l2 = abstraction_loss(p, model, q1), abstraction_loss(p, model, q2)
        assert rep.total == pytest.approx((l1 + l2) / 2, abs=1e-12)
        assert all(loss >= 0 for _, loss in rep.per_query_loss)
        assert rep.rows("s", "a")[0] == ("s", "a", "reconstruction", l1)

    def test_fixed_point_weighted(self):
        model = energy_model(E3, BOLTZMANN @ E3)
        qs = QuerySet((Query.reconstruction(3), Query.coarse_grain([0, 0, 1])), [0.9, 0.1])
        assert queryset_loss(BOLTZMANN, model, qs, opts=TIGHT).total < 1e-8

    def test_monotone_refinement(self):
        p = np.array([0.5, 0.05, 0.3, 0.15])
        model = energy_model([0, 1, 2, 3], 1.0)
        blocks = list(_set_partitions([0, 1, 2, 3]))
        maps = [partition_from_blocks(b) for b in blocks]
        losses = [abstraction_loss(p, model, Query.coarse_grain(g)) for g in maps]
        for (ga, la), (gb, lb) in itertools.permutations(zip(maps, losses), 2):
            # gb refines ga when each block of gb lies inside one block of ga
            if all(np.unique(ga[gb == b]).size == 1 for b in np.unique(gb)):
                assert lb >= la - 1e-12


def _set_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1 :]
        yield [[first]] + part


class TestPerfectAbstraction:
    def test_fixed_point_gap(self):
        model = energy_model(E3, BOLTZMANN @ E3)
        rep = perfect_abstraction_check(BOLTZMANN, model, Query.coarse_grain([0, 0, 1]), opts=TIGHT)
        assert rep.loss < 1e-8
        assert abs(rep.gap) < 1e-6
        assert rep.query_measurable

    def test_imperfect_data_processing(self, rng):
        for _ in range(20):
            p = rng.dirichlet(np.ones(4))
            model = AbstractionModel((FeatureFunction("f", np.array([0.0, 1.0, 1.0, 2.0])),), [p @ [0, 1, 1, 2]])
            rep = perfect_abstraction_check(p, model, Query.pushforward(rng.integers(0, 3, 4)))
            assert rep.mi_qa <= rep.mi_qx + 1e-10

    def test_constant_pushforward(self):
        rep = perfect_abstraction_check(BOLTZMANN, energy_model(E3, 0.5), Query.pushforward([0, 0, 0]))
        assert rep.mi_qx == 0 and rep.mi_qa == 0

    @pytest.mark.parametrize("query", [Query.reconstruction(3), Query.constant([1.0])])
    def test_unsupported_kinds(self, query):
        with pytest.raises(UnsupportedQueryKind):
            perfect_abstraction_check(BOLTZMANN, energy_model(E3, 0.5), query)

    def test_data_processing_random_encoders(self, rng):
        for _ in range(1000):
            n = int(rng.integers(2, 7))
            p = rng.dirichlet(np.ones(n))
            a = rng.integers(0, n, n)
            g = rng.integers(0, n, n)
            i_ga = mutual_information(joint_from_maps(p, g, a))
            i_gx = mutual_information(joint_from_maps(p, g, np.arange(n)))
            assert i_ga <= i_gx + 1e-12

"""Leakiness of an abstraction against single queries and query sets."""

from dataclasses import dataclass

import numpy as np

from ._validation import check_distribution
from .exceptions import UnsupportedQueryKind
from .information import encoder_codes, joint_from_maps, mutual_information
from .maxent import ConstraintSet, FeatureFunction, MaxEntSolution, solve_maxent
from .queries import QuerySet, apply_query, divergence


@dataclass(frozen=True)
class AbstractionModel:
    """A fixed feature dictionary together with the abstraction vector ``a``."""

    features: tuple
    targets: np.ndarray

    def __post_init__(self):
        features = tuple(self.features)
        if not all(isinstance(f, FeatureFunction) for f in features):
            raise TypeError("features must be FeatureFunction instances")
        targets = np.atleast_1d(np.asarray(self.targets, dtype=float))
        if targets.shape != (len(features),):
            raise ValueError("one target per feature is required")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "targets", targets)

    @property
    def dimension(self):
        return len(self.features)

    @property
    def constraints(self):
        return ConstraintSet(self.features, self.targets)

    def with_targets(self, targets):
        return AbstractionModel(self.features, targets)

    def table(self, n_states):
        return self.constraints.table(n_states)


@dataclass(frozen=True)
class LossReport:
    per_query_loss: list
    total: float
    maxent_solution: MaxEntSolution
    weights: np.ndarray

    def rows(self, system_id="system", abstraction_id="abstraction"):
        return [(system_id, abstraction_id, name, loss) for name, loss in self.per_query_loss]


@dataclass(frozen=True)
class PerfectAbstractionReport:
    loss: float
    mi_qx: float
    mi_qa: float
    gap: float
    query_measurable: bool


def maxent_of(abstraction, n_states, opts=None):
    """m(a): the maximum-entropy distribution induced by an abstraction."""
    return solve_maxent(n_states, abstraction.constraints, opts)


def abstraction_loss(system, abstraction, query, div=None, opts=None):
    """D[Q(p) || Q(m(a))] for a single query."""
    p = check_distribution(system, name="system")
    m = maxent_of(abstraction, p.shape[0], opts)
    return divergence(div, apply_query(query, p), apply_query(query, m.weights))


def queryset_loss(system, abstraction, qs, div=None, opts=None, solution=None):
    """Query-weighted leakiness over a query set.

    ``solution`` may carry a precomputed m(a) to skip the inner solve.
    """
    p = check_distribution(system, name="system")
    if not isinstance(qs, QuerySet):
        qs = QuerySet.single(qs)
    m = solution if solution is not None else maxent_of(abstraction, p.shape[0], opts)
    per_query = []
    for query, _ in qs:
        loss = divergence(div, apply_query(query, p), apply_query(query, m.weights))
        per_query.append((query.name, loss))
    losses = np.array([loss for _, loss in per_query])
    return LossReport(per_query, float(qs.weights @ losses), m, qs.weights)


def perfect_abstraction_check(system, abstraction, query, resolution=None, opts=None):
    """Compare I[q; x] with I[q; a] for a deterministic query.

    The abstraction acts on individual states through the encoder that sends
    each state to its (binned) feature vector.  For a perfect abstraction
    whose query is measurable with respect to that encoder the two mutual
    informations coincide; the report carries the gap either way.
    """
    if not query.is_block_map:
        raise UnsupportedQueryKind(
            f"MI comparison needs a coarse_grain or pushforward query, got {query.kind!r}"
        )
    p = check_distribution(system, name="system")
    n = p.shape[0]
    loss = abstraction_loss(p, abstraction, query, opts=opts)
    g = query.block_map(n)
    codes = encoder_codes(abstraction.table(n), resolution)
    mi_qx = mutual_information(joint_from_maps(p, g, np.arange(n)))
    mi_qa = mutual_information(joint_from_maps(p, g, codes))
    support = p > 0
    measurable = all(
        np.unique(g[support & (codes == code)]).size <= 1 for code in np.unique(codes[support])
    )
    return PerfectAbstractionReport(loss, mi_qx, mi_qa, mi_qx - mi_qa, measurable)

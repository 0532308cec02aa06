"""Abstractions of finite Markov systems.

Continuous-time dynamics are realized as discrete-time transition matrices,
ensembles are propagated exactly, and maximum caliber is a single maxent
problem over the enumerated path space.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import NORMALIZATION_ATOL, check_distribution
from .evaluation import AbstractionModel, queryset_loss
from .exceptions import HorizonOverflow, PathSpaceTooLarge
from .learning import INNER_OPTS, LearningConfig, _as_features, minimize_fd
from .maxent import ConstraintSet, FeatureFunction, SolverOptions, StateSpace, solve_maxent
from .queries import QuerySet, apply_query, divergence

MAX_HORIZON = 10_000
MAX_PATHS = 1_000_000


@dataclass(frozen=True)
class MarkovSystem:
    space: StateSpace
    transition: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        space = self.space if isinstance(self.space, StateSpace) else StateSpace.range(self.space)
        P = np.asarray(self.transition, dtype=float)
        n = space.size
        if P.shape != (n, n):
            raise ValueError(f"transition must be {n}x{n}, got {P.shape}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1) > NORMALIZATION_ATOL):
            raise ValueError("transition rows must be non-negative and sum to 1")
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "initial", check_distribution(self.initial, n, name="initial"))

    @classmethod
    def two_state(cls, alpha, beta, initial):
        """Chain flipping 0->1 with probability ``alpha`` and 1->0 with ``beta``."""
        P = np.array([[1 - alpha, alpha], [beta, 1 - beta]])
        return cls(StateSpace.range(2), P, initial)


@dataclass(frozen=True)
class Trajectory:
    marginals: tuple

    def __post_init__(self):
        object.__setattr__(self, "marginals", tuple(check_distribution(m) for m in self.marginals))

    @property
    def horizon(self):
        return len(self.marginals) - 1

    def as_array(self):
        return np.array(self.marginals)

    def rows(self):
        """(t, state, probability) rows for CSV export."""
        return [(t, s, float(p)) for t, m in enumerate(self.marginals) for s, p in enumerate(m)]


def rollout_ensemble(system, T, max_horizon=MAX_HORIZON):
    if T < 0:
        raise ValueError("horizon must be non-negative")
    if T > max_horizon:
        raise HorizonOverflow(f"horizon {T} exceeds the cap {max_horizon}")
    marginals = [system.initial]
    for _ in range(T):
        nxt = marginals[-1] @ system.transition
        marginals.append(nxt / nxt.sum())
    return Trajectory(tuple(marginals))


def enumerate_paths(n_states, T, cap=MAX_PATHS):
    """All state sequences of length T+1, lexicographic, shape (n_paths, T+1)."""
    count = n_states ** (T + 1)
    if count > cap:
        raise PathSpaceTooLarge(f"{count} paths exceed the enumeration cap {cap}")
    return np.array(list(itertools.product(range(n_states), repeat=T + 1)), dtype=int).reshape(count, T + 1)


@dataclass(frozen=True)
class PathConstraintSet:
    """Path functionals tabulated over the enumerated path space."""

    n_states: int
    horizon: int
    features: tuple = ()
    targets: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "targets", np.atleast_1d(np.asarray(self.targets, dtype=float)))
        if len(self.features) != self.targets.shape[0]:
            raise ValueError("one target per path feature is required")

    @property
    def paths(self):
        return enumerate_paths(self.n_states, self.horizon)

    def add(self, feature, target):
        return PathConstraintSet(
            self.n_states, self.horizon, self.features + (feature,), np.append(self.targets, target)
        )

    def constraint_set(self):
        return ConstraintSet(self.features, self.targets)


def occupancy_feature(paths, state, name=None):
    """Fraction of the T+1 timesteps a path spends in ``state``."""
    return FeatureFunction(name or f"occupancy_{state}", np.mean(paths == state, axis=1))


def endpoint_feature(paths, state, name=None):
    return FeatureFunction(name or f"ends_in_{state}", (paths[:, -1] == state).astype(float))


def marginal_feature(paths, t, state, name=None):
    return FeatureFunction(name or f"x{t}={state}", (paths[:, t] == state).astype(float))


def marginal_constraints(trajectory_or_marginals, n_states):
    """Per-timestep marginal constraints (one redundant state dropped per step)."""
    marginals = getattr(trajectory_or_marginals, "marginals", trajectory_or_marginals)
    T = len(marginals) - 1
    pcs = PathConstraintSet(n_states, T)
    paths = pcs.paths
    for t, m in enumerate(marginals):
        for s in range(n_states - 1):
            pcs = pcs.add(marginal_feature(paths, t, s), m[s])
    return pcs


def solve_maxcal(space, T, constraints=None, opts=None):
    """Maximum-caliber distribution over all paths of length T+1.

    Returns ``(paths, solution)`` where ``solution.weights[k]`` is the
    probability of ``paths[k]``.
    """
    n = space if isinstance(space, (int, np.integer)) else len(space)
    constraints = constraints or PathConstraintSet(n, T)
    if constraints.n_states != n or constraints.horizon != T:
        raise ValueError("path constraints were built for a different path space")
    paths = enumerate_paths(n, T)
    sol = solve_maxent(paths.shape[0], constraints.constraint_set(), opts or SolverOptions())
    return paths, sol


def path_marginals(paths, weights, n_states):
    """Time-t marginals of a path distribution, shape (T+1, n_states)."""
    T1 = paths.shape[1]
    out = np.zeros((T1, n_states))
    for t in range(T1):
        out[t] = np.bincount(paths[:, t], weights=weights, minlength=n_states)
    return out


class StateEncoder:
    """Linear map from a marginal over states to an abstraction vector.

    ``encode(p) = p @ table``; with the default construction the table holds
    feature values so the abstraction is the vector of feature expectations.
    """

    def __init__(self, table, names=None):
        self.table = np.asarray(table, dtype=float)
        if self.table.ndim == 1:
            self.table = self.table[:, None]
        self.names = names or [f"a{i}" for i in range(self.table.shape[1])]

    @classmethod
    def from_features(cls, features):
        features = _as_features(features)
        return cls(np.column_stack([f.values for f in features]), [f.name for f in features])

    @classmethod
    def from_pairs(cls, marginals, abstractions):
        """Least-squares regression of abstractions on marginals."""
        P = np.asarray(marginals, dtype=float)
        A = np.asarray(abstractions, dtype=float).reshape(P.shape[0], -1)
        table, *_ = np.linalg.lstsq(P, A, rcond=None)
        return cls(table)

    @property
    def dimension(self):
        return self.table.shape[1]

    def features(self):
        return tuple(FeatureFunction(n, self.table[:, i]) for i, n in enumerate(self.names))

    def encode(self, marginal):
        return np.asarray(marginal, dtype=float) @ self.table

    def encode_trajectory(self, trajectory):
        return np.array([self.encode(m) for m in trajectory.marginals])


@dataclass
class AbstractDynamics:
    """Affine abstract update ``a_t = W a_{t-1} + b``."""

    coef: np.ndarray
    intercept: np.ndarray
    initial: np.ndarray

    @property
    def dimension(self):
        return self.intercept.shape[0]

    def step(self, a):
        return self.coef @ np.asarray(a, dtype=float) + self.intercept

    def rollout(self, T):
        traj = [np.asarray(self.initial, dtype=float)]
        for _ in range(T):
            traj.append(self.step(traj[-1]))
        return np.array(traj)


@dataclass
class DynamicalLossReport:
    total: float
    per_step: np.ndarray


def dynamical_loss(system_traj, abstract_traj, features, qs, div=None, opts=INNER_OPTS):
    """Discrete-time path integral of the query-set loss.

    Errors from the inner solve are re-raised with a ``timestep`` attribute.
    """
    features = _as_features(features)
    qs = qs if isinstance(qs, QuerySet) else QuerySet.single(qs)
    marginals = getattr(system_traj, "marginals", system_traj)
    abstract = np.asarray(abstract_traj, dtype=float)
    if abstract.shape[0] != len(marginals):
        raise ValueError("system and abstract trajectories must share a horizon")
    abstract = abstract.reshape(len(marginals), -1)
    per_step = np.empty(len(marginals))
    for t, (x_t, a_t) in enumerate(zip(marginals, abstract)):
        try:
            per_step[t] = queryset_loss(x_t, AbstractionModel(features, a_t), qs, div, opts).total
        except Exception as exc:
            exc.timestep = t
            raise
    return DynamicalLossReport(float(per_step.sum()), per_step)


def _composite_outputs(features, qs, opts):
    """Q o m for every query in ``qs``, evaluated by a direct maxent solve."""
    n = features[0].values.shape[0]

    def evaluate(a):
        sol = solve_maxent(n, ConstraintSet(features, a), opts)
        return [apply_query(q, sol.weights) for q in qs.queries]

    return evaluate


@dataclass
class DynamicsFit:
    dynamics: AbstractDynamics
    loss: float
    trace: list
    converged: bool
    encoded: np.ndarray


def contrastive_loss(encoded, coef, intercept, composite, qs, div=None, targets=None):
    """sum_t sum_i w_i D[Q~_i(a_t) || Q~_i(W a_{t-1} + b)] over encoded abstractions."""
    targets = targets if targets is not None else [composite(a) for a in encoded]
    total = 0.0
    for t in range(1, len(encoded)):
        predicted = composite(coef @ encoded[t - 1] + intercept)
        total += sum(w * divergence(div, p, q) for w, p, q in zip(qs.weights, targets[t], predicted))
    return total


def learn_abstract_dynamics(
    system, T, encoder, qs, cfg=None, *, div=None, composite=None, init=None, opts=INNER_OPTS
):
    """Fit an affine abstract update by the contrastive objective.

    Only abstraction-space quantities enter the loss: encoded abstractions
    of the rolled-out marginals and the composite query Q o m.  Pass a
    callable ``composite(a) -> list of query outputs`` (e.g. built from
    :class:`CompositeQueryModel` instances) to skip the inner solves.
    """
    cfg = cfg or LearningConfig()
    qs = qs if isinstance(qs, QuerySet) else QuerySet.single(qs)
    traj = rollout_ensemble(system, T)
    encoded = encoder.encode_trajectory(traj)
    d = encoder.dimension
    composite = composite or _composite_outputs(encoder.features(), qs, opts)
    targets = [composite(a) for a in encoded]
    x0 = np.concatenate([np.eye(d).ravel(), np.zeros(d)]) if init is None else np.asarray(init, float)

    def loss(theta):
        return contrastive_loss(encoded, theta[: d * d].reshape(d, d), theta[d * d :], composite, qs, div, targets)

    res = minimize_fd(loss, x0, cfg)
    coef, intercept = res.x[: d * d].reshape(d, d), res.x[d * d :]
    return DynamicsFit(AbstractDynamics(coef, intercept, encoded[0]), res.loss, res.trace, res.converged, encoded)


def induced_two_state_map(alpha, beta):
    """Closed-form affine map on P(state 0) for the two-state chain."""
    return np.array([[1.0 - alpha - beta]]), np.array([beta])


class AbstractDynamicsLearner(BaseEstimator):
    """Estimator interface to :func:`learn_abstract_dynamics`.

    ``fit(X)`` takes a trajectory of marginals, shape (T+1, n_states), and
    learns the affine update on their encoded abstractions.  ``predict(A)``
    maps abstractions one step forward.
    """

    def __init__(self, features, queries, divergence=None, max_iter=200, fd_step=1e-4, tol=1e-10):
        self.features = features
        self.queries = queries
        self.divergence = divergence
        self.max_iter = max_iter
        self.fd_step = fd_step
        self.tol = tol

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] < 2:
            raise ValueError("X must hold at least two marginals, shape (T+1, n_states)")
        for row in X:
            check_distribution(row, X.shape[1])
        features = _as_features(self.features)
        qs = self.queries if isinstance(self.queries, QuerySet) else QuerySet.single(self.queries)
        encoder = StateEncoder.from_features(features)
        encoded = np.array([encoder.encode(m) for m in X])
        composite = _composite_outputs(features, qs, INNER_OPTS)
        targets = [composite(a) for a in encoded]
        d = encoder.dimension
        cfg = LearningConfig(max_iters=self.max_iter, fd_step=self.fd_step, tolerance=self.tol)

        def loss(theta):
            return contrastive_loss(
                encoded, theta[: d * d].reshape(d, d), theta[d * d :], composite, qs, self.divergence, targets
            )

        res = minimize_fd(loss, np.concatenate([np.eye(d).ravel(), np.zeros(d)]), cfg)
        self.coef_ = res.x[: d * d].reshape(d, d)
        self.intercept_ = res.x[d * d :]
        self.loss_ = res.loss
        self.loss_trace_ = res.trace
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, A):
        check_is_fitted(self, "coef_")
        A = np.asarray(A, dtype=float).reshape(-1, self.coef_.shape[0])
        return A @ self.coef_.T + self.intercept_

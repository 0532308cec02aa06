"""Maximum-entropy distributions on finite state spaces.

The solver works on the convex dual

    g(lam) = ln Z(lam) + lam . c,     Z(lam) = sum_x r(x) exp(-lam . f(x))

whose gradient is ``c - E_p[f]`` and whose Hessian is the feature covariance
under ``p``.  Damped Newton with a backtracking line search converges in a
handful of iterations at the problem sizes this package targets.

Targets sitting exactly on a face of the moment polytope are handled by
restricting the support to the states attaining the extreme value; the
corresponding multiplier is reported as +/- inf.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import entr, logsumexp
from sklearn.base import BaseEstimator, DensityMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_distribution, check_feature_table, check_samples
from .exceptions import (
    DegenerateBoundary,
    GridTooNarrow,
    InfeasibleConstraints,
    NonConvergence,
)

BOUNDARY_SHRINK = 1e-12


@dataclass(frozen=True)
class StateSpace:
    """An ordered set of states, optionally embedded on a uniform grid."""

    states: tuple
    coordinates: np.ndarray | None = None
    spacing: float | None = None

    def __post_init__(self):
        states = tuple(self.states)
        object.__setattr__(self, "states", states)
        if not states:
            raise ValueError("state space must be non-empty")
        if len(set(states)) != len(states):
            raise ValueError("state identifiers must be unique")
        if self.coordinates is not None:
            coords = np.asarray(self.coordinates, dtype=float)
            if coords.shape != (len(states),):
                raise ValueError("one coordinate per state is required")
            object.__setattr__(self, "coordinates", coords)
        if self.spacing is not None and not self.spacing > 0:
            raise ValueError("grid spacing must be strictly positive")

    @classmethod
    def range(cls, n):
        return cls(tuple(range(int(n))))

    @classmethod
    def grid(cls, start, stop, step):
        """Uniform grid from ``start`` to ``stop`` inclusive."""
        if not step > 0:
            raise ValueError("grid spacing must be strictly positive")
        n = int(round((stop - start) / step)) + 1
        coords = start + step * np.arange(n)
        return cls(tuple(range(n)), coordinates=coords, spacing=float(step))

    @property
    def size(self):
        return len(self.states)

    def __len__(self):
        return len(self.states)


@dataclass(frozen=True)
class DiscreteDistribution:
    """Normalized weights aligned with a state space."""

    weights: np.ndarray
    space: StateSpace | None = None

    def __post_init__(self):
        n = None if self.space is None else self.space.size
        object.__setattr__(self, "weights", check_distribution(self.weights, n))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.weights, dtype=dtype)

    def __len__(self):
        return self.weights.shape[0]

    def entropy(self):
        return shannon_entropy(self.weights)


@dataclass(frozen=True)
class FeatureFunction:
    """A feature precomputed as one real value per state."""

    name: str
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or not np.all(np.isfinite(values)):
            raise ValueError(f"feature {self.name!r} must be a finite 1-D table")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class ConstraintSet:
    """Feature functions paired with their expectation targets."""

    features: tuple = ()
    targets: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        features = tuple(self.features)
        targets = np.atleast_1d(np.asarray(self.targets, dtype=float))
        if len(features) != targets.shape[0]:
            raise ValueError("one target per feature is required")
        sizes = {f.values.shape[0] for f in features}
        if len(sizes) > 1:
            raise ValueError("all features must cover the same number of states")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "targets", targets)

    @classmethod
    def from_table(cls, table, targets, names=None):
        F = check_feature_table(table)
        names = names or [f"f{i}" for i in range(F.shape[1])]
        return cls(tuple(FeatureFunction(n, F[:, i]) for i, n in enumerate(names)), targets)

    def table(self, n_states):
        if not self.features:
            return np.zeros((n_states, 0))
        return check_feature_table(np.column_stack([f.values for f in self.features]), n_states)

    @property
    def names(self):
        return [f.name for f in self.features]

    def __len__(self):
        return len(self.features)


@dataclass(frozen=True)
class SolverOptions:
    tolerance: float = 1e-10
    max_iter: int = 200
    seed: int = 0


@dataclass(frozen=True)
class MaxEntSolution:
    multipliers: np.ndarray
    log_partition: float
    distribution: DiscreteDistribution
    entropy: float
    residuals: np.ndarray
    iterations: int = 0

    @property
    def weights(self):
        return self.distribution.weights


def shannon_entropy(p):
    """Entropy in nats with the 0 ln 0 = 0 convention."""
    return float(np.sum(entr(np.asarray(p, dtype=float))))


def as_feature_table(features, n_states=None):
    """Accept a ConstraintSet, a list of FeatureFunction, or a raw table."""
    if isinstance(features, ConstraintSet):
        features = features.features
    if isinstance(features, FeatureFunction):
        features = [features]
    if isinstance(features, (list, tuple)) and all(isinstance(f, FeatureFunction) for f in features):
        if not features:
            if n_states is None:
                raise ValueError("cannot infer the state count from an empty feature list")
            return np.zeros((n_states, 0))
        features = np.column_stack([f.values for f in features])
    return check_feature_table(features, n_states)


def dual_objective(table, targets, multipliers, reference=None):
    """Value of the dual ``ln Z(lam) + lam . c`` for a feature table."""
    F = check_feature_table(table)
    lam = np.asarray(multipliers, dtype=float)
    log_ref = _log_reference(reference, F.shape[0])
    return float(logsumexp(log_ref - F @ lam) + lam @ np.asarray(targets, dtype=float))


def _log_reference(reference, n):
    if reference is None:
        return np.zeros(n)
    r = np.asarray(reference, dtype=float)
    if r.shape != (n,) or np.any(r < 0):
        raise ValueError("reference measure must be non-negative with one entry per state")
    with np.errstate(divide="ignore"):
        return np.log(r)


def _newton_dual(F, c, log_ref, tol, max_iter, ridge=0.0):
    """Minimize ln Z(lam) + lam.c + ridge |lam|^2 by damped Newton.

    ``ridge > 0`` is the soft-constraint variant; the stopping rule is then on
    the penalized gradient rather than on the raw moment residual.
    """
    m = F.shape[1]
    lam = np.zeros(m)

    def evaluate(lam):
        logits = log_ref - F @ lam
        log_z = logsumexp(logits)
        p = np.exp(logits - log_z)
        return log_z + lam @ c + ridge * lam @ lam, log_z, p

    value, log_z, p = evaluate(lam)
    for it in range(max_iter + 1):
        mean = p @ F
        grad = c - mean + 2.0 * ridge * lam
        if np.max(np.abs(grad), initial=0.0) < tol:
            return lam, log_z, p, it
        if it == max_iter:
            break
        centred = F - mean
        hess = centred.T @ (centred * p[:, None]) + 2.0 * ridge * np.eye(m)
        step = np.linalg.lstsq(hess, -grad, rcond=1e-14)[0]
        slope = grad @ step
        if slope >= 0:
            step, slope = -grad, -grad @ grad
        t = 1.0
        grad_norm = np.linalg.norm(grad)
        while True:
            trial = lam + t * step
            t_value, t_log_z, t_p = evaluate(trial)
            if np.isfinite(t_value) and t_value <= value + 1e-4 * t * slope:
                break
            # rounding noise dominates the dual near the optimum; accept gradient progress
            t_grad = c - t_p @ F + 2.0 * ridge * trial
            if np.isfinite(t_value) and np.linalg.norm(t_grad) < grad_norm and t_value <= value + 1e-12 * max(1.0, abs(value)):
                break
            t *= 0.5
            if t < 1e-14:
                break
        lam, value, log_z, p = trial, t_value, t_log_z, t_p
    raise NonConvergence(
        f"dual Newton did not converge in {max_iter} iterations",
        residuals=np.abs(p @ F - c),
    )


def _restrict_boundary(F, c, support):
    """Shrink the support for targets sitting on a face of the moment range.

    Returns the reduced support mask, the multiplier signs for boundary
    constraints (+1 at the minimum, -1 at the maximum, 0 otherwise), and the
    mask of constraints still requiring an interior solve.
    """
    n, m = F.shape
    signs = np.zeros(m)
    active = np.ones(m, dtype=bool)
    for i in range(m):
        lo, hi = F[support, i].min(), F[support, i].max()
        span = hi - lo
        slack = BOUNDARY_SHRINK * max(1.0, abs(lo), abs(hi))
        if c[i] < lo - slack or c[i] > hi + slack:
            raise InfeasibleConstraints(
                f"target {c[i]!r} for constraint {i} outside achievable range [{lo!r}, {hi!r}]"
            )
    changed = True
    while changed:
        changed = False
        for i in np.flatnonzero(active):
            vals = F[support, i]
            lo, hi = vals.min(), vals.max()
            slack = BOUNDARY_SHRINK * max(1.0, abs(lo), abs(hi))
            if hi - lo <= slack:
                if abs(c[i] - lo) > slack:
                    raise DegenerateBoundary(
                        f"constraint {i} is pinned to {lo!r} on the reduced support but targets {c[i]!r}"
                    )
                active[i] = False
                changed = True
            elif abs(c[i] - lo) <= slack:
                support = support & (np.abs(F[:, i] - lo) <= slack)
                signs[i], active[i], changed = 1.0, False, True
            elif abs(c[i] - hi) <= slack:
                support = support & (np.abs(F[:, i] - hi) <= slack)
                signs[i], active[i], changed = -1.0, False, True
            elif c[i] < lo or c[i] > hi:
                raise DegenerateBoundary(
                    f"constraint {i} target {c[i]!r} unreachable once boundary constraints fix the support"
                )
            if not support.any():
                raise DegenerateBoundary("boundary constraints admit no common vertex")
    return support, signs, active


def solve_maxent(space, constraints, opts=None, *, reference=None):
    """Maximum-entropy distribution matching feature expectations.

    Parameters
    ----------
    space : StateSpace or int
    constraints : ConstraintSet
    opts : SolverOptions, optional
    reference : array-like, optional
        Base measure; the result then minimizes KL(p || reference) subject to
        the constraints.  Uniform when omitted.

    Returns
    -------
    MaxEntSolution

    Raises
    ------
    InfeasibleConstraints
        A target lies outside the range of its feature.
    DegenerateBoundary
        Targets on the range boundary that no vertex satisfies jointly.
    NonConvergence
        Iteration cap hit, typically from joint infeasibility of targets
        that are individually in range.
    """
    opts = opts or SolverOptions()
    n = space if isinstance(space, (int, np.integer)) else len(space)
    if isinstance(constraints, ConstraintSet):
        F = constraints.table(n)
        c = constraints.targets
    else:
        F, c = constraints
        F = check_feature_table(F, n)
        c = np.atleast_1d(np.asarray(c, dtype=float))
    if F.shape[1] != c.shape[0]:
        raise ValueError("one target per feature is required")
    log_ref = _log_reference(reference, n)
    support = np.isfinite(log_ref)
    if not support.any():
        raise ValueError("reference measure has empty support")

    support, signs, active = _restrict_boundary(F, c, support)
    Fs, cs = F[support][:, active], c[active]
    lam_active, log_z, p_support, iters = _newton_dual(
        Fs, cs, log_ref[support], opts.tolerance, opts.max_iter
    )
    p = np.zeros(n)
    p[support] = p_support
    multipliers = np.zeros(F.shape[1])
    multipliers[signs > 0] = np.inf
    multipliers[signs < 0] = -np.inf
    multipliers[active] = lam_active
    residuals = np.abs(p @ F - c)
    return MaxEntSolution(
        multipliers=multipliers,
        log_partition=float(log_z),
        distribution=DiscreteDistribution(p),
        entropy=shannon_entropy(p),
        residuals=residuals,
        iterations=iters,
    )


def solve_soft_maxent(table, targets, precision, opts=None, reference=None):
    """Minimize ``sum q ln q + precision * |c - E_q f|^2`` over the simplex.

    This is the variational free energy with a factorized Gaussian
    constraint likelihood (constant dropped).  Its minimizer stays in the
    exponential family ``q ~ exp(-mu . f)`` with ``mu = 2 precision (E_q f - c)``,
    which is found by the dual Newton iteration with a quadratic penalty
    ``|mu|^2 / (4 precision)``.
    """
    opts = opts or SolverOptions()
    F = check_feature_table(table)
    c = np.atleast_1d(np.asarray(targets, dtype=float))
    log_ref = _log_reference(reference, F.shape[0])
    if precision < 0:
        raise ValueError("precision must be non-negative")
    if precision == 0:
        logits = log_ref
        return np.zeros(F.shape[1]), np.exp(logits - logsumexp(logits))
    lam, _, p, _ = _newton_dual(F, c, log_ref, opts.tolerance, opts.max_iter, ridge=1.0 / (4.0 * precision))
    return lam, p


def _boltzmann_weights(E, lam):
    logits = -lam * E
    log_z = logsumexp(logits)
    return np.exp(logits - log_z), float(log_z)


def analytic_boltzmann(energies, mean_energy):
    """Closed-form Boltzmann solution ``p ~ exp(-lam E)`` for a target mean.

    The multiplier is the root of the monotone map ``lam -> E_lam[E]``.
    """
    if isinstance(energies, FeatureFunction):
        feature = energies
    else:
        feature = FeatureFunction("energy", energies)
    E = feature.values
    lo, hi = E.min(), E.max()
    slack = BOUNDARY_SHRINK * max(1.0, abs(lo), abs(hi))
    if not (lo + slack < mean_energy < hi - slack):
        raise InfeasibleConstraints(
            f"mean energy {mean_energy!r} must lie strictly inside ({lo!r}, {hi!r})"
        )

    def excess(lam):
        return _boltzmann_weights(E, lam)[0] @ E - mean_energy

    bound = 1.0
    while excess(-bound) <= 0 or excess(bound) >= 0:
        bound *= 2.0
        if bound > 1e6:
            raise InfeasibleConstraints("mean energy too close to the boundary to bracket")
    lam = brentq(excess, -bound, bound, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    p, log_z = _boltzmann_weights(E, lam)
    return MaxEntSolution(
        multipliers=np.array([lam]),
        log_partition=log_z,
        distribution=DiscreteDistribution(p),
        entropy=shannon_entropy(p),
        residuals=np.array([abs(p @ E - mean_energy)]),
    )


def gaussian_multiplier(variance):
    """Multiplier on the squared deviation for a variance-constrained maxent density."""
    return 1.0 / (2.0 * variance)


def squared_deviation(grid, mean=None):
    """The variance feature ``(x - mu)^2`` on a gridded state space."""
    x = grid.coordinates
    if x is None:
        raise ValueError("a grid with coordinates is required")
    mu = 0.5 * (x[0] + x[-1]) if mean is None else mean
    return FeatureFunction("squared_deviation", (x - mu) ** 2)


def analytic_gaussian(variance, grid):
    """Grid-discretized Gaussian as the variance-constrained maxent solution.

    The grid must be symmetric about its midpoint (taken as the mean) and
    extend at least six standard deviations to either side.
    """
    if not variance > 0:
        raise ValueError("variance must be positive")
    x = grid.coordinates
    if x is None or x.size < 3:
        raise ValueError("a grid with coordinates is required")
    mu = 0.5 * (x[0] + x[-1])
    scale = max(1.0, np.abs(x).max())
    if not np.allclose(x[::-1], 2 * mu - x, atol=1e-9 * scale, rtol=0):
        raise ValueError("grid must be symmetric about its midpoint")
    sigma = np.sqrt(variance)
    half_width = 0.5 * (x[-1] - x[0])
    if half_width < 6 * sigma * (1 - 1e-9):
        raise GridTooNarrow(
            f"grid half-width {half_width!r} below six standard deviations ({6 * sigma!r})"
        )
    feature = squared_deviation(grid, mu)
    lam = gaussian_multiplier(variance)
    p, log_z = _boltzmann_weights(feature.values, lam)
    return MaxEntSolution(
        multipliers=np.array([lam]),
        log_partition=log_z,
        distribution=DiscreteDistribution(p),
        entropy=shannon_entropy(p),
        residuals=np.array([abs(p @ feature.values - variance)]),
    )


class MaxEntModel(DensityMixin, BaseEstimator):
    """Estimator wrapper around :func:`solve_maxent`.

    ``fit`` takes samples of state indices and matches the empirical feature
    means, which is the maximum-likelihood fit within the exponential family
    spanned by ``features``.  ``fit_targets`` solves for explicit targets.

    Parameters
    ----------
    features : array-like of shape (n_states, n_features) or list of FeatureFunction
    tol : float
        Residual tolerance of the dual solver.
    max_iter : int
    reference : array-like, optional
        Base measure over states.
    """

    def __init__(self, features, tol=1e-10, max_iter=200, reference=None):
        self.features = features
        self.tol = tol
        self.max_iter = max_iter
        self.reference = reference

    def _table(self):
        return as_feature_table(self.features)

    def fit(self, X, y=None, sample_weight=None):
        F = self._table()
        X = check_samples(X, F.shape[0])
        counts = np.bincount(X, weights=sample_weight, minlength=F.shape[0])
        if counts.sum() <= 0:
            raise ValueError("no samples to fit")
        return self.fit_targets((counts / counts.sum()) @ F)

    def fit_targets(self, targets):
        F = self._table()
        opts = SolverOptions(tolerance=self.tol, max_iter=self.max_iter)
        sol = solve_maxent(F.shape[0], (F, targets), opts, reference=self.reference)
        self.solution_ = sol
        self.targets_ = np.atleast_1d(np.asarray(targets, dtype=float))
        self.multipliers_ = sol.multipliers
        self.log_partition_ = sol.log_partition
        self.distribution_ = sol.weights
        self.entropy_ = sol.entropy
        self.residuals_ = sol.residuals
        self.n_features_in_ = F.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "distribution_")
        X = check_samples(X, self.distribution_.shape[0])
        return self.distribution_[X]

    def score_samples(self, X):
        with np.errstate(divide="ignore"):
            return np.log(self.predict_proba(X))

    def score(self, X, y=None):
        return float(np.mean(self.score_samples(X)))

"""Learning abstraction vectors by minimizing the leakiness loss.

Gradients are central finite differences around the inner maxent solve.
Every learner descends with a backtracking (Armijo) line search, so loss
traces are nonincreasing by construction.  With ``method="newton"`` the
search direction is preconditioned by a finite-difference Hessian, which
matters for the tight location tolerances the reduction checks need.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_distribution, check_positive, empirical_distribution
from .evaluation import AbstractionModel, queryset_loss
from .exceptions import (
    DegenerateBoundary,
    InfeasibleConstraints,
    InfeasibleStep,
    NonConvergence,
)
from .maxent import FeatureFunction, SolverOptions, as_feature_table, solve_maxent
from .queries import QuerySet, apply_query, divergence

INNER_OPTS = SolverOptions(tolerance=1e-12, max_iter=200)
INTERIOR_MARGIN = 1e-3


@dataclass(frozen=True)
class LearningConfig:
    step_size: float = 1.0
    max_iters: int = 200
    fd_step: float = 1e-4
    tolerance: float = 1e-8
    seed: int = 0
    method: str = "newton"
    strict: bool = False

    def __post_init__(self):
        check_positive(self.step_size, "step_size")
        check_positive(self.fd_step, "fd_step")
        check_positive(self.tolerance, "tolerance")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if not self.tolerance < 1:
            raise ValueError("tolerance must be below 1")
        if self.method not in ("newton", "gradient"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class OptimizeResult:
    x: np.ndarray
    loss: float
    trace: list
    converged: bool
    gradient_norm: float


def _safe(fun):
    def wrapped(x):
        try:
            value = fun(x)
        except (InfeasibleConstraints, DegenerateBoundary, NonConvergence):
            return np.inf
        return value if np.isfinite(value) else np.inf

    return wrapped


def _inside(x, lower, upper):
    return np.all(x >= lower) and np.all(x <= upper)


def fd_gradient(fun, x, h, lower=None, upper=None):
    """Central-difference gradient; one-sided next to a box bound."""
    x = np.asarray(x, dtype=float)
    lower = np.full_like(x, -np.inf) if lower is None else lower
    upper = np.full_like(x, np.inf) if upper is None else upper
    f0 = None
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        up_ok, down_ok = x[i] + h <= upper[i], x[i] - h >= lower[i]
        if up_ok and down_ok:
            g[i] = (fun(x + e) - fun(x - e)) / (2 * h)
        else:
            f0 = fun(x) if f0 is None else f0
            g[i] = (fun(x + e) - f0) / h if up_ok else (f0 - fun(x - e)) / h
    return g


def fd_hessian(fun, x, h):
    x = np.asarray(x, dtype=float)
    d = x.size
    H = np.empty((d, d))
    f0 = fun(x)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h
        H[i, i] = (fun(x + ei) - 2 * f0 + fun(x - ei)) / h**2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h
            H[i, j] = H[j, i] = (
                fun(x + ei + ej) - fun(x + ei - ej) - fun(x - ei + ej) + fun(x - ei - ej)
            ) / (4 * h**2)
    return H


def fd_ratio_test(fun, x, h):
    """Richardson ratio of central-difference gradients at h, h/2 and h/4.

    For a smooth function the truncation error is O(h^2), so successive
    differences shrink by a factor close to 4.
    """
    g1, g2, g4 = (fd_gradient(fun, x, s) for s in (h, h / 2, h / 4))
    return np.linalg.norm(g1 - g2) / np.linalg.norm(g2 - g4)


def _newton_direction(fun, x, g, h, lower, upper):
    hh = max(h, 1e-4)
    if not (_inside(x - hh, lower, upper) and _inside(x + hh, lower, upper)):
        return -g
    H = fd_hessian(fun, x, hh)
    if not np.all(np.isfinite(H)):
        return -g
    evals, evecs = np.linalg.eigh(0.5 * (H + H.T))
    floor = 1e-10 * max(1.0, np.abs(evals).max())
    if evals.min() <= floor:
        return -g
    return -(evecs @ ((evecs.T @ g) / evals))


def minimize_fd(fun, x0, cfg, lower=None, upper=None):
    """Minimize ``fun`` with finite-difference gradients and backtracking.

    Infeasible points (the inner solve raising) evaluate to +inf and are
    rejected by the line search.  Returns an :class:`OptimizeResult` whose
    ``trace`` rows are ``(iteration, loss, step)``.
    """
    fun = _safe(fun)
    x = np.array(x0, dtype=float)
    lower = np.full_like(x, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    upper = np.full_like(x, np.inf) if upper is None else np.asarray(upper, dtype=float)
    f = fun(x)
    if not np.isfinite(f):
        raise InfeasibleStep("initial point is infeasible")
    trace = [(0, f, 0.0)]
    converged = False
    gnorm = np.inf
    if x.size == 0:
        return OptimizeResult(x, f, trace, True, 0.0)
    for it in range(1, cfg.max_iters + 1):
        g = fd_gradient(fun, x, cfg.fd_step, lower, upper)
        if not np.all(np.isfinite(g)):
            g = np.where(np.isfinite(g), g, 0.0)
        gnorm = float(np.linalg.norm(g))
        if gnorm < cfg.tolerance:
            converged = True
            break
        if cfg.method == "newton":
            d, t = _newton_direction(fun, x, g, cfg.fd_step, lower, upper), 1.0
            if d is not None and g @ d >= 0:
                d = -g
        else:
            d, t = -g, cfg.step_size
        slope = g @ d
        accepted = feasible_seen = False
        for _ in range(60):
            trial = x + t * d
            if _inside(trial, lower, upper):
                ft = fun(trial)
                feasible_seen = feasible_seen or np.isfinite(ft)
                if ft <= f + 1e-4 * t * slope:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            if not feasible_seen and t * np.linalg.norm(d) > 1e-14:
                raise InfeasibleStep("line search found no feasible trial point", trace=trace)
            # stationary to working precision
            converged = gnorm < 1e3 * cfg.tolerance
            break
        stalled = f - ft <= 4 * np.finfo(float).eps * max(1.0, abs(f))
        x, f = trial, ft
        trace.append((it, f, t))
        if stalled:
            # gradient is at the finite-difference noise floor
            converged = gnorm < 1e3 * cfg.tolerance
            break
    if not converged and cfg.strict:
        raise NonConvergence(f"learner stopped with gradient norm {gnorm!r}", trace=trace)
    return OptimizeResult(x, f, trace, converged, gnorm)


def feature_bounds(table, margin=0.0):
    """Per-feature achievable range, shrunk by ``margin`` of its span."""
    lo, hi = table.min(axis=0), table.max(axis=0)
    span = hi - lo
    return lo + margin * span, hi - margin * span


def interior_start(means, table, margin=INTERIOR_MARGIN):
    """Clip feature means into the interior of their ranges."""
    lo, hi = feature_bounds(table, margin)
    return np.clip(means, lo, hi)


def _as_dataset(system):
    if isinstance(system, (list, tuple)):
        return [check_distribution(s, name="datapoint") for s in system]
    return [check_distribution(system, name="system")]


def _as_features(features):
    if isinstance(features, FeatureFunction):
        return (features,)
    return tuple(features)


def _dataset_loss(dataset, features, targets, qs, div, opts):
    n = dataset[0].shape[0]
    model = AbstractionModel(features, targets)
    sol = solve_maxent(n, model.constraints, opts)
    return float(np.mean([queryset_loss(p, model, qs, div, solution=sol).total for p in dataset]))


@dataclass
class TargetFit:
    model: AbstractionModel
    loss: float
    trace: list
    converged: bool
    gradient_norm: float


def learn_targets(system, features, qs, cfg=None, *, div=None, init=None, opts=INNER_OPTS):
    """Fit the abstraction vector for a fixed feature dictionary.

    Parameters
    ----------
    system : array-like or list of array-like
        A distribution over states, or a dataset of them (the loss is then
        averaged over datapoints).
    features : list of FeatureFunction
    qs : QuerySet or Query
    cfg : LearningConfig
    init : array-like, optional
        Starting targets.  Defaults to the empirical feature means, nudged
        into the interior of each feature's range.
    """
    cfg = cfg or LearningConfig()
    qs = qs if isinstance(qs, QuerySet) else QuerySet.single(qs)
    dataset = _as_dataset(system)
    features = _as_features(features)
    n = dataset[0].shape[0]
    F = as_feature_table(list(features), n)
    if init is None:
        init = interior_start(np.mean(dataset, axis=0) @ F, F)
    lower, upper = feature_bounds(F)

    def loss(a):
        return _dataset_loss(dataset, features, a, qs, div, opts)

    res = minimize_fd(loss, np.asarray(init, dtype=float), cfg, lower, upper)
    return TargetFit(AbstractionModel(features, res.x), res.loss, res.trace, res.converged, res.gradient_norm)


@dataclass
class EncoderAbstraction:
    """Per-datapoint abstraction vectors; the table entries are the parameters."""

    table: np.ndarray
    features: tuple = ()

    def __getitem__(self, i):
        return self.table[i]

    def __len__(self):
        return self.table.shape[0]


@dataclass
class EncoderFit:
    model: AbstractionModel
    encoder: EncoderAbstraction
    loss: float
    trace: list
    converged: bool


def learn_encoder(
    dataset,
    shared_features,
    encoder_features,
    qs,
    cfg=None,
    *,
    div=None,
    tied=False,
    max_sweeps=50,
    init_shared=None,
    init_encoder=None,
    opts=INNER_OPTS,
):
    """Alternate between shared targets ``a`` and per-datapoint targets.

    Each datapoint ``j`` is scored against m([a, a_j]), the maxent
    distribution under the concatenated constraint set.  One sweep optimizes
    ``a`` with every ``a_j`` fixed, then each ``a_j`` with ``a`` fixed.
    ``tied=True`` forces a single encoder vector shared by all datapoints.
    """
    cfg = cfg or LearningConfig()
    qs = qs if isinstance(qs, QuerySet) else QuerySet.single(qs)
    data = _as_dataset(dataset)
    shared, enc = _as_features(shared_features), _as_features(encoder_features)
    if {f.name for f in shared} & {f.name for f in enc}:
        raise ValueError("shared and encoder feature blocks must be disjoint")
    n = data[0].shape[0]
    Fs = as_feature_table(list(shared), n)
    Fe = as_feature_table(list(enc), n)
    ds, de = Fs.shape[1], Fe.shape[1]
    features = shared + enc
    mean_p = np.mean(data, axis=0)
    a = interior_start(mean_p @ Fs, Fs) if init_shared is None else np.asarray(init_shared, float)
    if init_encoder is not None:
        A = np.array(init_encoder, dtype=float).reshape(len(data), de)
    elif tied:
        A = np.tile(interior_start(mean_p @ Fe, Fe), (len(data), 1))
    else:
        A = np.array([interior_start(p @ Fe, Fe) for p in data]).reshape(len(data), de)
    lo_s, hi_s = feature_bounds(Fs)
    lo_e, hi_e = feature_bounds(Fe)

    def point_loss(j, a_shared, a_enc):
        model = AbstractionModel(features, np.concatenate([a_shared, a_enc]))
        return queryset_loss(data[j], model, qs, div, opts).total

    def joint_loss(a_shared, A):
        return float(np.mean([point_loss(j, a_shared, A[j]) for j in range(len(data))]))

    current = _safe(lambda _: joint_loss(a, A))(None)
    if not np.isfinite(current):
        raise InfeasibleStep("initial abstraction is infeasible")
    trace = [(0, current, 0.0)]
    converged = False
    for sweep in range(1, max_sweeps + 1):
        if ds:
            a = minimize_fd(lambda x: joint_loss(x, A), a, cfg, lo_s, hi_s).x
        if de and tied:
            shared_enc = minimize_fd(
                lambda x: joint_loss(a, np.tile(x, (len(data), 1))), A[0], cfg, lo_e, hi_e
            ).x
            A = np.tile(shared_enc, (len(data), 1))
        elif de:
            for j in range(len(data)):
                A[j] = minimize_fd(lambda x, j=j: point_loss(j, a, x), A[j], cfg, lo_e, hi_e).x
        new = joint_loss(a, A)
        trace.append((sweep, new, 1.0))
        if current - new <= cfg.tolerance:
            converged = True
            current = min(current, new)
            break
        current = new
    if not converged and cfg.strict:
        raise NonConvergence("encoder alternation did not settle", trace=trace)
    return EncoderFit(
        AbstractionModel(shared, a), EncoderAbstraction(A, enc), current, trace, converged
    )


@dataclass
class DimensionSelection:
    index: int
    table: list = field(default_factory=list)
    fits: list = field(default_factory=list)


def select_dimension(system, candidates, qs, cfg=None, plateau_delta=0.01, *, abs_tol=1e-9, div=None):
    """Pick the smallest candidate feature set whose loss has plateaued.

    A candidate is accepted when its fitted loss is within
    ``(1 + plateau_delta) * best + abs_tol``; the absolute slack keeps the
    rule meaningful when the best loss is zero to solver precision.
    Candidate failures are recorded in the table and skipped.
    """
    check_positive(plateau_delta, "plateau_delta")
    table, fits = [], []
    for i, features in enumerate(candidates):
        features = _as_features(features)
        row = {"index": i, "dimension": len(features), "loss": np.inf, "error": None}
        fit = None
        try:
            if features:
                fit = learn_targets(system, features, qs, cfg, div=div)
                row["loss"] = fit.loss
            else:
                p = _as_dataset(system)
                row["loss"] = float(np.mean([
                    queryset_loss(d, AbstractionModel((), np.zeros(0)), qs, div, INNER_OPTS).total
                    for d in p
                ]))
        except Exception as exc:  # recorded, not fatal
            row["error"] = f"{type(exc).__name__}: {exc}"
        table.append(row)
        fits.append(fit)
    losses = np.array([r["loss"] for r in table])
    if not np.any(np.isfinite(losses)):
        raise NonConvergence("every candidate feature set failed")
    best = losses[np.isfinite(losses)].min()
    threshold = (1 + plateau_delta) * best + abs_tol
    index = next(
        r["index"]
        for r in sorted(table, key=lambda r: (r["dimension"], r["index"]))
        if r["loss"] <= threshold
    )
    return DimensionSelection(index, table, fits)


class CompositeQueryModel:
    """Piecewise-linear approximation of Q o m over a tensor grid of targets.

    Exact at nodes.  ``axes`` holds one strictly increasing coordinate array
    per abstraction dimension; ``outputs`` has shape ``(*grid_shape, n_out)``.
    """

    def __init__(self, axes, outputs, query_name=""):
        self.axes = [np.asarray(ax, dtype=float) for ax in axes]
        for ax in self.axes:
            if ax.ndim != 1 or ax.size < 2 or np.any(np.diff(ax) <= 0):
                raise ValueError("node coordinates must be strictly increasing with at least two nodes")
        self.outputs = np.asarray(outputs, dtype=float)
        self.query_name = query_name
        if len(self.axes) > 1:
            self._interp = RegularGridInterpolator(self.axes, self.outputs, method="linear")

    @property
    def nodes(self):
        if len(self.axes) == 1:
            return self.axes[0][:, None]
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def __call__(self, a):
        a = np.atleast_1d(np.asarray(a, dtype=float))
        if len(self.axes) == 1:
            ax = self.axes[0]
            if not ax[0] <= a[0] <= ax[-1]:
                raise ValueError(f"abstraction {a[0]!r} outside the node range")
            out = np.array([np.interp(a[0], ax, col) for col in self.outputs.T])
        else:
            out = self._interp(a[None, :])[0]
        return out / out.sum()


@dataclass
class CompositeValidation:
    max_divergence: float
    node_max_divergence: float
    midpoints: np.ndarray
    divergences: np.ndarray


def _composite_axes(abstraction_grid):
    grid = abstraction_grid
    if isinstance(grid, np.ndarray) and grid.ndim == 1:
        return [grid]
    if isinstance(grid, np.ndarray) and grid.ndim == 2 and grid.shape[1] == 1:
        return [grid[:, 0]]
    if isinstance(grid, (list, tuple)) and all(np.ndim(ax) == 1 and np.size(ax) > 1 for ax in grid):
        return [np.asarray(ax, dtype=float) for ax in grid]
    return [np.asarray(grid, dtype=float).ravel()]


def learn_composite_query(abstraction_grid, features, query, *, div=None, opts=INNER_OPTS):
    """Tabulate Q(m(a)) at grid nodes and validate the interpolant at midpoints."""
    features = _as_features(features)
    axes = _composite_axes(abstraction_grid)
    if len(axes) != len(features):
        raise ValueError("one grid axis per feature is required")
    n = features[0].values.shape[0]

    def exact(a):
        sol = solve_maxent(n, AbstractionModel(features, a).constraints, opts)
        return apply_query(query, sol.weights)

    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=1)
    outputs = []
    for node in nodes:
        try:
            outputs.append(exact(node))
        except (InfeasibleConstraints, DegenerateBoundary) as exc:
            raise type(exc)(f"node {node.tolist()} is infeasible: {exc}") from exc
    outputs = np.array(outputs).reshape(*[ax.size for ax in axes], -1)
    model = CompositeQueryModel(axes, outputs, query.name)

    node_div = max(divergence(div, exact(nd), model(nd)) for nd in nodes[:: max(1, len(nodes) // 20)])
    mids = [0.5 * (ax[:-1] + ax[1:]) for ax in axes]
    mid_mesh = np.meshgrid(*mids, indexing="ij")
    midpoints = np.stack([m.ravel() for m in mid_mesh], axis=1)
    divs = np.array([divergence(div, exact(mp), model(mp)) for mp in midpoints])
    return model, CompositeValidation(float(divs.max()), float(node_div), midpoints, divs)


class AbstractionLearner(BaseEstimator):
    """Estimator interface to :func:`learn_targets`.

    ``fit(X)`` accepts either a probability vector over states or a 1-D
    array of sampled state indices (``samples=True``).

    Parameters
    ----------
    features : list of FeatureFunction
    queries : QuerySet or Query
    divergence : DivergenceSpec, optional
    step_size, max_iter, fd_step, tol, method : learner settings
    samples : bool
        Interpret ``X`` as state indices rather than a distribution.
    """

    def __init__(
        self,
        features,
        queries,
        divergence=None,
        step_size=1.0,
        max_iter=200,
        fd_step=1e-4,
        tol=1e-8,
        method="newton",
        samples=False,
        random_state=0,
    ):
        self.features = features
        self.queries = queries
        self.divergence = divergence
        self.step_size = step_size
        self.max_iter = max_iter
        self.fd_step = fd_step
        self.tol = tol
        self.method = method
        self.samples = samples
        self.random_state = random_state

    def _system(self, X):
        n = _as_features(self.features)[0].values.shape[0]
        if self.samples:
            return empirical_distribution(X, n)
        return check_distribution(X, n, name="X")

    def fit(self, X, y=None, init=None):
        cfg = LearningConfig(self.step_size, self.max_iter, self.fd_step, self.tol, self.random_state, self.method)
        fit = learn_targets(self._system(X), self.features, self.queries, cfg, div=self.divergence, init=init)
        self.targets_ = fit.model.targets
        self.model_ = fit.model
        self.loss_ = fit.loss
        self.loss_trace_ = fit.trace
        self.converged_ = fit.converged
        self.n_features_in_ = fit.model.dimension
        return self

    def transform(self, X):
        """Maxent reconstruction m(a) of the fitted abstraction (one row)."""
        check_is_fitted(self, "targets_")
        n = self.model_.features[0].values.shape[0]
        return solve_maxent(n, self.model_.constraints, INNER_OPTS).weights[None, :]

    def score(self, X, y=None):
        """Negative query-set loss of the fitted abstraction on ``X``."""
        check_is_fitted(self, "targets_")
        return -queryset_loss(self._system(X), self.model_, self.queries, self.divergence, INNER_OPTS).total

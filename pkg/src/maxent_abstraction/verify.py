"""Self-check suite: every build exit criterion as a measured quantity.

Each check returns named measurements with tolerances.  The ``strict``
profile divides every nonzero tolerance by ten; exact (zero-tolerance)
measurements are unaffected.
"""

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import bisect

from . import maxent as _maxent
from .abstractability import TargetDensity, abstractability_score
from .bridge import (
    Dataset,
    JointDistribution,
    PriorSpec,
    VIProblem,
    hardest_query_check,
    info_decomposition_check,
    infomax_bruteforce_check,
    mle_map_reduction_check,
    vi_maxent_check,
)
from .dynamics import (
    MarkovSystem,
    StateEncoder,
    dynamical_loss,
    induced_two_state_map,
    learn_abstract_dynamics,
    marginal_constraints,
    path_marginals,
    rollout_ensemble,
    solve_maxcal,
)
from .evaluation import AbstractionModel, perfect_abstraction_check, queryset_loss
from .learning import INNER_OPTS, LearningConfig, fd_ratio_test, learn_targets
from .maxent import ConstraintSet, FeatureFunction, StateSpace, solve_maxent, squared_deviation
from .queries import Query, QuerySet, kl_divergence

PROFILES = {"default": 1.0, "strict": 0.1}


@dataclass
class Measurement:
    label: str
    value: float
    tolerance: float
    # "below": value < tol (value <= tol when tol is 0); "above": value >= tol
    sense: str = "below"

    @property
    def passed(self):
        if not np.isfinite(self.value):
            return False
        if self.sense == "above":
            return self.value >= self.tolerance
        if self.tolerance == 0:
            return self.value <= 0
        return self.value < self.tolerance

    @property
    def margin(self):
        return self.value - self.tolerance if self.sense == "above" else self.tolerance - self.value


@dataclass
class CheckResult:
    number: int
    name: str
    measurements: list = field(default_factory=list)
    seconds: float = 0.0
    error: str | None = None

    @property
    def passed(self):
        return self.error is None and all(m.passed for m in self.measurements)

    @property
    def margin(self):
        if not self.measurements:
            return float("nan")
        return min(m.margin for m in self.measurements)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        worst = min(self.measurements, key=lambda m: m.margin) if self.measurements else None
        detail = self.error or (f"{worst.label}={worst.value:.3e} tol={worst.tolerance:.1e}" if worst else "")
        return f"[{status}] {self.number:2d} {self.name}: {detail}"


@dataclass
class SuiteReport:
    profile: str
    checks: list

    @property
    def passed(self):
        return all(c.passed for c in self.checks)


class _Collector:
    def __init__(self, scale):
        self.scale = scale
        self.items = []

    def below(self, label, value, tol):
        self.items.append(Measurement(label, float(value), tol * self.scale))

    def exact(self, label, value):
        self.items.append(Measurement(label, float(value), 0.0))

    def within(self, label, value, lo, hi):
        """``lo <= value <= hi`` as two one-sided measurements (not scaled)."""
        self.items.append(Measurement(f"{label}>={lo}", float(value), lo, "above"))
        self.items.append(Measurement(f"{label}<={hi}", -float(value), -hi, "above"))


def _bisect_boltzmann(E, target):
    def excess(lam):
        w = np.exp(-lam * (E - E.min()))
        return w @ E / w.sum() - target

    return bisect(excess, -50.0, 50.0, xtol=1e-14, maxiter=500)


def check_boltzmann(m):
    cases = [([0.0, 1.0], 1.0 / (1.0 + np.e)), ([0.0, 1.0, 2.0], 0.6), ([0.0, 1.0, 3.0, 7.0], 2.5), ([-1.0, 0.5, 2.0, 4.0], 0.2)]
    res = lam_err = shape_err = 0.0
    for E, target in cases:
        E = np.asarray(E)
        sol = solve_maxent(E.size, ConstraintSet((FeatureFunction("energy", E),), [target]), INNER_OPTS)
        lam = _bisect_boltzmann(E, target)
        p_oracle = np.exp(-lam * E) / np.exp(-lam * E).sum()
        res = max(res, sol.residuals.max())
        lam_err = max(lam_err, abs(sol.multipliers[0] - lam))
        shape_err = max(shape_err, np.abs(sol.weights - p_oracle).max())
    m.below("residual", res, 1e-8)
    m.below("multiplier_error", lam_err, 1e-6)
    m.below("distribution_error", shape_err, 1e-6)


def check_gaussian(m):
    sigma = 1.0
    grid = StateSpace.grid(-6 * sigma, 6 * sigma, 0.01)
    feature = squared_deviation(grid, 0.0)
    sol = solve_maxent(len(grid), ConstraintSet((feature,), [sigma**2]), INNER_OPTS)
    analytic = _maxent.analytic_gaussian(sigma**2, grid)
    lam_expected = _maxent.gaussian_multiplier(sigma**2)
    m.below("multiplier_rel_error", abs(sol.multipliers[0] - lam_expected) / lam_expected, 1e-6)
    m.below("kl", kl_divergence(sol.weights, analytic.weights), 1e-6)


def fixed_point_systems():
    """(name, p, features, five-query set) for three exponential-family systems."""
    out = []
    E = np.array([0.0, 1.0, 2.0, 3.0])
    p = np.exp(-0.7 * E) / np.exp(-0.7 * E).sum()
    qs = QuerySet(
        (
            Query.reconstruction(4),
            Query.constant([0.5, 0.5]),
            Query.coarse_grain([0, 0, 1, 1], "low_high"),
            Query.coarse_grain([0, 1, 0, 1], "parity"),
            Query.coarse_grain([0, 1, 1, 1], "ground"),
        )
    )
    out.append(("boltzmann", p, (FeatureFunction("energy", E),), qs))

    bits = np.array([[(s >> i) & 1 for i in range(4)] for s in range(16)])
    count = bits.sum(axis=1).astype(float)
    theta = 0.3
    p = theta**count * (1 - theta) ** (4 - count)
    qs = QuerySet(
        (
            Query.reconstruction(16),
            Query.constant([1.0]),
            Query.coarse_grain(count.astype(int), "popcount"),
            Query.coarse_grain((count % 2).astype(int), "popcount_parity"),
            Query.coarse_grain((count >= 2).astype(int), "majority"),
        )
    )
    out.append(("binomial", p / p.sum(), (FeatureFunction("popcount", count),), qs))

    step = 0.1
    k = np.arange(-60, 61)
    grid = StateSpace(tuple(range(k.size)), k * step, step)
    feature = FeatureFunction("squared_deviation", (k * step) ** 2)
    p = _maxent.analytic_gaussian(1.0, grid).weights
    band = np.abs(k)
    qs = QuerySet(
        (
            Query.reconstruction(k.size),
            Query.constant([0.25, 0.75]),
            Query.coarse_grain((band >= 10).astype(int), "inner"),
            Query.coarse_grain(np.digitize(band, [10, 20]), "bands"),
            Query.coarse_grain(np.digitize(band, [5, 15, 30]), "fine_bands"),
        )
    )
    out.append(("grid_gaussian", p, (feature,), qs))
    return out


def check_fixed_point(m):
    loss = gap = 0.0
    unmeasurable = 0
    for _, p, features, qs in fixed_point_systems():
        F = np.column_stack([f.values for f in features])
        model = AbstractionModel(features, p @ F)
        loss = max(loss, queryset_loss(p, model, qs, opts=INNER_OPTS).total)
        for q, _ in qs:
            if q.kind != "coarse_grain":
                continue
            rep = perfect_abstraction_check(p, model, q, opts=INNER_OPTS)
            unmeasurable += not rep.query_measurable
            gap = max(gap, abs(rep.gap))
    m.below("queryset_loss", loss, 1e-8)
    m.below("mi_gap", gap, 1e-6)
    m.exact("unmeasurable_queries", unmeasurable)


def _reduction_systems():
    E = np.array([0.0, 1.0, 2.0, 3.0])
    yield "boltzmann", np.exp(-0.5 * E) / np.exp(-0.5 * E).sum(), [FeatureFunction("energy", E)]
    count = np.array([bin(s).count("1") for s in range(8)], dtype=float)
    p = 0.35**count * 0.65 ** (3 - count)
    yield "binomial", p / p.sum(), [FeatureFunction("popcount", count)]
    x = np.linspace(-3, 3, 31)
    g = np.exp(-(x**2) / (2 * 0.8))
    yield "grid_gaussian", g / g.sum(), [FeatureFunction("squared_deviation", x**2)]


def check_mle_map(m, traces):
    gap = 0.0
    for i, (_, p, features) in enumerate(_reduction_systems()):
        ds = Dataset.draw(p, 200, seed=11 + i)
        rep = mle_map_reduction_check(ds, features)
        gap = max(gap, rep.gap)
    m.below("ml_gap", gap, 1e-6)

    E = np.array([0.0, 1.0, 2.0, 3.0])
    ds = Dataset.draw(np.exp(-0.5 * E) / np.exp(-0.5 * E).sum(), 200, seed=11)
    grid = np.linspace(0.05, 2.95, 59)
    atom = 7
    delta = mle_map_reduction_check(ds, [FeatureFunction("energy", E)], PriorSpec.delta(grid, atom))
    m.exact("delta_prior_offset", np.max(np.abs(delta.argmin_loss_targets - grid[atom])) + delta.gap)
    flat = mle_map_reduction_check(ds, [FeatureFunction("energy", E)], PriorSpec.uniform(grid))
    m.exact("uniform_prior_shift", np.max(np.abs(flat.argmin_loss_targets - flat.ml_targets)) + flat.gap)

    fit = learn_targets(ds.empirical, [FeatureFunction("energy", E)], Query.reconstruction(4), init=[0.3])
    traces.append(fit.trace)


def check_hardest_query(m, rng):
    violations = 0
    for _ in range(1000):
        n = int(rng.integers(2, 9))
        p = rng.dirichlet(np.ones(n))
        k = int(rng.integers(1, n + 1))
        g = rng.integers(0, k, size=n)
        rep = hardest_query_check(p, [Query.pushforward(g), Query.reconstruction(n)])
        violations += sum(not e.holds for e in rep.entries)
        violations += not rep.entries[1].equality
    m.exact("violations", violations)


def check_infomax(m):
    rep = infomax_bruteforce_check([0.1, 0.15, 0.3, 0.45], 2)
    m.exact("set_mismatch", len(rep.argmin_loss_set ^ rep.argmax_mi_set))


def check_chain_rule(m, rng):
    worst = 0.0
    for _ in range(1000):
        shape = tuple(int(s) for s in rng.integers(2, 5, size=3))
        worst = max(worst, info_decomposition_check(JointDistribution.random(shape, rng)).residual)
    m.below("max_residual", worst, 1e-10)


def check_maxcal(m):
    paths, sol = solve_maxcal(2, 3, opts=INNER_OPTS)
    m.below("uniform_deviation", np.abs(sol.weights - 1.0 / 16).max() + abs(paths.shape[0] - 16), 1e-12)

    system = MarkovSystem.two_state(0.3, 0.2, [0.8, 0.2])
    traj = rollout_ensemble(system, 3)
    pcs = marginal_constraints(traj, 2)
    paths, sol = solve_maxcal(2, 3, pcs, INNER_OPTS)
    marg = path_marginals(paths, sol.weights, 2)
    oracle = []
    for target in traj.marginals:
        step = solve_maxent(2, (np.eye(2)[:, :1], target[:1]), INNER_OPTS)
        oracle.append(step.weights)
    m.below("marginal_error", np.abs(marg - np.array(oracle)).max(), 1e-8)


def check_dynamics(m, traces):
    alpha, beta, T = 0.2, 0.1, 6
    system = MarkovSystem.two_state(alpha, beta, [0.9, 0.1])
    features = (FeatureFunction("p_state0", np.array([1.0, 0.0])),)
    encoder = StateEncoder.from_features(features)
    qs = QuerySet.single(Query.reconstruction(2))
    fit = learn_abstract_dynamics(system, T, encoder, qs, LearningConfig())
    W, b = induced_two_state_map(alpha, beta)
    m.below("coef_error", np.abs(fit.dynamics.coef - W).max(), 1e-4)
    m.below("intercept_error", np.abs(fit.dynamics.intercept - b).max(), 1e-4)
    traj = rollout_ensemble(system, T)
    path = dynamical_loss(traj, fit.dynamics.rollout(T), features, qs)
    m.below("path_loss", path.total, 1e-8)
    traces.append(fit.trace)


def check_abstractability(m, rng):
    step = 0.1
    grid = StateSpace.grid(-6, 6, step)
    rep = abstractability_score(TargetDensity.from_mixture(grid, [1.0], [0.0], [1.0]), 10, 1e-3)
    m.below("gaussian_score", rep.score, 0.05)
    bound_excess = rep.score - rep.entropy_bound
    for k in (2, 4, 8):
        means = 12.0 * (np.arange(k) - (k - 1) / 2)
        grid = StateSpace.grid(means[0] - 8, means[-1] + 8, 0.25)
        rep = abstractability_score(TargetDensity.from_mixture(grid, np.full(k, 1 / k), means, np.ones(k)), 10, 1e-3)
        m.below(f"mixture{k}_offset", abs(rep.score - np.log(k)), 0.05)
        bound_excess = max(bound_excess, rep.score - rep.entropy_bound)
    for _ in range(3):
        w = rng.dirichlet(np.full(15, 0.5))
        rep = abstractability_score(TargetDensity(StateSpace.grid(0, 14, 1), w), 4, 1e-3)
        bound_excess = max(bound_excess, rep.score - rep.entropy_bound)
    m.below("bound_excess", max(bound_excess, 0.0), 1e-9)


def check_vi(m):
    E = np.array([0.0, 1.0, 2.0, 3.0])
    problem = VIProblem(StateSpace.range(4), ConstraintSet((FeatureFunction("energy", E),), [1.2]))
    rep = vi_maxent_check(problem, [1, 10, 100, 1000, 1e4])
    kl = np.asarray(rep.kl_to_maxent)
    m.exact("kl_increase", max(np.max(np.diff(kl)), 0.0))
    m.below("final_kl", kl[-1], 1e-3)


def check_learner_hygiene(m, traces):
    rise = 0.0
    for trace in traces:
        losses = np.array([row[1] for row in trace])
        if losses.size > 1:
            rise = max(rise, np.max(np.diff(losses)))
    m.below("max_trace_rise", max(rise, 0.0), 1e-9)

    E = np.array([0.0, 1.0, 2.0, 3.0])
    p = np.array([0.4, 0.3, 0.2, 0.1])
    qs = QuerySet((Query.reconstruction(4), Query.coarse_grain([0, 0, 1, 1])))
    features = (FeatureFunction("energy", E),)

    def loss(a):
        return queryset_loss(p, AbstractionModel(features, a), qs, opts=INNER_OPTS).total

    bits = np.array([[(s >> i) & 1 for i in range(2)] for s in range(4)], dtype=float)
    features2 = (FeatureFunction("b0", bits[:, 0]), FeatureFunction("b1", bits[:, 1]))

    def loss2(a):
        return queryset_loss(p, AbstractionModel(features2, a), qs, opts=INNER_OPTS).total

    for label, fun, x in (("ratio_1d", loss, np.array([1.7])), ("ratio_2d", loss2, np.array([0.35, 0.6]))):
        m.within(label, fd_ratio_test(fun, x, 1e-2), 3.5, 4.5)


def run_suite(profile="default", progress=None):
    """Run every check; ``progress`` receives each finished :class:`CheckResult`."""
    if profile not in PROFILES:
        raise ValueError(f"unknown tolerance profile {profile!r}")
    scale = PROFILES[profile]
    rng = np.random.default_rng(20240607)
    traces = []
    plan = [
        (1, "boltzmann_recovery", lambda c: check_boltzmann(c)),
        (2, "gaussian_derivation", lambda c: check_gaussian(c)),
        (3, "perfect_abstraction_fixed_point", lambda c: check_fixed_point(c)),
        (4, "mle_map_reduction", lambda c: check_mle_map(c, traces)),
        (5, "hardest_query_inequality", lambda c: check_hardest_query(c, rng)),
        (6, "infomax_set_identity", lambda c: check_infomax(c)),
        (7, "mi_chain_rule", lambda c: check_chain_rule(c, rng)),
        (8, "maximum_caliber", lambda c: check_maxcal(c)),
        (9, "abstract_dynamics_recovery", lambda c: check_dynamics(c, traces)),
        (10, "abstractability_extremes", lambda c: check_abstractability(c, rng)),
        (11, "vi_limit", lambda c: check_vi(c)),
        (12, "learner_hygiene", lambda c: check_learner_hygiene(c, traces)),
    ]
    results = []
    for number, name, fn in plan:
        collector = _Collector(scale)
        start = time.perf_counter()
        error = None
        try:
            fn(collector)
        except Exception as exc:  # a crashing check is a failing check
            error = f"{type(exc).__name__}: {exc}"
        result = CheckResult(number, name, collector.items, time.perf_counter() - start, error)
        results.append(result)
        if progress is not None:
            progress(result)
    return SuiteReport(profile, results)

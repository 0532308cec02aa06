"""Numerical checks tying abstraction learning to classical statistics.

Each check computes both sides of a claimed identity by independent routes
and reports the measured gap rather than asserting it, so callers decide
the tolerance.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from ._validation import check_distribution, check_positive, check_samples, empirical_distribution
from .exceptions import EnumerationTooLarge
from .information import (
    check_joint,
    conditional_mutual_information,
    joint_from_maps,
    mutual_information,
)
from .learning import INNER_OPTS, LearningConfig, feature_bounds, learn_targets
from .maxent import ConstraintSet, StateSpace, as_feature_table, shannon_entropy, solve_maxent, solve_soft_maxent
from .queries import Query, kl_divergence

MAX_ENUM_STATES = 6
MAX_ENUM_SYMBOLS = 3
SET_TOLERANCE = 1e-12


@dataclass(frozen=True)
class Dataset:
    """Samples of state indices from a finite state space."""

    samples: np.ndarray
    n_states: int

    def __post_init__(self):
        object.__setattr__(self, "samples", check_samples(self.samples, self.n_states))
        if self.samples.size == 0:
            raise ValueError("dataset is empty")

    @property
    def empirical(self):
        return empirical_distribution(self.samples, self.n_states)

    def __len__(self):
        return self.samples.size

    @classmethod
    def draw(cls, p, size, seed=0):
        p = check_distribution(p)
        rng = np.random.default_rng(seed)
        return cls(rng.choice(p.size, size=size, p=p), p.size)


@dataclass(frozen=True)
class PriorSpec:
    """Log prior over a finite grid of candidate target vectors."""

    candidates: np.ndarray
    log_prior: np.ndarray

    def __post_init__(self):
        cand = np.asarray(self.candidates, dtype=float)
        if cand.ndim == 1:
            cand = cand[:, None]
        lp = np.asarray(self.log_prior, dtype=float).reshape(-1)
        if lp.shape[0] != cand.shape[0]:
            raise ValueError("one log-prior value per candidate is required")
        if np.any(np.isnan(lp)) or np.any(lp == np.inf) or not np.any(np.isfinite(lp)):
            raise ValueError("log prior must be finite somewhere and never +inf or NaN")
        object.__setattr__(self, "candidates", cand)
        object.__setattr__(self, "log_prior", lp)

    @classmethod
    def uniform(cls, candidates):
        cand = np.asarray(candidates, dtype=float)
        return cls(cand, np.zeros(cand.shape[0]))

    @classmethod
    def delta(cls, candidates, atom_index):
        cand = np.asarray(candidates, dtype=float)
        lp = np.full(cand.shape[0], -np.inf)
        lp[atom_index] = 0.0
        return cls(cand, lp)


@dataclass(frozen=True)
class JointDistribution:
    """Normalized joint table over two or three finite alphabets."""

    table: np.ndarray

    def __post_init__(self):
        P = check_joint(self.table)
        if P.ndim not in (2, 3):
            raise ValueError("joint tables must have two or three axes")
        object.__setattr__(self, "table", P)

    @classmethod
    def random(cls, shape, rng):
        P = rng.dirichlet(np.ones(int(np.prod(shape)))).reshape(shape)
        return cls(P / P.sum())


@dataclass(frozen=True)
class VIProblem:
    """Soft-constraint variational problem; ``precision`` is the Gaussian 1/(2 pi sigma^2)."""

    space: StateSpace
    constraints: ConstraintSet
    precision: float = 1.0

    @classmethod
    def from_sigma(cls, space, constraints, sigma):
        return cls(space, constraints, 1.0 / (2 * np.pi * check_positive(sigma, "sigma") ** 2))

    @property
    def observations(self):
        return self.constraints.targets


@dataclass
class ReductionReport:
    argmin_loss_targets: np.ndarray
    argmax_likelihood_targets: np.ndarray
    gap: float
    ml_targets: np.ndarray | None = None


@dataclass
class HardestQueryEntry:
    name: str
    mutual_information: float
    entropy: float
    injective: bool
    equality: bool

    @property
    def holds(self):
        return self.mutual_information <= self.entropy + SET_TOLERANCE and self.equality == self.injective


@dataclass
class HardestQueryReport:
    entries: list

    @property
    def holds(self):
        return all(e.holds for e in self.entries)


@dataclass
class InfoMaxReport:
    encoders: list
    losses: np.ndarray
    mutual_informations: np.ndarray
    argmin_loss_set: frozenset
    argmax_mi_set: frozenset

    @property
    def equal(self):
        return self.argmin_loss_set == self.argmax_mi_set


@dataclass
class DecompositionReport:
    mi_x_a_phi: float
    mi_x_phi: float
    redundancy: float
    residual: float

    @property
    def holds(self):
        return self.residual <= 1e-10


@dataclass
class VIReport:
    precisions: list
    kl_to_maxent: list
    maxent: np.ndarray
    solutions: list = field(default_factory=list)

    @property
    def nonincreasing(self):
        kl = np.asarray(self.kl_to_maxent)
        return bool(np.all(np.diff(kl) <= 1e-12))


def log_likelihood(samples, table, targets, opts=INNER_OPTS):
    """Sum of ln m(a)(x_i) over the samples."""
    p = solve_maxent(table.shape[0], (table, targets), opts).weights
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(p[samples])))


def _maximize_likelihood(samples, table, lower, upper):
    def neg(a):
        return -log_likelihood(samples, table, np.atleast_1d(a))

    if table.shape[1] == 1:
        res = minimize_scalar(neg, bounds=(lower[0], upper[0]), method="bounded", options={"xatol": 1e-12})
        return np.array([res.x])
    start = 0.5 * (lower + upper)
    res = minimize(neg, start, method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 20000})
    return np.asarray(res.x)


def mle_map_reduction_check(dataset, features, prior=None, cfg=None):
    """Compare reconstruction-loss minimization against likelihood maximization.

    Without a prior, route one runs the abstraction learner on the empirical
    distribution with the reconstruction query, and route two maximizes the
    sample log-likelihood with a bounded scalar or simplex search.  With a
    prior, both routes search the prior's candidate grid: ``N`` times the
    reconstruction loss minus the log prior against log-likelihood plus log
    prior.  ``ml_targets`` then holds the prior-free grid maximizer.
    """
    cfg = cfg or LearningConfig(tolerance=1e-12, max_iters=200)
    emp = dataset.empirical
    n = dataset.n_states
    F = as_feature_table(features, n)
    lower, upper = feature_bounds(F, 1e-6)

    if prior is None:
        query = Query.reconstruction(n)
        fit = learn_targets(emp, features, query, cfg, init=0.5 * (lower + upper))
        a_loss = fit.model.targets
        a_lik = _maximize_likelihood(dataset.samples, F, lower, upper)
        return ReductionReport(a_loss, a_lik, float(np.max(np.abs(a_loss - a_lik))))

    cand = prior.candidates
    if cand.shape[1] != F.shape[1]:
        raise ValueError("prior candidates must have one column per feature")
    N = len(dataset)
    kl = np.empty(cand.shape[0])
    ll = np.empty(cand.shape[0])
    for i, a in enumerate(cand):
        m = solve_maxent(n, (F, a), INNER_OPTS).weights
        kl[i] = kl_divergence(emp, m) if np.all(m[emp > 0] > 0) else np.inf
        with np.errstate(divide="ignore"):
            ll[i] = float(np.sum(np.log(m[dataset.samples])))
    with np.errstate(invalid="ignore"):
        map_loss = np.where(np.isfinite(prior.log_prior), N * kl - prior.log_prior, np.inf)
        map_lik = np.where(np.isfinite(prior.log_prior), ll + prior.log_prior, -np.inf)
    a_loss = cand[int(np.argmin(map_loss))]
    a_lik = cand[int(np.argmax(map_lik))]
    return ReductionReport(a_loss, a_lik, float(np.max(np.abs(a_loss - a_lik))), cand[int(np.argmax(ll))])


def hardest_query_check(system, queries, atol=SET_TOLERANCE):
    """I[g(X); X] <= H[X] for each deterministic query, with equality iff g is injective.

    Constant queries are accepted and carry zero information.
    """
    p = check_distribution(system, name="system")
    n = p.shape[0]
    H = shannon_entropy(p)
    support = p > 0
    entries = []
    for q in queries:
        g = q.block_map(n)
        mi = mutual_information(joint_from_maps(p, g, np.arange(n)))
        injective = np.unique(g[support]).size == int(support.sum())
        entries.append(HardestQueryEntry(q.name, mi, H, bool(injective), bool(abs(H - mi) <= atol)))
    return HardestQueryReport(entries)


def block_conditional(system, codes, opts=INNER_OPTS):
    """p(x | a(x)) as the maxent refinement of each block indicator.

    Uses the system as the reference measure and pins the indicator of the
    state's own block to one, which leaves the system restricted to the block.
    """
    p = check_distribution(system, name="system")
    out = np.zeros_like(p)
    for b in np.unique(codes[p > 0]):
        indicator = (codes == b).astype(float)[:, None]
        sol = solve_maxent(p.size, (indicator, [1.0]), opts, reference=p)
        block = codes == b
        out[block] = sol.weights[block]
    return out


def encoder_reconstruction_loss(system, codes):
    """Expected negative log reconstruction E_p[-ln p(x | a(x))]."""
    p = check_distribution(system, name="system")
    q = block_conditional(p, np.asarray(codes))
    mask = p > 0
    return float(-np.sum(p[mask] * np.log(q[mask])))


def infomax_bruteforce_check(system, encoder_alphabet_size):
    """Enumerate every deterministic encoder and compare loss and MI optima."""
    p = check_distribution(system, name="system")
    n, k = p.shape[0], int(encoder_alphabet_size)
    if n > MAX_ENUM_STATES or k > MAX_ENUM_SYMBOLS:
        raise EnumerationTooLarge(
            f"enumeration capped at {MAX_ENUM_STATES} states and {MAX_ENUM_SYMBOLS} symbols, got {n} and {k}"
        )
    if k < 1:
        raise ValueError("alphabet size must be at least 1")
    encoders = [np.array(m) for m in itertools.product(range(k), repeat=n)]
    losses = np.array([encoder_reconstruction_loss(p, codes) for codes in encoders])
    mis = np.array([mutual_information(joint_from_maps(p, np.arange(n), codes)) for codes in encoders])
    argmin = frozenset(np.flatnonzero(losses <= losses.min() + SET_TOLERANCE).tolist())
    argmax = frozenset(np.flatnonzero(mis >= mis.max() - SET_TOLERANCE).tolist())
    return InfoMaxReport(encoders, losses, mis, argmin, argmax)


def info_decomposition_check(joint):
    """I[x; a, phi] = I[x; phi] + I[a; x | phi] for a table indexed ``[x, a, phi]``."""
    P = joint.table if isinstance(joint, JointDistribution) else check_joint(joint, 3)
    if P.ndim != 3:
        raise ValueError("a three-way joint indexed [x, a, phi] is required")
    nx = P.shape[0]
    lhs = mutual_information(P.reshape(nx, -1))
    mi_x_phi = mutual_information(P.sum(axis=1))
    redundancy = conditional_mutual_information(np.transpose(P, (1, 0, 2)))
    return DecompositionReport(lhs, mi_x_phi, redundancy, abs(lhs - (mi_x_phi + redundancy)))


def vi_free_energy(q, table, targets, precision):
    """Negative entropy plus the Gaussian constraint energy (constant dropped)."""
    q = np.asarray(q, dtype=float)
    dev = np.asarray(targets, dtype=float) - q @ table
    return -shannon_entropy(q) + precision * float(dev @ dev)


def vi_maxent_check(problem, schedule, opts=None):
    """KL(q*_lambda || maxent) along an increasing precision schedule."""
    schedule = [float(s) for s in schedule]
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("precision schedule must be strictly increasing")
    n = len(problem.space)
    F = problem.constraints.table(n)
    c = problem.constraints.targets
    opts = opts or INNER_OPTS
    target = solve_maxent(n, problem.constraints, opts).weights
    kls, sols = [], []
    for lam in schedule:
        _, q = solve_soft_maxent(F, c, lam, opts)
        sols.append(q)
        kls.append(kl_divergence(q, target))
    return VIReport(schedule, kls, target, sols)

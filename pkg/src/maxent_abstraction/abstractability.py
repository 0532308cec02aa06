"""Universal abstractability of a gridded 1-D density.

The score is the Shannon entropy of the mixture weights of the
lowest-weight-entropy Gaussian mixture that reproduces the density within a
KL tolerance.  The exact problem is non-convex, so a fixed candidate
portfolio is searched:

* weighted EM fits for every component count 1..K from quantile, peak and
  seeded random starts,
* greedy moment-matched merging down from the best K-component fit,
* the spike solution, one exact grid delta per supported grid point with
  weight equal to the target probability.

The spike solution always fits exactly, so the score never exceeds H[p].
The portfolio does not depend on the tolerance, which makes the score
monotone in it.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, DensityMixin
from sklearn.utils import check_array
from sklearn.utils.validation import check_is_fitted

from ._validation import check_distribution, check_positive
from .exceptions import ToleranceUnreachable
from .learning import LearningConfig
from .maxent import StateSpace, shannon_entropy

LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)
WEIGHT_FLOOR = 1e-10


@dataclass(frozen=True)
class TargetDensity:
    grid: StateSpace
    weights: np.ndarray

    def __post_init__(self):
        x = self.grid.coordinates
        if x is None or x.size < 2 or np.any(np.diff(x) <= 0):
            raise ValueError("target grid needs strictly increasing coordinates")
        object.__setattr__(self, "weights", check_distribution(self.weights, x.size, name="target"))

    @property
    def coordinates(self):
        return self.grid.coordinates

    @property
    def spacing(self):
        if self.grid.spacing is not None:
            return self.grid.spacing
        return float(np.min(np.diff(self.coordinates)))

    @classmethod
    def from_columns(cls, coordinates, weights):
        x = np.asarray(coordinates, dtype=float)
        spacing = float(np.min(np.diff(x))) if x.size > 1 else None
        return cls(StateSpace(tuple(range(x.size)), x, spacing), np.asarray(weights, float) / np.sum(weights))

    @classmethod
    def from_mixture(cls, grid, weights, means, stds):
        """Discretize a Gaussian mixture onto ``grid`` (renormalized)."""
        mix = MixtureModel(np.asarray(weights, float), np.asarray(means, float), np.asarray(stds, float))
        return cls(grid, mix.pmf(grid.coordinates))


@dataclass(frozen=True)
class MixtureModel:
    """Gaussian mixture; a zero standard deviation denotes an exact grid delta."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise ValueError("mixture weights must be non-negative and sum to 1")
        if np.any(np.asarray(self.stds) < 0):
            raise ValueError("standard deviations must be non-negative")

    @property
    def n_components(self):
        return self.weights.shape[0]

    @property
    def n_active(self):
        return int(np.sum(self.weights > 0))

    def entropy(self):
        return shannon_entropy(self.weights)

    def log_pmf(self, x):
        """Log of the grid-normalized mixture mass at each grid point."""
        x = np.asarray(x, dtype=float)
        spacing = np.min(np.diff(x)) if x.size > 1 else 1.0
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        cols = []
        smooth = self.stds > 0
        if np.any(smooth):
            mu, sd = self.means[smooth], self.stds[smooth]
            z = (x[:, None] - mu) / sd
            cols.append(log_w[smooth] - 0.5 * z**2 - np.log(sd) - LOG_SQRT_2PI + np.log(spacing))
        if np.any(~smooth):
            idx = np.abs(x[:, None] - self.means[~smooth]) <= 1e-9 * max(1.0, np.abs(x).max())
            with np.errstate(divide="ignore"):
                cols.append(np.where(idx, log_w[~smooth], -np.inf))
        L = logsumexp(np.concatenate(cols, axis=1), axis=1)
        return L - logsumexp(L)

    def pmf(self, x):
        return np.exp(self.log_pmf(x))


@dataclass
class AbstractabilityReport:
    score: float
    mixture: MixtureModel
    fit_error: float
    entropy_bound: float
    candidates_examined: int


def fit_divergence(target, mixture):
    """KL(target || mixture) on the target grid."""
    p = target.weights
    log_q = mixture.log_pmf(target.coordinates)
    mask = p > 0
    if np.any(~np.isfinite(log_q[mask])):
        return np.inf
    return max(float(np.sum(p[mask] * (np.log(p[mask]) - log_q[mask]))), 0.0)


def _weighted_em(x, p, means, stds, weights, sigma_floor, max_iter, tol):
    """EM on grid points weighted by target mass; maximizes sum p log q."""
    mu, sd, w = means.copy(), stds.copy(), weights.copy()
    prev = -np.inf
    for _ in range(max_iter):
        z = (x[:, None] - mu) / sd
        log_r = np.log(np.maximum(w, 1e-300)) - 0.5 * z**2 - np.log(sd)
        top = log_r.max(axis=1, keepdims=True)
        e = np.exp(log_r - top)
        s = e.sum(axis=1, keepdims=True)
        norm = top + np.log(s)
        r = e / s * p[:, None]
        ll = float(p @ norm[:, 0])
        nk = r.sum(axis=0)
        keep = nk > WEIGHT_FLOOR
        if not np.all(keep):
            r, nk, mu, sd = r[:, keep], nk[keep], mu[keep], sd[keep]
        w = nk / nk.sum()
        mu = (r.T @ x) / nk
        sd = np.sqrt(np.maximum((r * (x[:, None] - mu) ** 2).sum(axis=0) / nk, sigma_floor**2))
        if ll - prev < tol:
            break
        prev = ll
    return w, mu, sd


def _quantile_init(x, p, k):
    cdf = np.cumsum(p)
    qs = (np.arange(k) + 0.5) / k
    return x[np.minimum(np.searchsorted(cdf, qs), x.size - 1)]


def _peak_init(x, p, k):
    interior = (p[1:-1] > p[:-2]) & (p[1:-1] >= p[2:])
    peaks = np.flatnonzero(interior) + 1
    if peaks.size < k:
        return None
    top = peaks[np.argsort(p[peaks])[::-1][:k]]
    return np.sort(x[top])


def _merge_pair(w, mu, sd, i, j):
    wn = w[i] + w[j]
    mn = (w[i] * mu[i] + w[j] * mu[j]) / wn
    vn = (w[i] * (sd[i] ** 2 + mu[i] ** 2) + w[j] * (sd[j] ** 2 + mu[j] ** 2)) / wn - mn**2
    keep = np.ones(w.size, dtype=bool)
    keep[j] = False
    w2, mu2, sd2 = w.copy(), mu.copy(), sd.copy()
    w2[i], mu2[i], sd2[i] = wn, mn, np.sqrt(max(vn, 0.0))
    return w2[keep], mu2[keep], sd2[keep]


def _as_mixture(w, mu, sd):
    w = np.asarray(w, dtype=float)
    return MixtureModel(w / w.sum(), np.asarray(mu, float), np.asarray(sd, float))


def spike_mixture(target):
    """One exact grid delta per supported grid point, weighted by the target."""
    support = target.weights > 0
    return MixtureModel(
        target.weights[support] / target.weights[support].sum(),
        target.coordinates[support],
        np.zeros(int(support.sum())),
    )


def candidate_portfolio(target, max_components, cfg=None, n_init=3):
    """Every candidate mixture considered by :func:`fit_min_entropy_mixture`.

    Deterministic given ``cfg.seed``; independent of the fit tolerance.
    """
    cfg = cfg or LearningConfig(max_iters=300, tolerance=1e-12)
    if max_components < 1:
        raise ValueError("max_components must be at least 1")
    floor = 0.5 * target.spacing
    # EM only needs points carrying non-negligible mass.
    active = target.weights > 1e-14 * target.weights.max()
    x, p = target.coordinates[active], target.weights[active] / target.weights[active].sum()
    rng = np.random.default_rng(cfg.seed)
    mean = p @ x
    spread = np.sqrt(max(p @ (x - mean) ** 2, floor**2))
    candidates = []

    def em(init_means, k):
        init_sd = np.full(k, max(spread / k, floor))
        return _weighted_em(x, p, np.asarray(init_means, float), init_sd, np.full(k, 1.0 / k), floor, cfg.max_iters, cfg.tolerance)

    full_fits = []
    for k in range(1, max_components + 1):
        starts = [_quantile_init(x, p, k)]
        peaks = _peak_init(x, p, k)
        if peaks is not None:
            starts.append(peaks)
        starts += [np.sort(rng.choice(x, size=k, p=p)) for _ in range(n_init)]
        for start in starts:
            fit = em(start, k)
            candidates.append(_as_mixture(*fit))
            if k == max_components:
                full_fits.append(fit)

    # Merge down from the best-fitting K-component start only.
    full_fits.sort(key=lambda fit: fit_divergence(target, _as_mixture(*fit)))
    for w, mu, sd in full_fits[:1]:
        while w.size > 1:
            best = None
            for i in range(w.size):
                for j in range(i + 1, w.size):
                    merged = _as_mixture(*_merge_pair(w, mu, sd, i, j))
                    err = fit_divergence(target, merged)
                    if best is None or err < best[0]:
                        best = (err, i, j)
            w, mu, sd = _merge_pair(w, mu, sd, best[1], best[2])
            sd = np.maximum(sd, floor)
            w, mu, sd = _weighted_em(x, p, mu, sd, w, floor, 20, cfg.tolerance)
            candidates.append(_as_mixture(w, mu, sd))

    candidates.append(spike_mixture(target))
    return candidates


def _select(target, candidates, eps):
    best = None
    for mix in candidates:
        err = fit_divergence(target, mix)
        if err > eps:
            continue
        key = (round(mix.entropy(), 12), mix.n_active, err)
        if best is None or key < best[0]:
            best = (key, mix, err)
    return best


def fit_min_entropy_mixture(target, max_components, eps, cfg=None, *, candidates=None):
    """Lowest weight-entropy mixture within KL ``eps`` of the target.

    Returns ``(mixture, fit_error, n_candidates)``.
    """
    check_positive(eps, "eps")
    candidates = candidates if candidates is not None else candidate_portfolio(target, max_components, cfg)
    best = _select(target, candidates, eps)
    if best is None:
        raise ToleranceUnreachable(f"no candidate mixture fits within eps={eps!r}")
    _, mixture, err = best
    assert err <= eps
    return mixture, err, len(candidates)


def abstractability_score(target, max_components, eps, cfg=None, *, candidates=None):
    mixture, err, n = fit_min_entropy_mixture(target, max_components, eps, cfg, candidates=candidates)
    return AbstractabilityReport(
        score=mixture.entropy(),
        mixture=mixture,
        fit_error=err,
        entropy_bound=shannon_entropy(target.weights),
        candidates_examined=n,
    )


class MinEntropyMixture(DensityMixin, BaseEstimator):
    """Estimator interface to :func:`abstractability_score`.

    ``fit(X)`` takes a two-column array of (coordinate, weight) rows on a
    strictly increasing grid.

    Parameters
    ----------
    n_components : int
        Largest component count searched by EM.
    eps : float
        KL tolerance between the target and the mixture.
    max_iter : int
        EM iterations per start.
    n_init : int
        Seeded random starts per component count.
    random_state : int
    """

    def __init__(self, n_components=10, eps=1e-3, max_iter=300, n_init=3, random_state=0):
        self.n_components = n_components
        self.eps = eps
        self.max_iter = max_iter
        self.n_init = n_init
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X)
        if X.shape[1] != 2:
            raise ValueError("X must have two columns: coordinate, weight")
        target = TargetDensity.from_columns(X[:, 0], X[:, 1])
        cfg = LearningConfig(max_iters=self.max_iter, tolerance=1e-12, seed=self.random_state)
        portfolio = candidate_portfolio(target, self.n_components, cfg, n_init=self.n_init)
        report = abstractability_score(target, self.n_components, self.eps, candidates=portfolio)
        self.target_ = target
        self.report_ = report
        self.weights_ = report.mixture.weights
        self.means_ = report.mixture.means
        self.stds_ = report.mixture.stds
        self.abstractability_ = report.score
        self.fit_error_ = report.fit_error
        self.entropy_bound_ = report.entropy_bound
        self.n_features_in_ = 2
        return self

    def score_samples(self, X):
        """Log grid mass of the fitted mixture at the target's grid points."""
        check_is_fitted(self, "weights_")
        X = check_array(X)
        lp = self.report_.mixture.log_pmf(self.target_.coordinates)
        idx = np.searchsorted(self.target_.coordinates, X[:, 0])
        idx = np.clip(idx, 0, lp.size - 1)
        return lp[idx]

"""Queries over distributions and divergences between their outputs.

A query maps a distribution over states to a distribution over its own
output space.  Deterministic block maps (coarse-grainings and general
pushforwards) are exact block sums; statistic-valued queries such as "the
mean" should be binned into a pushforward so KL stays finite.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import NORMALIZATION_ATOL, check_distribution
from .exceptions import AbsoluteContinuityViolation, SpaceMismatch

QUERY_KINDS = ("reconstruction", "coarse_grain", "pushforward", "constant")


@dataclass(frozen=True)
class Query:
    name: str
    kind: str
    mapping: np.ndarray | None = None
    output_space: tuple = ()
    output: np.ndarray | None = None
    n_states: int | None = None

    def __post_init__(self):
        if self.kind not in QUERY_KINDS:
            raise ValueError(f"unknown query kind {self.kind!r}")
        if self.kind in ("coarse_grain", "pushforward"):
            mapping = np.asarray(self.mapping)
            if mapping.ndim != 1 or mapping.size == 0 or not np.issubdtype(mapping.dtype, np.integer):
                raise ValueError("block map must be a non-empty integer array, one entry per state")
            if mapping.min() < 0:
                raise ValueError("block indices must be non-negative")
            n_out = int(mapping.max()) + 1
            output_space = tuple(self.output_space) or tuple(range(n_out))
            if len(output_space) < n_out:
                raise ValueError("output space smaller than the largest block index")
            object.__setattr__(self, "mapping", mapping.astype(int))
            object.__setattr__(self, "output_space", output_space)
            object.__setattr__(self, "n_states", mapping.size)
        elif self.kind == "constant":
            output = check_distribution(self.output, name="constant output")
            object.__setattr__(self, "output", output)
            object.__setattr__(self, "output_space", tuple(self.output_space) or tuple(range(output.size)))
        elif self.kind == "reconstruction":
            if self.n_states is None:
                raise ValueError("reconstruction queries need the state count")
            object.__setattr__(self, "output_space", tuple(self.output_space) or tuple(range(self.n_states)))
        if not self.output_space:
            raise ValueError("output space must be non-empty")

    @classmethod
    def reconstruction(cls, n_states, name="reconstruction"):
        return cls(name, "reconstruction", n_states=int(n_states))

    @classmethod
    def coarse_grain(cls, partition, name="coarse_grain"):
        """``partition[s]`` is the block index of state ``s``."""
        return cls(name, "coarse_grain", mapping=np.asarray(partition))

    @classmethod
    def pushforward(cls, mapping, output_space=(), name="pushforward"):
        return cls(name, "pushforward", mapping=np.asarray(mapping), output_space=tuple(output_space))

    @classmethod
    def constant(cls, output, n_states=None, name="constant"):
        return cls(name, "constant", output=np.asarray(output, dtype=float), n_states=n_states)

    @property
    def is_block_map(self):
        return self.kind in ("coarse_grain", "pushforward")

    def block_map(self, n_states):
        """Deterministic state -> output map, when one exists."""
        if self.kind == "reconstruction":
            return np.arange(n_states)
        if self.kind == "constant":
            if self.output.size != 1:
                raise ValueError("a constant query with a spread output has no deterministic map")
            return np.zeros(n_states, dtype=int)
        return self.mapping

    def __call__(self, dist):
        return apply_query(self, dist)


def partition_from_blocks(blocks, n_states=None):
    """``[[0, 1], [2, 3]] -> [0, 0, 1, 1]``."""
    n_states = n_states or sum(len(b) for b in blocks)
    mapping = np.full(n_states, -1)
    for j, block in enumerate(blocks):
        mapping[list(block)] = j
    if np.any(mapping < 0):
        raise ValueError("blocks must cover every state")
    return mapping


@dataclass(frozen=True)
class QuerySet:
    queries: tuple
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        queries = tuple(self.queries)
        if not queries:
            raise ValueError("a query set needs at least one query")
        weights = np.full(len(queries), 1.0 / len(queries)) if self.weights is None else self.weights
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (len(queries),):
            raise ValueError("one weight per query is required")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > NORMALIZATION_ATOL:
            raise ValueError(f"query weights must be non-negative and sum to 1, got {weights.sum()!r}")
        object.__setattr__(self, "queries", queries)
        object.__setattr__(self, "weights", weights)

    def __iter__(self):
        return iter(zip(self.queries, self.weights))

    def __len__(self):
        return len(self.queries)

    @classmethod
    def single(cls, query):
        return cls((query,), np.ones(1))


@dataclass(frozen=True)
class DivergenceSpec:
    kind: str = "kl"
    epsilon: float | None = None

    def __post_init__(self):
        if self.kind not in ("kl", "smoothed_kl"):
            raise ValueError(f"unknown divergence {self.kind!r}")
        if self.kind == "smoothed_kl" and not (self.epsilon is not None and self.epsilon > 0):
            raise ValueError("smoothed_kl needs epsilon > 0")


def apply_query(query, dist):
    """Push a distribution through a query.

    Returns a normalized ndarray over ``query.output_space``.
    """
    if query.kind == "constant":
        return query.output.copy()
    expected = query.n_states
    p = check_distribution(dist, expected, name="distribution")
    if query.kind == "reconstruction":
        return p.copy()
    out = np.bincount(query.mapping, weights=p, minlength=len(query.output_space))
    return out / out.sum()


def kl_divergence(p, q):
    """KL(p || q) in nats with 0 ln(0/q) = 0."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise SpaceMismatch(f"divergence between shapes {p.shape} and {q.shape}")
    mask = p > 0
    if np.any(q[mask] <= 0):
        raise AbsoluteContinuityViolation(
            "q assigns zero mass to an outcome with positive p"
        )
    value = float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))
    return max(value, 0.0)


def divergence(spec, p, q):
    """Divergence between two query outputs over the same output space."""
    if spec is None or spec == "kl":
        spec = DivergenceSpec()
    p = check_distribution(p, name="p")
    q = check_distribution(q, p.shape[0], name="q")
    if spec.kind == "smoothed_kl":
        q = np.maximum(q, spec.epsilon)
        q = q / q.sum()
    return kl_divergence(p, q)

"""Exact information measures on discrete joint tables (nats)."""

import numpy as np

from ._validation import NORMALIZATION_ATOL
from .maxent import shannon_entropy


def check_joint(table, ndim=None):
    P = np.asarray(table, dtype=float)
    if ndim is not None and P.ndim != ndim:
        raise ValueError(f"expected a {ndim}-way joint table, got {P.ndim} axes")
    if np.any(P < 0) or not np.all(np.isfinite(P)):
        raise ValueError("joint table must be finite and non-negative")
    if abs(P.sum() - 1.0) > NORMALIZATION_ATOL:
        raise ValueError(f"joint table sums to {P.sum()!r}, not 1")
    return P


def mutual_information(joint):
    """I[X; Y] = KL(p(x, y) || p(x) p(y)) for a two-way table."""
    P = check_joint(joint, 2)
    px = P.sum(axis=1, keepdims=True)
    py = P.sum(axis=0, keepdims=True)
    mask = P > 0
    outer = (px * py)[mask]
    return max(float(np.sum(P[mask] * np.log(P[mask] / outer))), 0.0)


def conditional_mutual_information(joint):
    """I[X; Y | Z] for a table indexed ``[x, y, z]``.

    Computed as sum_z p(z) I[X; Y | Z = z] from the conditional tables.
    """
    P = check_joint(joint, 3)
    total = 0.0
    for z in range(P.shape[2]):
        pz = P[:, :, z].sum()
        if pz > 0:
            total += pz * mutual_information(P[:, :, z] / pz)
    return float(total)


def joint_from_maps(p, *maps):
    """Joint table of deterministic functions of X.

    ``joint_from_maps(p, g)`` is the table ``P[g(x), x]``-style joint of
    ``(g(X), X)`` when ``g`` is the identity on one side; generally it returns
    the table of ``(m_1(X), m_2(X), ...)``.
    """
    p = np.asarray(p, dtype=float)
    maps = [np.asarray(m, dtype=int) for m in maps]
    shape = tuple(int(m.max()) + 1 for m in maps)
    P = np.zeros(shape)
    np.add.at(P, tuple(maps), p)
    return P


def encoder_codes(values, resolution=None):
    """Deterministic encoder from per-state feature rows to integer codes.

    Rows are binned to ``resolution`` (or rounded to 12 decimals) before
    identical rows share a code.
    """
    V = np.asarray(values, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[1] == 0:
        return np.zeros(V.shape[0], dtype=int)
    binned = np.round(V / resolution) if resolution else np.round(V, 12)
    _, codes = np.unique(binned, axis=0, return_inverse=True)
    return codes.reshape(-1)


__all__ = [
    "check_joint",
    "conditional_mutual_information",
    "encoder_codes",
    "joint_from_maps",
    "mutual_information",
    "shannon_entropy",
]

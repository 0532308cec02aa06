"""JSON/CSV serialization and config parsing.

Floats are written with 17 significant digits so every value round-trips
exactly; non-finite floats become the strings ``"inf"``, ``"-inf"`` and
``"nan"``.  Keys are sorted, which makes reports byte-reproducible.
"""

import csv
import hashlib
import io
import json
import math
import os
from importlib import resources

import jsonschema
import numpy as np

from .abstractability import AbstractabilityReport, TargetDensity
from .dynamics import MarkovSystem
from .evaluation import AbstractionModel, LossReport
from .exceptions import ConfigInvalid
from .learning import LearningConfig
from .maxent import ConstraintSet, FeatureFunction, MaxEntSolution, SolverOptions, StateSpace
from .queries import DivergenceSpec, Query, QuerySet

_NONFINITE = {"inf": math.inf, "-inf": -math.inf, "nan": math.nan}


def format_float(x):
    x = float(x)
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    text = format(x, ".17g")
    return text if any(ch in text for ch in ".en") else text + ".0"


def to_plain(obj):
    """Convert numpy containers and scalars into plain Python values."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, (frozenset, set)):
        return sorted(to_plain(v) for v in obj)
    return obj


def _emit(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_emit(obj[k], indent, level + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_emit(v, indent, level) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _emit(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        return format_float(obj)
    return json.dumps(obj)


def dumps(obj, indent=2):
    return _emit(to_plain(obj), indent, 0) + "\n"


def _revive(obj):
    if isinstance(obj, dict):
        return {k: _revive(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_revive(v) for v in obj]
    if isinstance(obj, str) and obj in _NONFINITE:
        return _NONFINITE[obj]
    return obj


def loads(text):
    return _revive(json.loads(text))


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj))


def write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format(float(v), ".17g") if isinstance(v, (float, np.floating)) else v for v in row])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def sha256_file(path):
    with open(path, "rb") as fh:
        return sha256_bytes(fh.read())


# -- schema validation ------------------------------------------------------


def load_schema(name="experiment"):
    text = resources.files("maxent_abstraction").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def validate_config(config):
    """Schema-validate a config dict; raises :class:`ConfigInvalid` with all diagnostics."""
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors]
        raise ConfigInvalid("config failed schema validation:\n" + "\n".join(lines))
    return config


# -- domain objects from config fragments ------------------------------------


def _semantic(fn):
    """Re-raise value errors from domain constructors as config errors."""

    def wrapped(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigInvalid:
            raise
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigInvalid(f"{fn.__name__}: {exc}") from exc

    wrapped.__name__ = fn.__name__
    wrapped.__doc__ = fn.__doc__
    return wrapped


@_semantic
def space_from_spec(spec):
    if "grid" in spec:
        g = spec["grid"]
        return StateSpace.grid(g["start"], g["stop"], g["step"])
    if "coordinates" in spec:
        x = np.asarray(spec["coordinates"], dtype=float)
        return StateSpace(tuple(range(x.size)), x, float(np.min(np.diff(x))) if x.size > 1 else None)
    states = spec["states"]
    return StateSpace.range(states) if isinstance(states, int) else StateSpace(tuple(states))


def _feature_values(spec, space):
    if "values" in spec:
        return np.asarray(spec["values"], dtype=float)
    x = space.coordinates
    if x is None:
        raise ValueError(f"feature {spec['name']!r} needs explicit values on a non-grid space")
    kind = spec["builtin"]
    center = spec.get("center", 0.0)
    if kind == "identity":
        return x.copy()
    if kind == "squared_deviation":
        return (x - center) ** 2
    raise ValueError(f"unknown builtin feature {kind!r}")


@_semantic
def features_from_spec(specs, space):
    feats = tuple(FeatureFunction(f["name"], _feature_values(f, space)) for f in specs)
    for f in feats:
        if f.values.shape[0] != len(space):
            raise ValueError(f"feature {f.name!r} has {f.values.shape[0]} values for {len(space)} states")
    return feats


@_semantic
def constraints_from_spec(spec, space):
    return ConstraintSet(features_from_spec(spec["features"], space), spec["targets"])


@_semantic
def weights_from_spec(weights, space, name="weights"):
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(space),):
        raise ValueError(f"{name} has {w.size} entries for {len(space)} states")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} must be non-negative and sum to 1 (sum={float(w.sum())!r})")
    return w / w.sum()


@_semantic
def query_from_spec(spec, n_states):
    kind = spec["kind"]
    name = spec.get("name", kind)
    if kind == "reconstruction":
        return Query.reconstruction(n_states, name)
    if kind == "coarse_grain":
        q = Query.coarse_grain(np.asarray(spec["partition"], dtype=int), name)
    elif kind == "pushforward":
        q = Query.pushforward(np.asarray(spec["map"], dtype=int), spec.get("output_space", ()), name)
    else:
        return Query.constant(spec["output"], n_states, name)
    if q.n_states != n_states:
        raise ValueError(f"query {name!r} maps {q.n_states} states, system has {n_states}")
    return q


@_semantic
def queryset_from_spec(spec, n_states):
    queries = tuple(query_from_spec(q, n_states) for q in spec["queries"])
    return QuerySet(queries, spec.get("weights"))


@_semantic
def divergence_from_spec(spec):
    if spec is None:
        return DivergenceSpec()
    return DivergenceSpec(spec.get("kind", "kl"), spec.get("epsilon"))


@_semantic
def solver_from_spec(spec, seed=0):
    spec = spec or {}
    return SolverOptions(spec.get("tolerance", 1e-10), spec.get("max_iter", 200), seed)


@_semantic
def learner_from_spec(spec, seed=0):
    spec = dict(spec or {})
    spec["seed"] = seed
    return LearningConfig(**spec)


@_semantic
def markov_from_spec(spec):
    P = np.asarray(spec["transition"], dtype=float)
    return MarkovSystem(StateSpace.range(P.shape[0]), P, spec["initial"])


@_semantic
def target_density_from_spec(spec, base_dir="."):
    if "csv" in spec:
        path = spec["csv"] if os.path.isabs(spec["csv"]) else os.path.join(base_dir, spec["csv"])
        return read_target_csv(path)
    return TargetDensity.from_columns(spec["coordinates"], spec["weights"])


def read_target_csv(path):
    """Two-column (coordinate, weight) CSV; a non-numeric first row is a header."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if i == 0:
                    continue
                raise ValueError(f"{path}: malformed row {i + 1}: {row!r}")
    data = np.array(rows)
    weights = data[:, 1]
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError(f"{path}: weights must be non-negative and sum to 1")
    return TargetDensity.from_columns(data[:, 0], weights)


# -- reports ----------------------------------------------------------------


def solution_to_dict(sol, constraints=None):
    out = {
        "multipliers": sol.multipliers,
        "log_partition": sol.log_partition,
        "distribution": sol.weights,
        "entropy": sol.entropy,
        "residuals": sol.residuals,
        "iterations": sol.iterations,
    }
    if constraints is not None:
        out["feature_names"] = constraints.names
    return out


def solution_from_dict(d):
    from .maxent import DiscreteDistribution

    return MaxEntSolution(
        multipliers=np.asarray(d["multipliers"], dtype=float),
        log_partition=float(d["log_partition"]),
        distribution=DiscreteDistribution(np.asarray(d["distribution"], dtype=float)),
        entropy=float(d["entropy"]),
        residuals=np.asarray(d["residuals"], dtype=float),
        iterations=int(d.get("iterations", 0)),
    )


def space_to_dict(space):
    if space.coordinates is not None:
        return {"coordinates": space.coordinates}
    return {"states": list(space.states)}


def constraints_to_dict(cs):
    return {"features": [{"name": f.name, "values": f.values} for f in cs.features], "targets": cs.targets}


def query_to_dict(q):
    out = {"name": q.name, "kind": q.kind}
    if q.kind == "coarse_grain":
        out["partition"] = q.mapping
    elif q.kind == "pushforward":
        out["map"] = q.mapping
    elif q.kind == "constant":
        out["output"] = q.output
    return out


def queryset_to_dict(qs):
    return {"queries": [query_to_dict(q) for q in qs.queries], "weights": qs.weights}


def loss_report_to_dict(rep):
    return {
        "per_query_loss": [{"query": name, "loss": loss} for name, loss in rep.per_query_loss],
        "total": rep.total,
        "weights": rep.weights,
        "maxent_solution": solution_to_dict(rep.maxent_solution),
    }


def abstraction_to_dict(model: AbstractionModel):
    return {"features": [f.name for f in model.features], "targets": model.targets}


def markov_to_dict(system):
    return {"transition": system.transition, "initial": system.initial}


def abstractability_to_dict(rep: AbstractabilityReport):
    mix = rep.mixture
    return {
        "score": rep.score,
        "fit_error": rep.fit_error,
        "entropy_bound": rep.entropy_bound,
        "candidates_examined": rep.candidates_examined,
        "mixture": {"weights": mix.weights, "means": mix.means, "stds": mix.stds},
    }


def path_distribution_to_dict(paths, weights):
    return {"paths": paths, "weights": weights}

"""``maxabs`` command line front-end.

Every subcommand reads a JSON config, writes ``report.json`` plus CSV
traces and a ``manifest.json`` into the output directory, and exits with
the code of the error it hit (0 on success).  An invalid config writes only
``error.json``.

Output directory precedence: ``--out``, the config's ``output_dir``,
``$MAXENT_ABSTRACTION_OUT/<kind>``, then ``./maxabs-runs/<kind>``.
"""

import datetime
import json
import os
import sys

import click
import numpy as np

from . import __version__
from . import io as mio
from .abstractability import abstractability_score
from .bridge import info_decomposition_check
from .dynamics import (
    StateEncoder,
    dynamical_loss,
    learn_abstract_dynamics,
    rollout_ensemble,
)
from .evaluation import AbstractionModel, queryset_loss
from .exceptions import EXIT_CODES, ConfigInvalid, MaxEntAbstractionError
from .information import check_joint, mutual_information
from .learning import learn_targets
from .maxent import solve_maxent
from .queries import Query, QuerySet
from .verify import run_suite

ENV_OUT = "MAXENT_ABSTRACTION_OUT"
SUITE_FAILED = 1


class RunOutput:
    def __init__(self, report, csvs=None, passed=True):
        self.report = report
        self.csvs = csvs or {}
        self.passed = passed


def _run_solve(cfg, seed, base_dir):
    space = mio.space_from_spec(cfg["space"])
    constraints = mio.constraints_from_spec(cfg["constraints"], space)
    reference = mio.weights_from_spec(cfg["reference"], space, "reference") if "reference" in cfg else None
    sol = solve_maxent(space, constraints, mio.solver_from_spec(cfg.get("solver"), seed), reference=reference)
    coords = space.coordinates if space.coordinates is not None else [None] * len(space)
    rows = [(s, c if c is not None else "", float(p)) for s, c, p in zip(space.states, coords, sol.weights)]
    report = {"solution": mio.solution_to_dict(sol, constraints)}
    return RunOutput(report, {"distribution.csv": (["state", "coordinate", "probability"], rows)})


def _system(cfg):
    space = mio.space_from_spec(cfg["system"])
    return space, mio.weights_from_spec(cfg["system"]["weights"], space, "system weights")


def _run_eval(cfg, seed, base_dir):
    space, p = _system(cfg)
    constraints = mio.constraints_from_spec(cfg["abstraction"], space)
    model = AbstractionModel(constraints.features, constraints.targets)
    qs = mio.queryset_from_spec(cfg["queries"], len(space))
    div = mio.divergence_from_spec(cfg.get("divergence"))
    rep = queryset_loss(p, model, qs, div, mio.solver_from_spec(cfg.get("solver"), seed))
    report = {"loss": mio.loss_report_to_dict(rep), "abstraction": mio.abstraction_to_dict(model)}
    return RunOutput(report, {"losses.csv": (["system", "abstraction", "query", "loss"], rep.rows())})


def _run_learn(cfg, seed, base_dir):
    space, p = _system(cfg)
    features = mio.features_from_spec(cfg["features"], space)
    qs = mio.queryset_from_spec(cfg["queries"], len(space))
    div = mio.divergence_from_spec(cfg.get("divergence"))
    lcfg = mio.learner_from_spec(cfg.get("learner"), seed)
    init = cfg.get("init")
    if init is not None and len(init) != len(features):
        raise ConfigInvalid("init needs one value per feature")
    fit = learn_targets(p, features, qs, lcfg, div=div, init=init)
    report = {
        "abstraction": mio.abstraction_to_dict(fit.model),
        "loss": fit.loss,
        "converged": fit.converged,
        "gradient_norm": fit.gradient_norm,
        "iterations": len(fit.trace) - 1,
    }
    return RunOutput(report, {"trace.csv": (["iteration", "loss", "step"], fit.trace)})


def _run_dynamics(cfg, seed, base_dir):
    system = mio.markov_from_spec(cfg["markov"])
    T = cfg["horizon"]
    features = mio.features_from_spec(cfg["encoder"]["features"], system.space)
    encoder = StateEncoder.from_features(features)
    n = len(system.space)
    qs = mio.queryset_from_spec(cfg["queries"], n) if "queries" in cfg else QuerySet.single(Query.reconstruction(n))
    div = mio.divergence_from_spec(cfg.get("divergence"))
    lcfg = mio.learner_from_spec(cfg.get("learner"), seed)
    fit = learn_abstract_dynamics(system, T, encoder, qs, lcfg, div=div)
    traj = rollout_ensemble(system, T)
    abstract = fit.dynamics.rollout(T)
    path = dynamical_loss(traj, abstract, features, qs, div)
    report = {
        "coef": fit.dynamics.coef,
        "intercept": fit.dynamics.intercept,
        "contrastive_loss": fit.loss,
        "path_loss": path.total,
        "path_loss_per_step": path.per_step,
        "converged": fit.converged,
        "system": mio.markov_to_dict(system),
    }
    abstract_rows = [(t, *row) for t, row in enumerate(np.asarray(abstract).reshape(T + 1, -1))]
    encoded_rows = [(t, *row) for t, row in enumerate(np.asarray(fit.encoded).reshape(T + 1, -1))]
    names = [f.name for f in features]
    csvs = {
        "trajectory.csv": (["t", "state", "probability"], traj.rows()),
        "abstract_trajectory.csv": (["t", *names], abstract_rows),
        "encoded_trajectory.csv": (["t", *names], encoded_rows),
        "trace.csv": (["iteration", "loss", "step"], fit.trace),
    }
    return RunOutput(report, csvs)


def _run_abstractability(cfg, seed, base_dir):
    target = mio.target_density_from_spec(cfg["target"], base_dir)
    lcfg = mio.learner_from_spec({"max_iters": 300, "tolerance": 1e-12, **cfg.get("learner", {})}, seed)
    rep = abstractability_score(target, cfg["max_components"], cfg["eps"], lcfg)
    mix = rep.mixture
    rows = [(i, w, m, s) for i, (w, m, s) in enumerate(zip(mix.weights, mix.means, mix.stds))]
    return RunOutput(
        {"abstractability": mio.abstractability_to_dict(rep)},
        {"mixture.csv": (["component", "weight", "mean", "std"], rows)},
    )


def _run_mi(cfg, seed, base_dir):
    try:
        P = check_joint(np.asarray(cfg["joint"], dtype=float))
    except ValueError as exc:
        raise ConfigInvalid(f"joint: {exc}") from exc
    if P.ndim == 2:
        return RunOutput({"mutual_information": mutual_information(P)})
    if P.ndim == 3:
        rep = info_decomposition_check(P)
        report = {
            "mi_x_a_phi": rep.mi_x_a_phi,
            "mi_x_phi": rep.mi_x_phi,
            "redundancy": rep.redundancy,
            "residual": rep.residual,
            "identity_holds": rep.holds,
        }
        return RunOutput(report, passed=rep.holds)
    raise ConfigInvalid("joint must have two or three axes")


def _run_verify(cfg, seed, base_dir, profile=None):
    profile = profile or cfg.get("profile", "default")
    suite = run_suite(profile, progress=lambda c: click.echo(c.line()))
    checks, rows = [], []
    for c in suite.checks:
        checks.append(
            {
                "number": c.number,
                "name": c.name,
                "passed": c.passed,
                "margin": c.margin,
                "error": c.error,
                "measurements": [
                    {"label": m.label, "value": m.value, "tolerance": m.tolerance, "margin": m.margin, "passed": m.passed}
                    for m in c.measurements
                ],
            }
        )
        for m in c.measurements:
            rows.append((c.number, c.name, m.label, m.value, m.tolerance, m.margin, int(m.passed)))
    report = {"profile": profile, "passed": suite.passed, "checks": checks}
    header = ["check", "name", "measurement", "value", "tolerance", "margin", "passed"]
    return RunOutput(report, {"checks.csv": (header, rows)}, passed=suite.passed)


HANDLERS = {
    "solve": _run_solve,
    "eval": _run_eval,
    "learn": _run_learn,
    "dynamics": _run_dynamics,
    "abstractability": _run_abstractability,
    "mi": _run_mi,
    "verify": _run_verify,
}


def _output_dir(out, cfg, kind):
    if out:
        return out
    if isinstance(cfg, dict) and cfg.get("output_dir"):
        return cfg["output_dir"]
    root = os.environ.get(ENV_OUT)
    return os.path.join(root or "maxabs-runs", kind)


def load_config(path, kind):
    """Read, parse and validate a config file; returns ``(config, raw_bytes)``."""
    if path is None:
        if kind == "verify":
            return {"kind": "verify"}, b""
        raise ConfigInvalid("--config is required")
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config: {exc}") from exc
    try:
        cfg = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigInvalid(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigInvalid("config must be a JSON object")
    mio.validate_config(cfg)
    if cfg["kind"] != kind:
        raise ConfigInvalid(f"config kind {cfg['kind']!r} does not match subcommand {kind!r}")
    return cfg, raw


def _error_report(exc):
    return {
        "error": type(exc).__name__,
        "exit_code": getattr(exc, "exit_code", 10),
        "message": str(exc),
        **({"timestep": exc.timestep} if hasattr(exc, "timestep") else {}),
    }


def run_experiment(kind, config_path=None, out=None, seed=None, **extra):
    """Run one subcommand end to end; returns the process exit code."""
    cfg = None
    try:
        cfg, raw = load_config(config_path, kind)
    except ConfigInvalid as exc:
        out_dir = _output_dir(out, cfg, kind)
        os.makedirs(out_dir, exist_ok=True)
        mio.write_json(os.path.join(out_dir, "error.json"), _error_report(exc))
        click.echo(f"error: {exc}", err=True)
        return exc.exit_code

    out_dir = _output_dir(out, cfg, kind)
    os.makedirs(out_dir, exist_ok=True)
    seed = cfg.get("seed", 0) if seed is None else seed
    base_dir = os.path.dirname(os.path.abspath(config_path)) if config_path else os.getcwd()
    inputs = {config_path: mio.sha256_bytes(raw)} if config_path else {}
    if kind == "abstractability" and "csv" in cfg.get("target", {}):
        csv_path = cfg["target"]["csv"]
        csv_path = csv_path if os.path.isabs(csv_path) else os.path.join(base_dir, csv_path)
        if os.path.exists(csv_path):
            inputs[cfg["target"]["csv"]] = mio.sha256_file(csv_path)

    written = []
    try:
        result = HANDLERS[kind](cfg, seed, base_dir, **extra)
    except ConfigInvalid as exc:
        mio.write_json(os.path.join(out_dir, "error.json"), _error_report(exc))
        click.echo(f"error: {exc}", err=True)
        return exc.exit_code
    except MaxEntAbstractionError as exc:
        mio.write_json(os.path.join(out_dir, "error.json"), _error_report(exc))
        written.append("error.json")
        status, code = "error", exc.exit_code
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
    else:
        report = {"kind": kind, "seed": seed, **result.report}
        mio.write_json(os.path.join(out_dir, "report.json"), report)
        written.append("report.json")
        for name, (header, rows) in sorted(result.csvs.items()):
            mio.write_csv(os.path.join(out_dir, name), header, rows)
            written.append(name)
        status = "pass" if result.passed else "fail"
        code = 0 if result.passed else SUITE_FAILED
        click.echo(f"{kind}: {status} -> {os.path.join(out_dir, 'report.json')}")

    manifest = {
        "config_sha256": mio.sha256_bytes(raw),
        "tool_version": __version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "inputs": inputs,
        "outputs": written + ["manifest.json"],
        "summary": {"kind": kind, "status": status, "exit_code": code},
    }
    mio.write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return code


def _common(fn):
    fn = click.option("--seed", type=int, default=None, help="Override the config seed.")(fn)
    fn = click.option("--out", "out", type=click.Path(file_okay=False), default=None, help="Output directory.")(fn)
    fn = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="JSON config.")(fn)
    return fn


@click.group(epilog="Exit codes: " + ", ".join(f"{v}={k}" for k, v in sorted(EXIT_CODES.items(), key=lambda kv: kv[1])) + f", {SUITE_FAILED}=check failed")
@click.version_option(__version__)
def main():
    """Maximum-entropy abstraction experiments."""


def _make(kind, doc):
    @main.command(name=kind, help=doc)
    @_common
    def command(config_path, out, seed):
        sys.exit(run_experiment(kind, config_path, out, seed))

    return command


solve = _make("solve", "Solve a maximum-entropy problem.")
evaluate = _make("eval", "Evaluate the leakiness of an abstraction on a query set.")
learn = _make("learn", "Learn abstraction targets for a fixed feature dictionary.")
dynamics = _make("dynamics", "Learn affine abstract dynamics for a Markov chain.")
abstractability = _make("abstractability", "Score the abstractability of a gridded density.")
mi = _make("mi", "Mutual information of a joint table (two or three axes).")


@main.command(name="verify")
@_common
@click.option("--profile", type=click.Choice(["default", "strict"]), default=None, help="Tolerance profile.")
def verify(config_path, out, seed, profile):
    """Run the full self-check suite."""
    sys.exit(run_experiment("verify", config_path, out, seed, profile=profile))


if __name__ == "__main__":
    main()

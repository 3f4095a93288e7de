"""Batch front door: structured configs, four experiment verbs, reproducible
outputs.

Every run reads a YAML config validated against CONFIG_SCHEMA, applies the
command-line overrides, and writes artifacts into the output directory.
JSON artifacts are byte-identical for identical config + seed (timing data
is kept out of them; it only appears in CSVs).

Exit codes: 0 success, 1 target/coverage failure, 2 hypothesis failure,
3 numerical or configuration failure.
"""

from __future__ import annotations

import hashlib
import json
import pathlib
import sys

import click
import jsonschema
import numpy as np
import yaml

from nscontrol import __version__
from nscontrol.errors import (
    BlowUp,
    ConfigError,
    HypothesisFailed,
    NoConvergence,
    NonFinite,
    NotRepresentable,
    SaturationInsufficient,
)
from nscontrol.dynamics import SolverConfig
from nscontrol.projection import (
    ProjectionTarget,
    fixed_point_refine,
    surjectivity_probe,
)
from nscontrol.spectral import FourierField, get_truncation
from nscontrol.subspaces import (
    ModeSubspace,
    saturation_sequence,
    shell_subspace,
    subspace_to_dict,
)
from nscontrol.synthesis import (
    CascadeConfig,
    cascade_synthesize,
    control_to_dict,
    stage_log_to_jsonl,
)

ARTIFACT_VERSION = 1

_SUBSPACE_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["shell", "shell_support", "span"]},
        "n_shell": {"type": "integer", "minimum": 0},
        "reps": {
            "type": "array",
            "items": {
                "type": "array",
                "items": {"type": "integer"},
                "minItems": 3,
                "maxItems": 3,
            },
        },
        "indices": {"type": "array", "items": {"type": "integer", "minimum": 0}},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

_FIELD_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["zero", "random_shell", "coefficients"]},
        "n_shell": {"type": "integer", "minimum": 1},
        "scale_l2": {"type": "number"},
        "normalize": {"type": "boolean"},
        "subspace": _SUBSPACE_SCHEMA,
        "values": {"type": "array", "items": {"type": "number"}},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "system": {
            "type": "object",
            "properties": {
                "truncation_K": {"type": "integer", "minimum": 1},
                "viscosity_nu": {"type": "number", "exclusiveMinimum": 0},
                "horizon_T": {"type": "number", "exclusiveMinimum": 0},
                "dt_time": {"type": "number", "exclusiveMinimum": 0},
                "min_substeps": {"type": "integer", "minimum": 1},
            },
            "required": ["truncation_K", "viscosity_nu", "horizon_T"],
            "additionalProperties": False,
        },
        "cascade": {
            "type": "object",
            "properties": {
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
                "delta": {"type": "number", "exclusiveMinimum": 0},
                "s": {"type": "integer", "minimum": 1},
                "depth": {"type": "integer", "minimum": 0},
                "n_shell": {"type": "integer", "minimum": 1},
                "k_osc": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "k_cut": {"type": "array", "items": {"type": "integer", "minimum": 2}},
            },
            "additionalProperties": False,
        },
        "control_space_E": _SUBSPACE_SCHEMA,
        "initial_state": _FIELD_SCHEMA,
        "target_state": _FIELD_SCHEMA,
        "saturate": {
            "type": "object",
            "properties": {
                "depth": {"type": "integer", "minimum": 0},
                "target_n_shell": {"type": "integer", "minimum": 1},
            },
            "required": ["depth", "target_n_shell"],
            "additionalProperties": False,
        },
        "projection": {
            "type": "object",
            "properties": {
                "F": _SUBSPACE_SCHEMA,
                "radius_R": {"type": "number", "exclusiveMinimum": 0},
                "y_hat": {"type": "array", "items": {"type": "number"}},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "grid_n": {"type": "integer", "minimum": 2},
                "max_iter": {"type": "integer", "minimum": 1},
            },
            "required": ["F", "radius_R"],
            "additionalProperties": False,
        },
    },
    "required": ["system"],
    "additionalProperties": False,
}


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        locs = "; ".join(
            f"{'.'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}"
            for e in errors
        )
        raise ConfigError(f"{path}: {locs}")
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def build_solver(cfg: dict) -> SolverConfig:
    sys_cfg = cfg["system"]
    return SolverConfig(
        nu=sys_cfg["viscosity_nu"],
        T=sys_cfg["horizon_T"],
        dt=sys_cfg.get("dt_time"),
        min_substeps=sys_cfg.get("min_substeps", 1),
    )


def build_cascade(cfg: dict) -> CascadeConfig:
    c = cfg.get("cascade", {})
    kwargs = {}
    for key in ("epsilon", "delta", "s", "depth", "n_shell"):
        if key in c:
            kwargs[key] = c[key]
    for key in ("k_osc", "k_cut"):
        if key in c:
            kwargs[key] = tuple(c[key])
    return CascadeConfig(**kwargs)


def build_subspace(spec: dict, trunc) -> ModeSubspace:
    kind = spec["kind"]
    if kind == "shell":
        return shell_subspace(spec["n_shell"], trunc)
    if kind == "shell_support":
        keep = {tuple(r) for r in spec["reps"]}

        def support(f):
            return {
                tuple(k)
                for k in f.trunc.reps
                if np.max(np.abs(f.amplitude(tuple(k)))) > 1e-12
            }

        fields = [
            f for f in shell_subspace(spec["n_shell"], trunc).basis if support(f) <= keep
        ]
        if not fields:
            raise ConfigError("shell_support selects no basis fields")
        return ModeSubspace.from_spanning(trunc, fields)
    if kind == "span":
        base = shell_subspace(spec["n_shell"], trunc)
        try:
            fields = [base.basis[i] for i in spec["indices"]]
        except IndexError:
            raise ConfigError("span index outside the shell basis")
        return ModeSubspace.from_spanning(trunc, fields)
    raise ConfigError(f"unknown subspace kind {kind!r}")


def build_field(spec: dict, trunc, rng) -> FourierField:
    kind = spec["kind"]
    if kind == "zero":
        return FourierField.zero(trunc)
    if kind == "random_shell":
        S = shell_subspace(spec["n_shell"], trunc)
        coeffs = spec.get("scale_l2", 0.1) * rng.standard_normal(S.dim)
        if spec.get("normalize", False):
            coeffs = coeffs / np.sqrt(S.dim)
        return S.from_coefficients(coeffs)
    if kind == "coefficients":
        S = build_subspace(spec["subspace"], trunc)
        values = np.asarray(spec["values"], dtype=float)
        if values.shape != (S.dim,):
            raise ConfigError(
                f"coefficients: expected {S.dim} values, got {values.shape[0]}"
            )
        return S.from_coefficients(values)
    raise ConfigError(f"unknown field kind {kind!r}")


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _stamp(cfg: dict, payload: dict) -> dict:
    return {
        "artifact_version": ARTIFACT_VERSION,
        "config_hash": config_hash(cfg),
        **payload,
    }


def _write_json(out: pathlib.Path, name: str, cfg: dict, payload: dict):
    out.joinpath(name).write_text(
        json.dumps(_stamp(cfg, payload), sort_keys=True, indent=1) + "\n"
    )


def _write_text(out: pathlib.Path, name: str, cfg: dict, text: str):
    header = f"# artifact_version={ARTIFACT_VERSION} config_hash={config_hash(cfg)}\n"
    out.joinpath(name).write_text(header + text)


def _strip_times(stage_log: list) -> list:
    return [{k: v for k, v in rec.items() if k != "wall_time"} for rec in stage_log]


# ---------------------------------------------------------------------------
# Verbs
# ---------------------------------------------------------------------------


@click.group()
@click.version_option(__version__)
def main():
    """Controllability experiments for spectral Navier-Stokes on the torus."""


def _common(fn):
    fn = click.option("--config", "config_path", required=True, type=click.Path(exists=True))(fn)
    fn = click.option("--out", "out_dir", default="out", type=click.Path())(fn)
    fn = click.option("--seed", default=None, type=int, help="Override the config seed.")(fn)
    fn = click.option("--jobs", default=1, type=int, show_default=True)(fn)
    fn = click.option(
        "--format", "fmt", default="csv", type=click.Choice(["csv", "json"]),
        show_default=True,
    )(fn)
    return fn


def _setup(config_path, out_dir, seed):
    cfg = load_config(config_path)
    if seed is not None:
        cfg["seed"] = int(seed)
    cfg.setdefault("seed", 0)
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trunc = get_truncation(cfg["system"]["truncation_K"])
    rng = np.random.default_rng(cfg["seed"])
    return cfg, out, trunc, rng


def _fail(exc) -> int:
    click.echo(f"error: {exc}", err=True)
    if isinstance(exc, (HypothesisFailed,)):
        return 2
    if isinstance(exc, (NoConvergence, SaturationInsufficient, NotRepresentable)):
        return 1
    return 3


@main.command()
@_common
def saturate(config_path, out_dir, seed, jobs, fmt):
    """Saturation chain of the control space against a target shell."""
    try:
        cfg, out, trunc, _ = _setup(config_path, out_dir, seed)
        if "control_space_E" not in cfg or "saturate" not in cfg:
            raise ConfigError("saturate needs control_space_E and saturate sections")
        E = build_subspace(cfg["control_space_E"], trunc)
        sat = cfg["saturate"]
        target = shell_subspace(sat["target_n_shell"], trunc)
        chain, report = saturation_sequence(E, sat["depth"], target)
        if fmt == "csv":
            _write_text(out, "coverage.csv", cfg, report.to_csv())
        else:
            _write_json(
                out, "coverage.json", cfg,
                {"rows": [list(r) for r in report.rows], "covered_at": report.covered_at},
            )
        _write_json(out, "subspace.json", cfg, {"subspace": subspace_to_dict(chain[-1])})
        click.echo(
            f"covered_at={report.covered_at} dims={[S.dim for S in chain]}"
        )
        sys.exit(0 if report.covered else 1)
    except (ConfigError, ValueError, BlowUp, NonFinite, NotRepresentable,
            SaturationInsufficient) as exc:
        sys.exit(_fail(exc))


@main.command()
@_common
def synthesize(config_path, out_dir, seed, jobs, fmt):
    """Cascade synthesis toward a target state."""
    try:
        cfg, out, trunc, rng = _setup(config_path, out_dir, seed)
        for key in ("control_space_E", "initial_state", "target_state"):
            if key not in cfg:
                raise ConfigError(f"synthesize needs the {key} section")
        scfg = build_solver(cfg)
        ccfg = build_cascade(cfg)
        E = build_subspace(cfg["control_space_E"], trunc)
        u0 = build_field(cfg["initial_state"], trunc, rng)
        u_hat = build_field(cfg["target_state"], trunc, rng)
        result = cascade_synthesize(u0, u_hat, E, ccfg, scfg)
        _write_json(
            out, "control.json", cfg,
            {"control": control_to_dict(result.eta, scfg.T),
             "endpoint_error_V": result.endpoint_error},
        )
        modes = [tuple(int(v) for v in k) for k in trunc.reps[:4]]
        if fmt == "csv":
            _write_text(out, "trajectory.csv", cfg, result.trajectory.to_csv(modes))
        else:
            _write_json(
                out, "trajectory.json", cfg,
                {"times": [float(t) for t in result.trajectory.times],
                 "vnorms": [float(v) for v in result.trajectory.vnorms()]},
            )
        _write_text(out, "stage_log.jsonl", cfg,
                    stage_log_to_jsonl(_strip_times(result.stage_log)))
        click.echo(f"endpoint_error_V={result.endpoint_error:.6g} epsilon={ccfg.epsilon}")
        sys.exit(0 if result.endpoint_error < ccfg.epsilon else 1)
    except (ConfigError, ValueError, BlowUp, NonFinite, NotRepresentable,
            SaturationInsufficient, HypothesisFailed, NoConvergence) as exc:
        sys.exit(_fail(exc))


def _projection_setup(cfg, trunc, rng):
    proj = cfg.get("projection")
    if proj is None:
        raise ConfigError("this verb needs the projection section")
    F = build_subspace(proj["F"], trunc)
    y_hat = np.asarray(proj.get("y_hat", [0.0] * F.dim), dtype=float)
    target = ProjectionTarget(F, y_hat, proj["radius_R"])
    E = build_subspace(cfg.get("control_space_E", {"kind": "shell", "n_shell": 1}), trunc)
    u0 = build_field(cfg.get("initial_state", {"kind": "zero"}), trunc, rng)
    return proj, target, E, u0


@main.command()
@_common
def exact(config_path, out_dir, seed, jobs, fmt):
    """Exact steering of the projected endpoint via fixed-point refinement."""
    try:
        cfg, out, trunc, rng = _setup(config_path, out_dir, seed)
        proj, target, E, u0 = _projection_setup(cfg, trunc, rng)
        scfg = build_solver(cfg)
        ccfg = build_cascade(cfg)
        result, trace = fixed_point_refine(
            target.y_hat, u0, target, E, ccfg, scfg,
            max_iter=proj.get("max_iter", 20), tol=proj.get("tol", 1e-3),
        )
        _write_json(out, "control.json", cfg,
                    {"control": control_to_dict(result.eta, scfg.T)})
        _write_json(out, "trace.json", cfg, {"trace": json.loads(trace.to_json())})
        row = (
            "y,residual,iterations,converged\n"
            + ";".join(f"{c:.12g}" for c in target.y_hat)
            + f",{trace.residuals[-1]:.12g},{len(trace.residuals)},{int(trace.converged)}\n"
        )
        _write_text(out, "coverage_row.csv", cfg, row)
        click.echo(
            f"converged={trace.converged} iterations={len(trace.residuals)} "
            f"residual={trace.residuals[-1]:.3e}"
        )
        sys.exit(0 if trace.converged else 1)
    except (ConfigError, ValueError, BlowUp, NonFinite, NotRepresentable,
            SaturationInsufficient, HypothesisFailed, NoConvergence) as exc:
        sys.exit(_fail(exc))


@main.command()
@_common
def probe(config_path, out_dir, seed, jobs, fmt):
    """Surjectivity sweep over the projected target ball."""
    try:
        cfg, out, trunc, rng = _setup(config_path, out_dir, seed)
        proj, target, E, u0 = _projection_setup(cfg, trunc, rng)
        scfg = build_solver(cfg)
        ccfg = build_cascade(cfg)
        report = surjectivity_probe(
            u0, target, E, ccfg, scfg,
            grid_n=proj.get("grid_n", 5), tol=proj.get("tol", 1e-3),
            max_iter=proj.get("max_iter", 20), jobs=jobs,
        )
        if fmt == "csv":
            _write_text(out, "coverage.csv", cfg, report.to_csv())
        else:
            rows = [
                {k: v for k, v in r.items() if k != "wall_time"} for r in report.rows
            ]
            _write_json(out, "coverage.json", cfg,
                        {"rows": rows, "eps_probe": report.eps_probe})
        click.echo(
            f"coverage={report.coverage:.3f} points={len(report.rows)} "
            f"eps_probe={report.eps_probe:.3e}"
        )
        sys.exit(0 if report.coverage == 1.0 else 1)
    except (ConfigError, ValueError, BlowUp, NonFinite, NotRepresentable,
            SaturationInsufficient, HypothesisFailed, NoConvergence) as exc:
        sys.exit(_fail(exc))


if __name__ == "__main__":
    main()

"""Configuration ingestion, pipeline orchestration, and report emission.

The pipeline runs the verification stages in dependency order: necessary
conditions, second-variation coercivity (two independent methods), the
field-of-extremals certificate, and the empirical falsifier. A hard
failure skips the remaining stages; a falsifier counterexample overrides
every other verdict.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import os
import time

import numpy as np
import scipy
import jsonschema

from . import __version__
from .chart import dubins_adapted_chart
from .controls import ZeroControl
from .extremal import (
    Tolerances,
    adjoint_trajectory,
    condition_battery,
    dubins_boundary_tangents,
    dubins_initial_covector,
    trajectory_to_csv,
)
from .falsifier import TargetSpec, competitor_sweep, report_to_csv
from .geometry import GroupGeometry, certificate_check, flow_samples_to_csv
from .secondvar import (
    assemble_lq,
    conjugate_point_test,
    det_trace_to_csv,
    galerkin_coercivity,
)
from .systems import build_dubins_system

SCHEMA_VERSION = 1

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "schema_version": {"type": "integer", "enum": [SCHEMA_VERSION]},
        "system": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"type": "string", "enum": ["dubins"]},
                "space_form": {"type": "string",
                               "enum": ["euclidean", "sphere", "hyperbolic"]},
                "N": {"type": "integer", "minimum": 3},
                "drift_sign": {"type": "number", "enum": [1, -1]},
            },
            "required": ["kind"],
        },
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "equality": {"type": "number"},
                "rank": {"type": "number"},
                "sglc_min_margin": {"type": "number"},
            },
        },
        "rho_grid": {"type": "array", "items": {"type": "number"}},
        "galerkin_k": {"type": "array",
                       "items": {"type": "integer", "minimum": 4}},
        "certificate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rho": {"type": "number"},
                "lambda_radius": {"type": "number"},
                "n_samples": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
                "grid_points": {"type": "integer", "minimum": 2},
            },
        },
        "falsifier": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_samples": {"type": "integer", "minimum": 0},
                "radius": {"type": "number", "minimum": 0},
                "seed": {"type": "integer"},
                "dt": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "checks": {
            "type": "array",
            "items": {"type": "string",
                      "enum": ["conditions", "coercivity", "certificate",
                               "falsifier"]},
        },
        "record_timings": {"type": "boolean"},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "report": {"type": ["string", "null"]},
                "csv_dir": {"type": ["string", "null"]},
            },
        },
    },
}

DEFAULT_CONFIG = {
    "schema_version": SCHEMA_VERSION,
    "system": {"kind": "dubins", "space_form": "euclidean", "N": 3,
               "drift_sign": 1},
    "horizon": 1.0,
    "dt": 0.01,
    "tolerances": {"equality": 1e-9, "rank": 1e-8, "sglc_min_margin": 1e-6},
    "rho_grid": [2.0 ** k for k in range(-6, 7)],
    "galerkin_k": [16],
    "certificate": {"rho": 1.0, "lambda_radius": 0.1, "n_samples": 128,
                    "seed": 0, "grid_points": 33},
    "falsifier": {"n_samples": 200, "radius": 0.1, "seed": 0, "dt": 0.02},
    "checks": ["conditions", "coercivity", "certificate", "falsifier"],
    "record_timings": False,
    "output": {"report": None, "csv_dir": None},
}


class ConfigError(ValueError):
    """Invalid run configuration."""


def _merge(defaults, override):
    if isinstance(defaults, dict) and isinstance(override, dict):
        out = dict(defaults)
        for key, val in override.items():
            out[key] = _merge(defaults.get(key), val)
        return out
    return copy.deepcopy(override)


def load_config(doc: dict) -> dict:
    """Validate a config document and materialize all defaults."""
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    return _merge(DEFAULT_CONFIG, doc)


def thread_pool_size() -> int:
    """Worker cap for sample-parallel stages, from SINGCERT_THREADS."""
    raw = os.environ.get("SINGCERT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _build_problem(config: dict):
    spec = config["system"]
    system = build_dubins_system(spec["space_form"], spec["N"])
    # the covector is normalized against the unflipped drift, so a flipped
    # drift sign yields F_0 = -1 and a positive-definite Legendre form: a
    # deliberately broken reference for exercising the failure path
    p0 = dubins_initial_covector(system)
    if spec.get("drift_sign", 1) == -1:
        system = dataclasses.replace(system, drift=-system.drift,
                                     _bracket_cache={})
    chart = dubins_adapted_chart(system)
    n_steps = max(int(round(config["horizon"] / config["dt"])), 8)
    grid = np.linspace(0.0, config["horizon"], n_steps + 1)
    trajectory = adjoint_trajectory(system, p0, ZeroControl(system.m), grid)
    return system, chart, trajectory


def run_check(config: dict) -> dict:
    """Run the staged pipeline and assemble the machine-readable report."""
    config = load_config(config)
    system, chart, trajectory = _build_problem(config)
    tol_cfg = config["tolerances"]
    tolerances = Tolerances(equality=tol_cfg["equality"],
                            rank=tol_cfg["rank"],
                            sglc_min_margin=tol_cfg["sglc_min_margin"])
    stages: dict = {}
    timings: dict = {}
    hard_failure = False
    csv_dir = config["output"]["csv_dir"]
    if csv_dir:
        os.makedirs(csv_dir, exist_ok=True)

    for stage in config["checks"]:
        if hard_failure:
            stages[stage] = {"status": "skipped"}
            timings[stage] = 0.0
            continue
        started = time.perf_counter()
        if stage == "conditions":
            report = condition_battery(trajectory,
                                       dubins_boundary_tangents(system),
                                       tol=tolerances)
            stages[stage] = {"status": "passed" if report.passed else "failed",
                             "report": report.as_dict()}
            hard_failure = not report.passed
            if csv_dir:
                trajectory_to_csv(trajectory,
                                  os.path.join(csv_dir, "trajectory.csv"))
        elif stage == "coercivity":
            lq = assemble_lq(system, trajectory, chart)
            gal = galerkin_coercivity(lq, config["galerkin_k"][0])
            conj = conjugate_point_test(lq, rho_grid=config["rho_grid"])
            passed = gal.coercive or conj.coercive
            stages[stage] = {"status": "passed" if passed else "failed",
                             "galerkin": gal.as_dict(),
                             "conjugate_point": conj.as_dict(),
                             "verdicts_agree": gal.verdict == conj.verdict}
            hard_failure = not passed
            if csv_dir:
                det_trace_to_csv(conj, os.path.join(csv_dir, "det_trace.csv"))
        elif stage == "certificate":
            cert_cfg = config["certificate"]
            cert_grid = np.linspace(0.0, config["horizon"],
                                    cert_cfg["grid_points"])
            report = certificate_check(
                system, trajectory, rho=cert_cfg["rho"],
                lambda_radius=cert_cfg["lambda_radius"], grid=cert_grid,
                n_samples=cert_cfg["n_samples"], seed=cert_cfg["seed"])
            stages[stage] = {
                "status": "passed" if report.certified else "failed",
                "report": report.as_dict()}
            hard_failure = not report.certified
            if csv_dir:
                geom = GroupGeometry(system)
                samples = geom.super_hamiltonian_flow(trajectory.points[0],
                                                      cert_grid)
                flow_samples_to_csv(geom, samples,
                                    os.path.join(csv_dir, "flow.csv"))
        elif stage == "falsifier":
            fals_cfg = config["falsifier"]
            target = TargetSpec(system, trajectory.points[-1].q)
            report = competitor_sweep(
                system, trajectory, target,
                n_samples=fals_cfg["n_samples"], radius=fals_cfg["radius"],
                seed=fals_cfg["seed"], dt=fals_cfg["dt"])
            stages[stage] = {
                "status": "failed" if report.refuted else "passed",
                "report": report.as_dict()}
            if csv_dir:
                report_to_csv(report, os.path.join(csv_dir, "sweep.csv"))
        timings[stage] = (time.perf_counter() - started
                          if config["record_timings"] else 0.0)

    verdict = _overall_verdict(config, stages)
    return {
        "schema_version": SCHEMA_VERSION,
        "config": config,
        "versions": {"singcert": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "thread_pool_size": thread_pool_size(),
        "stages": stages,
        "timings_s": timings,
        "verdict": verdict,
    }


def _overall_verdict(config: dict, stages: dict) -> str:
    if not config["checks"]:
        return "no checks requested"
    fals = stages.get("falsifier")
    if fals and fals.get("status") == "failed":
        return "refuted"
    proof = ("conditions", "coercivity", "certificate")
    if all(stages.get(s, {}).get("status") == "passed" for s in proof):
        return "optimality certified"
    requested = [s for s in config["checks"] if s != "falsifier"]
    if all(stages.get(s, {}).get("status") == "passed" for s in requested):
        return "checks passed, not certified"
    return "not certified"


def run_sweep(config: dict, parameter: str, values) -> list:
    """Re-run the pipeline across a one-parameter family of configs."""
    reports = []
    for value in values:
        variant = copy.deepcopy(config)
        if parameter == "N":
            variant.setdefault("system", {})["N"] = int(value)
        elif parameter == "horizon":
            variant["horizon"] = float(value)
        elif parameter == "rho":
            variant.setdefault("certificate", {})["rho"] = float(value)
        elif parameter == "K":
            variant["galerkin_k"] = [int(value)]
        else:
            raise ConfigError(f"unknown sweep parameter: {parameter}")
        reports.append(run_check(variant))
    return reports


def _sanitize(obj):
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_sanitize(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        val = float(obj)
        return val if np.isfinite(val) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def emit(report, path=None) -> str:
    """Serialize a report (or list of reports) to deterministic JSON."""
    text = json.dumps(_sanitize(report), sort_keys=True, indent=2) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    return text

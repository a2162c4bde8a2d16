"""Batch experiment runner.

Usage: ``hklab <subcommand> --config run.json [--out DIR] [--seed U64] [--jobs N] [--cap D]``.

Every subcommand writes ``report.json`` (and ``trace_<k>.csv`` files when the
config sets ``"traces": true``) into the output directory.  Exit status is 0
when every check in scope passes, 1 on a failed check (listed under
``"failures"`` in the report) and 2 on a configuration error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Optional

import numpy as np

from . import __version__
from .core import EPSILON, DomainError, Frame, State
from .critical import (
    LiftedHessianError,
    anticommutator_check,
    assemble_lifted_hessian,
    check_kernel_containment,
    find_critical_points_with_diagnostics,
    hessian_f23,
    morse_index,
    verify_critical_identities,
)
from .flow import (
    OBJECTIVES,
    SEMISTABLE_OPTIONS,
    FlowOptions,
    StiffFailure,
    classify_semistable,
    integrate_descent,
    lyapunov_monitor_u1,
    sample_ball,
    sample_W,
)
from .frames import FrameSamplingError, check_general_frame, enumerate_subtorus_data, sample_general_frame
from .local_model import SHIPPED_QUADRICS, QuadricModel, RootFindingError, verify_cone_structure
from .models import ActionModel, ModelError, TorusModel, build_model
from .morse import (
    PerfectionViolation,
    PipelineError,
    PoincareSeries,
    StratumDatum,
    assemble_quotient_series,
    circle_closed_form,
    circle_example_pipeline,
    classifying_series,
)

SUBCOMMANDS = ("flow", "lyapunov", "critical", "frame-check", "poincare", "blowup-check", "semistable")
ANTICOMMUTATOR_TOL = 1e-6
ADJUGATE_TOL = 1e-8


class ConfigError(ValueError):
    pass


# -- deterministic JSON ---------------------------------------------------------


def _encode(obj, indent: int = 0) -> str:
    """JSON with every float printed with 17 significant digits."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return '"NaN"'
        if math.isinf(v):
            return '"Infinity"' if v > 0 else '"-Infinity"'
        return "%.17g" % v
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), indent)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_encode(v, indent + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps(obj) -> str:
    return _encode(obj) + "\n"


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


# -- config ---------------------------------------------------------------------


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            config = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    return config


def _seed(value) -> int:
    try:
        s = int(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"seed must be an integer, got {value!r}") from exc
    if not 0 <= s < 2**64 or (isinstance(value, float) and value != s):
        raise ConfigError(f"seed must be a 64-bit unsigned integer, got {value!r}")
    return s


def _model(config: dict) -> ActionModel:
    if "model" not in config:
        raise ConfigError("config needs a 'model' descriptor")
    try:
        return build_model(config["model"])
    except (ModelError, DomainError) as exc:
        raise ConfigError(f"bad model descriptor: {exc}") from exc


def _frame(config: dict, model: Optional[ActionModel], seed: int):
    """(Frame, info dict) from ``"frame"``: identity, a 3x3 matrix or sample-general."""
    spec = config.get("frame", "identity")
    if spec == "identity":
        return Frame.identity(), {"source": "identity"}
    if spec == "sample-general" or (isinstance(spec, dict) and "sample-general" in spec):
        fseed = _seed(spec.get("seed", seed)) if isinstance(spec, dict) else seed
        try:
            frame, attempts = sample_general_frame(model, fseed, return_attempts=True)
        except FrameSamplingError as exc:
            raise ConfigError(str(exc)) from exc
        return frame, {"source": "sample-general", "seed": fseed, "attempts": attempts}
    try:
        return Frame(np.array(spec, dtype=float)), {"source": "explicit"}
    except (DomainError, ValueError) as exc:
        raise ConfigError(f"bad frame: {exc}") from exc


def _flow_options(config: dict, base: FlowOptions = FlowOptions()) -> FlowOptions:
    extra = config.get("flow", {})
    if not isinstance(extra, dict):
        raise ConfigError("'flow' must be an object of flow options")
    unknown = set(extra) - set(FlowOptions.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown flow options: {sorted(unknown)}")
    try:
        return base.replace(**extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad flow options: {exc}") from exc


def _sampler(config: dict, seed: int, default_radius: float = 10.0):
    s = config.get("sampler", {})
    try:
        count = int(s.get("count", 10))
        radius = float(s.get("radius", default_radius))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad sampler: {exc}") from exc
    if count < 1 or not radius > 0:
        raise ConfigError("sampler count and radius must be positive")
    return count, radius, np.random.default_rng(seed)


def _objective(config: dict, default: str) -> str:
    obj = config.get("objective", default)
    if obj not in OBJECTIVES:
        raise ConfigError(f"objective must be one of {OBJECTIVES}")
    return obj


# -- workers (module level so process pools can pickle them) ----------------------

_MODELS: dict = {}


def _worker_model(desc: dict) -> ActionModel:
    key = json.dumps(desc, sort_keys=True)
    if key not in _MODELS:
        _MODELS[key] = build_model(desc)
    return _MODELS[key]


def _trace_rows(trace) -> list:
    return [list(row) for row in trace.rows()]


def _descent_task(args):
    desc, R, objective, r0, opts, keep_rows, lyapunov_c = args
    model = _worker_model(desc)
    try:
        trace = integrate_descent(model, Frame(R), objective, State.from_real(r0), opts)
    except StiffFailure as exc:
        return {"status": "stiff-failure", "sup_rho": float(exc.last_state.norm() ** 2), "final_f": float("nan"), "t": exc.t}
    out = {
        "status": trace.status,
        "sup_rho": float(trace.rho.max()),
        "final_f": float(trace.f[-1]),
        "t": float(trace.t[-1]),
        "samples": len(trace),
    }
    if lyapunov_c is not None:
        out["certificate"] = lyapunov_monitor_u1(trace, complex(*lyapunov_c)).as_dict()
    if keep_rows:
        out["rows"] = _trace_rows(trace)
    return out


def _semistable_task(args):
    desc, R, r0, opts, keep_rows = args
    model = _worker_model(desc)
    try:
        v = classify_semistable(model, Frame(R), State.from_real(r0), opts)
    except StiffFailure as exc:
        return {"verdict": "undecided", "status": "stiff-failure", "mu1_norm": float("nan"), "t": exc.t}
    out = {"verdict": v.verdict, "status": v.trace.status, "mu1_norm": v.mu1_norm, "threshold": v.threshold}
    if keep_rows:
        out["rows"] = _trace_rows(v.trace)
    return out


def _map(fn: Callable, tasks: list, jobs: int) -> list:
    """Results in task order regardless of completion order."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def _write_traces(out_dir: str, results: list) -> None:
    from .flow import CSV_COLUMNS

    for k, res in enumerate(results):
        rows = res.pop("rows", None)
        if rows is None:
            continue
        with open(os.path.join(out_dir, f"trace_{k}.csv"), "w") as fh:
            fh.write(",".join(CSV_COLUMNS) + "\n")
            for row in rows:
                fh.write(",".join(["%.17g" % v for v in row[:5]] + [row[5]]) + "\n")


# -- subcommands -------------------------------------------------------------------


def cmd_flow(config, ctx):
    model = _model(config)
    frame, finfo = _frame(config, model, ctx["seed"])
    objective = _objective(config, "f23-on-V")
    opts = _flow_options(config)
    count, radius, rng = _sampler(config, ctx["seed"])
    starts = []
    for _ in range(count):
        z = sample_W(model, frame, rng, radius) if objective == "mu1sq-on-W" else sample_ball(model.n, rng, radius)
        starts.append(z.real())
    tasks = [(config["model"], frame.R, objective, r0, opts, ctx["traces"], None) for r0 in starts]
    results = _map(_descent_task, tasks, ctx["jobs"])
    _write_traces(ctx["out"], results)
    counts: dict = {}
    for r in results:
        counts[r["status"]] = counts.get(r["status"], 0) + 1
    failures = [
        {"check": "flow-closed", "start": k, "detail": f"status {r['status']}"}
        for k, r in enumerate(results)
        if r["status"] in ("diverged", "stiff-failure")
    ]
    body = {"frame": finfo, "objective": objective, "count": count, "status_counts": counts, "traces": results}
    return body, failures


def cmd_lyapunov(config, ctx):
    model = _model(config)
    if not (isinstance(model, TorusModel) and model.weights.shape[0] == 1 and np.all(model.weights == 1)):
        raise ConfigError("lyapunov needs a circle model with all weights 1")
    c = complex(model.cC_closed[0])
    opts = _flow_options(config)
    count, radius, rng = _sampler(config, ctx["seed"], default_radius=10.0)
    starts = [sample_ball(model.n, rng, radius).real() for _ in range(count)]
    tasks = [(config["model"], np.eye(3), "f23-on-V", r0, opts, ctx["traces"], (c.real, c.imag)) for r0 in starts]
    results = _map(_descent_task, tasks, ctx["jobs"])
    _write_traces(ctx["out"], results)
    failures = []
    passed = 0
    for k, r in enumerate(results):
        cert = r.get("certificate")
        if cert is not None and cert["passed"]:
            passed += 1
        else:
            failures.append({"check": "lyapunov", "start": k, "detail": cert or r["status"]})
    body = {"c": [c.real, c.imag], "count": count, "certificates_passed": passed, "traces": results}
    return body, failures


def cmd_critical(config, ctx):
    model = _model(config)
    frame, finfo = _frame(config, model, ctx["seed"])
    opts = _flow_options(config)
    count, radius, rng = _sampler(config, ctx["seed"], default_radius=4.0)
    seeds = [sample_ball(model.n, rng, radius) for _ in range(count)]
    if config.get("include_origin", True):
        seeds.insert(0, State.zeros(model.n))
    points, dropped = find_critical_points_with_diagnostics(model, frame, seeds, opts)
    failures = []
    entries = []
    for k, cp in enumerate(points):
        entry = cp.as_dict()
        ident = verify_critical_identities(model, frame, cp)
        entry["identities"] = ident
        if not ident["passed"]:
            failures.append({"check": "critical-identities", "point": k, "detail": ident["margins"]})
        hess = hessian_f23(model, frame, cp.z)
        entry["morse_index"] = list(morse_index(hess))
        entry["inertia"] = list(hess.inertia)
        anti = anticommutator_check(model, frame, cp)
        entry["anticommutator"] = anti._asdict()
        if max(anti) > ANTICOMMUTATOR_TOL:
            failures.append({"check": "anticommutator", "point": k, "detail": anti._asdict()})
        try:
            lh = assemble_lifted_hessian(model, frame, cp)
        except LiftedHessianError as exc:
            failures.append({"check": "lifted-matrix", "point": k, "detail": str(exc)})
            entries.append(entry)
            continue
        kv = check_kernel_containment(lh)
        entry["lifted"] = {
            "adjugate_residual": lh.adjugate_residual,
            "lift_residuals": lh.lift_residuals,
            "certified_variant": lh.certified_variant,
            "kernel": kv.as_dict(),
        }
        if lh.adjugate_residual > ADJUGATE_TOL:
            failures.append({"check": "adjugate", "point": k, "detail": lh.adjugate_residual})
        if not kv.contained:
            failures.append({"check": "kernel-containment", "point": k, "detail": kv.as_dict()})
        entries.append(entry)
    body = {
        "frame": finfo,
        "seeds": len(seeds),
        "dropped": [list(d) for d in dropped],
        "points": entries,
    }
    return body, failures


def cmd_frame_check(config, ctx):
    model = _model(config)
    frame, finfo = _frame(config, model, ctx["seed"])
    verdict = check_general_frame(model, frame)
    body = {
        "frame": finfo,
        "R": frame.R,
        "subtorus_data": [d.as_dict() for d in enumerate_subtorus_data(model)],
        **verdict.as_dict(),
    }
    expect = config.get("expect", "general")
    if expect not in ("general", "not-general"):
        raise ConfigError("expect must be 'general' or 'not-general'")
    failures = []
    if body["verdict"] != expect:
        failures.append({"check": "general-frame", "detail": f"verdict {body['verdict']}, expected {expect}"})
    return body, failures


def _series(spec, cap: int) -> PoincareSeries:
    if isinstance(spec, list):
        return PoincareSeries(spec, cap)
    return classifying_series(spec, cap)


def cmd_poincare(config, ctx):
    failures = []
    assembly = config.get("assembly")
    try:
        if assembly is None:
            model = _model(config)
            if not (isinstance(model, TorusModel) and model.weights.shape[0] == 1):
                raise ConfigError("poincare without 'assembly' needs a circle model")
            n = model.n
            c = complex(model.cC_closed[0])
            cap = ctx["cap"] if ctx["cap"] is not None else int(config.get("cap", 2 * n + 2))
            expected = circle_closed_form(n, cap)
            try:
                series = circle_example_pipeline(n, c, cap)
            except (PipelineError, PerfectionViolation) as exc:
                failures.append({"check": "pipeline", "detail": str(exc)})
                series = None
            closed = {"closed_form": str(expected)}
        else:
            cap = ctx["cap"] if ctx["cap"] is not None else int(config.get("cap", 10))
            base = _series(assembly["base"], cap)
            strata = [
                StratumDatum(int(s["index"]), _series(s["series"], cap), s.get("label", ""))
                for s in assembly.get("strata", [])
            ]
            try:
                series = assemble_quotient_series(base, strata, cap)
            except PerfectionViolation as exc:
                failures.append({"check": "perfection", "degree": exc.degree, "detail": str(exc)})
                series = None
            closed = {}
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad poincare config: {exc}") from exc
    body = {"cap": cap, **closed}
    if series is not None:
        body.update(
            {
                "coefficients": series.even_coefficients(),
                "all_degree_coefficients": list(series.coefficients),
                "polynomial": str(series),
                "palindromic": series.is_palindromic(),
            }
        )
    body["verdict"] = "pass" if not failures else "fail"
    return body, failures


def cmd_blowup_check(config, ctx):
    descs = config.get("quadrics", [{"preset": p} for p in SHIPPED_QUADRICS])
    N = int(config.get("samples", 50))
    degree = int(config.get("line_bundle_degree", 2))
    try:
        quadrics = [QuadricModel.from_descriptor(d) for d in descs]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad quadric descriptor: {exc}") from exc
    failures = []
    reports = []
    for k, q in enumerate(quadrics):
        try:
            rep = verify_cone_structure(q, N, seed=np.random.default_rng([ctx["seed"], k]), line_bundle_degree=degree)
        except RootFindingError as exc:
            failures.append({"check": "sampling", "quadric": k, "detail": str(exc)})
            continue
        reports.append(rep.as_dict())
        for part, ok in rep.passed.items():
            if not ok:
                failures.append({"check": part, "quadric": k, "model": q.name})
    return {"samples": N, "line_bundle_degree": degree, "quadrics": reports}, failures


def cmd_semistable(config, ctx):
    model = _model(config)
    frame, finfo = _frame(config, model, ctx["seed"])
    opts = _flow_options(config, SEMISTABLE_OPTIONS)
    count, radius, rng = _sampler(config, ctx["seed"], default_radius=4.0)
    starts = [sample_W(model, frame, rng, radius).real() for _ in range(count)]
    tasks = [(config["model"], frame.R, r0, opts, ctx["traces"]) for r0 in starts]
    results = _map(_semistable_task, tasks, ctx["jobs"])
    _write_traces(ctx["out"], results)
    counts: dict = {}
    for r in results:
        counts[r["verdict"]] = counts.get(r["verdict"], 0) + 1
    expect = config.get("expect")
    failures = []
    for k, r in enumerate(results):
        if r["verdict"] == "undecided" or (expect is not None and r["verdict"] != expect):
            failures.append({"check": "semistable", "start": k, "detail": r["verdict"]})
    return {"frame": finfo, "count": count, "verdict_counts": counts, "points": results}, failures


COMMANDS = {
    "flow": cmd_flow,
    "lyapunov": cmd_lyapunov,
    "critical": cmd_critical,
    "frame-check": cmd_frame_check,
    "poincare": cmd_poincare,
    "blowup-check": cmd_blowup_check,
    "semistable": cmd_semistable,
}


def run(subcommand: str, config_path: str, out: Optional[str] = None, seed=None, jobs: int = 1, cap: Optional[int] = None) -> int:
    """Run one subcommand; returns the exit status."""
    try:
        config = load_config(config_path)
        if subcommand not in COMMANDS:
            raise ConfigError(f"unknown subcommand {subcommand!r}")
        eff_seed = _seed(seed if seed is not None else config.get("seed", config.get("sampler", {}).get("seed", 0)))
        out_dir = out or config.get("out", ".")
        if jobs < 1:
            raise ConfigError("--jobs must be positive")
        if cap is not None and cap < 0:
            raise ConfigError("--cap must be nonnegative")
        os.makedirs(out_dir, exist_ok=True)
        ctx = {"seed": eff_seed, "jobs": jobs, "cap": cap, "out": out_dir, "traces": bool(config.get("traces", False))}
        body, failures = COMMANDS[subcommand](config, ctx)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    report = {
        "tool": "hklab",
        "version": __version__,
        "subcommand": subcommand,
        "config_hash": config_hash(config),
        "epsilon": EPSILON,
        "seed": eff_seed,
        "passed": not failures,
        "failures": failures,
        **body,
    }
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(dumps(report))
    return 0 if not failures else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="hklab", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--out", help="output directory (default: config 'out' or .)")
    parser.add_argument("--seed", help="64-bit unsigned seed overriding the config")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    parser.add_argument("--cap", type=int, help="degree cap for Poincaré series")
    args = parser.parse_args(argv)
    return run(args.subcommand, args.config, args.out, args.seed, args.jobs, args.cap)


if __name__ == "__main__":
    sys.exit(main())

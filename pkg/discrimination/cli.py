"""Command-line front end.

Every subcommand loads one scenario (``builtin:NAME`` or a JSON path),
writes its artifacts into ``--output-dir`` and returns one of the exit codes
below.  JSON floats are written with ``repr`` so reruns are byte-identical;
``--pretty`` rounds them for reading.
"""
import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import schemas
from .errors import (BackendError, DiscriminationError, LpNumericalError, SamplingFailed,
                     ScenarioError, ShapeError, UnsupportedObjectiveError)
from .formulation import (CONSERVATIVE_FORMS, EXACT_METHODS, FORMULATIONS, build_conservative,
                          build_exact, compare, complexity_report, design, pair_elimination,
                          verify_design)
from .invalidation import ObservationWindow, timeline
from .logs import setup_logging
from .model import OBJECTIVE_SPELLINGS, ObjectiveSpec, load_scenario, save_scenario, validate_scenario
from .scenarios import BUILTIN_SCENARIOS, builtin_scenario, run_simulation
from .solver.problem import BRANCHING_RULES, NODE_ORDERS, SolverParams, Status
from .solver.textformat import write_problem
from .stack import dump_debug, stack_all, stack_pairs

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INFEASIBLE = 1
EXIT_CONFIG = 2
EXIT_LIMIT = 3
EXIT_BACKEND = 4

LIMIT_STATUSES = {Status.NODE_LIMIT.value, Status.TIME_LIMIT.value, Status.GAP_LIMIT.value}


# ----------------------------------------------------------------------
# arguments


def _add_scenario_args(parser):
    parser.add_argument("--scenario", default="builtin:numerical",
                        help=f"builtin:NAME ({', '.join(BUILTIN_SCENARIOS)}) or a scenario JSON file")
    parser.add_argument("--horizon", type=int, default=None, help="override the scenario horizon T")
    parser.add_argument("--objective", choices=OBJECTIVE_SPELLINGS, default=None,
                        help="override the scenario objective")
    parser.add_argument("--output-dir", default="results", help="directory for artifacts")
    parser.add_argument("--pretty", action="store_true", help="round floats in JSON output")
    parser.add_argument("--jobs", type=int, default=1, help="parallel pair-level LPs")
    parser.add_argument("--log-level", default=None, help="logging level (default from DISCRIMINATION_LOG_LEVEL)")


def _add_solver_args(parser):
    parser.add_argument("--node-limit", type=int, default=None)
    parser.add_argument("--time-limit", type=float, default=None, help="seconds")
    parser.add_argument("--rel-gap", type=float, default=None)
    parser.add_argument("--node-order", choices=NODE_ORDERS, default=None)
    parser.add_argument("--branching", choices=BRANCHING_RULES, default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="discrimination-design",
                                     description="Optimal separating input design for affine models")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", help="solve the exact and/or conservative design problem")
    _add_scenario_args(p)
    _add_solver_args(p)
    p.add_argument("--formulation", choices=("exact", "conservative", "both"), default="exact")
    p.add_argument("--conservative-form", choices=CONSERVATIVE_FORMS, default="support")
    p.add_argument("--exact-method", choices=EXACT_METHODS, default="auto",
                   help="auto: spatial search over inner duals when their ranges are finite; kkt: SOS-1 MILP")
    p.add_argument("--no-eliminate", action="store_true", help="skip pair elimination")
    p.add_argument("--backend", default=None,
                   help="external solver command with {problem} and {solution} placeholders")

    p = sub.add_parser("eliminate", help="list pairs that every admissible input separates")
    _add_scenario_args(p)

    p = sub.add_parser("verify", help="re-check a designed input against every pair")
    _add_scenario_args(p)
    p.add_argument("--design", required=True, help="design.json written by the design command")

    p = sub.add_parser("invalidate", help="run model invalidation on an observed window")
    _add_scenario_args(p)
    p.add_argument("--window", required=True, help="JSON file with keys u and z")

    p = sub.add_parser("simulate", help="seeded closed-loop runs with online invalidation")
    _add_scenario_args(p)
    p.add_argument("--design", required=True, help="design.json written by the design command")
    p.add_argument("--formulation", choices=("exact", "conservative"), default=None,
                   help="which design result to apply (default: the first with an input)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--true-model", type=int, default=None, help="default: every model")

    p = sub.add_parser("complexity", help="closed-form and measured problem sizes")
    _add_scenario_args(p)

    p = sub.add_parser("export", help="write scenario, stacked matrices and MILPs in text format")
    _add_scenario_args(p)
    p.add_argument("--formulation", choices=("exact", "conservative", "both"), default="both")
    p.add_argument("--conservative-form", choices=CONSERVATIVE_FORMS, default="explicit")
    return parser


# ----------------------------------------------------------------------
# helpers


def _load(args):
    source = args.scenario
    if source.startswith("builtin:"):
        scenario = builtin_scenario(source.split(":", 1)[1])
    else:
        scenario = load_scenario(source)
    if args.horizon is not None:
        scenario = scenario.with_horizon(args.horizon)
    if args.objective is not None:
        scenario = scenario.with_objective(ObjectiveSpec.parse(args.objective))
    report = validate_scenario(scenario)
    if not report.ok:
        raise ScenarioError("invalid scenario:\n  " + "\n  ".join(report.messages()))
    return scenario


def _params(args):
    params = SolverParams()
    overrides = {
        "node_limit": args.node_limit,
        "time_limit_seconds": args.time_limit,
        "rel_gap": args.rel_gap,
        "node_order": args.node_order,
        "branching": args.branching,
    }
    return replace(params, **{k: v for k, v in overrides.items() if v is not None})


def _rounded(obj, digits=6):
    if isinstance(obj, float):
        return float(f"{obj:.{digits}g}")
    if isinstance(obj, dict):
        return {k: _rounded(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v, digits) for v in obj]
    return obj


def _write_json(path, document, payload, pretty=False):
    """Validate ``payload`` against its document model, then write it."""
    document.model_validate(payload)
    if pretty:
        text = json.dumps(_rounded(payload), indent=2)
    else:
        text = json.dumps(payload)
    Path(path).write_text(text + "\n")
    return path


def _output_dir(args):
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_design(path, formulation=None):
    report = schemas.DesignReportDoc.model_validate_json(Path(path).read_text())
    for result in report.results:
        if result.u is not None and formulation in (None, result.formulation):
            return result
    raise ScenarioError(f"{path} holds no designed input" + (f" for {formulation}" if formulation else ""))


# ----------------------------------------------------------------------
# subcommands


def cmd_design(args):
    scenario = _load(args)
    params = _params(args)
    out = _output_dir(args)
    # the conservative input seeds the exact search when both run
    formulations = ("conservative", "exact") if args.formulation == "both" else (args.formulation,)
    print(f"Designing separating input for '{scenario.name}' "
          f"(N={scenario.N}, T={scenario.horizon}, objective={scenario.objective.label})")

    results = []
    start = None
    for formulation in formulations:
        with open(out / f"node-log-{formulation}.jsonl", "w") as log_stream:
            result = design(scenario, formulation, params, eliminate=not args.no_eliminate,
                            backend=args.backend, jobs=args.jobs, log_stream=log_stream,
                            conservative_form=args.conservative_form,
                            exact_method=args.exact_method, start=start)
        if formulation == "conservative" and result.verified:
            start = result.u
        results.append(result)
        if result.success:
            print(f"✅ {formulation}: {result.status}, objective {result.objective:.6g}, "
                  f"verified={result.verified}")
        else:
            print(f"❌ {formulation}: {result.status}")
        for message in result.warnings:
            print(f"⚠️  {message}")

    results.sort(key=lambda r: FORMULATIONS.index(r.formulation))
    payload = {"scenario": scenario.name, "results": [r.to_dict() for r in results]}
    if len(results) == 2:
        payload["comparison"] = compare(*results)
        gap = payload["comparison"]["gap"]
        if gap is not None:
            print(f"Conservatism gap: {gap:.6g}")
    path = _write_json(out / "design.json", schemas.DesignReportDoc, payload, args.pretty)
    print(f"Design written to {path}")

    statuses = {r.status for r in results}
    if statuses & LIMIT_STATUSES:
        return EXIT_LIMIT
    if any(not r.success for r in results):
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_eliminate(args):
    scenario = _load(args)
    out = _output_dir(args)
    result = pair_elimination(scenario, stack_pairs(scenario), jobs=args.jobs)
    payload = dict(result.to_dict(), scenario=scenario.name)
    print(f"{len(result.eliminated)} of {len(result.eliminated) + len(result.retained)} pairs eliminated")
    for pair in result.eliminated:
        print(f"  eliminated {pair.pair}")
    _write_json(out / "elimination.json", schemas.EliminationDoc, payload, args.pretty)
    return EXIT_OK


def cmd_verify(args):
    scenario = _load(args)
    out = _output_dir(args)
    result = _read_design(args.design)
    report = verify_design(scenario, stack_pairs(scenario), np.asarray(result.u), jobs=args.jobs)
    for entry in report.deltas:
        mark = "✓" if entry["passed"] else "✗"
        print(f"  {mark} pair {tuple(entry['pair'])}: δ = {entry['delta']:.6g}")
    _write_json(out / f"verification-{result.formulation}.json", schemas.VerificationDoc,
                report.to_dict(), args.pretty)
    if report.passed:
        print(f"✅ Design verified (min δ = {report.min_delta:.6g} ≥ ε = {scenario.epsilon:g})")
        return EXIT_OK
    print(f"❌ Design fails verification (min δ = {report.min_delta:.6g} < ε = {scenario.epsilon:g})")
    return EXIT_INFEASIBLE


def cmd_invalidate(args):
    scenario = _load(args)
    out = _output_dir(args)
    doc = schemas.WindowDoc.model_validate_json(Path(args.window).read_text())
    m_u, p = scenario.models[0].m_u, scenario.models[0].p
    window = ObservationWindow(np.asarray(doc.u, dtype=float).reshape(-1, m_u),
                               np.asarray(doc.z, dtype=float).reshape(-1, p))
    with open(out / "verdicts.jsonl", "w") as stream:
        entries = timeline(scenario, window, stream=stream)
    for entry in entries:
        schemas.VerdictEntry.model_validate(entry)
    final = entries[-1]
    print(f"Statuses at t={final['t']}: {', '.join(final['statuses'])}")
    if final["all_invalidated"]:
        print("❌ Every model is invalidated by the data")
        return EXIT_INFEASIBLE
    if final["identified"] is not None:
        print(f"✅ Identified model {final['identified']}")
    return EXIT_OK


def cmd_simulate(args):
    scenario = _load(args)
    out = _output_dir(args)
    result = _read_design(args.design, args.formulation)
    design_info = {"objective": result.objective, "deltas": [d.model_dump() for d in result.deltas]}
    true_models = range(scenario.N) if args.true_model is None else [args.true_model]
    missed = 0
    for true_model in true_models:
        for seed in range(args.seed, args.seed + args.runs):
            run = run_simulation(scenario, true_model, result.u, seed)
            stem = f"run-model{true_model}-seed{seed}"
            run.to_csv(out / f"{stem}.csv")
            manifest = run.write_manifest(out / f"{stem}.manifest.json", scenario, design_info)
            schemas.ManifestDoc.model_validate(manifest)
            if run.identified_at is None:
                missed += 1
                print(f"⚠️  model {true_model}, seed {seed}: not identified ({', '.join(run.final_statuses)})")
            else:
                print(f"✓ model {true_model}, seed {seed}: identified at t={run.identified_at}")
    print(f"Simulations written to {out}")
    return EXIT_OK if missed == 0 else EXIT_INFEASIBLE


def cmd_complexity(args):
    scenario = _load(args)
    out = _output_dir(args)
    report = complexity_report(scenario)
    for name in ("exact", "conservative"):
        closed, measured = report[name]["closed_form"], report[name]["measured"]
        print(f"{name}: SOS-1 {measured['sos1_count']} (closed form {closed['sos1_count']}), "
              f"binaries {measured['binary_count']}, continuous {measured['continuous_count']} "
              f"(closed form {closed['continuous_count']})")
    _write_json(out / "complexity.json", schemas.ComplexityDoc, dict(report, scenario=scenario.name))
    return EXIT_OK


def cmd_export(args):
    scenario = _load(args)
    out = _output_dir(args)
    save_scenario(scenario, out / f"{scenario.name}.scenario.json")
    schemas.write_scenario_schema(out / "scenario.schema.json")
    dump_debug(stack_all(scenario), out / f"{scenario.name}.stacked.json")
    if args.formulation in ("exact", "both"):
        problem = build_exact(scenario, stack_pairs(scenario)).problem
        with open(out / f"{scenario.name}.exact.milp", "w") as f:
            write_problem(problem, f)
    if args.formulation in ("conservative", "both"):
        problem = build_conservative(scenario, form=args.conservative_form).problem
        with open(out / f"{scenario.name}.conservative.milp", "w") as f:
            write_problem(problem, f)
    print(f"Exported '{scenario.name}' to {out}")
    return EXIT_OK


COMMANDS = {
    "design": cmd_design,
    "eliminate": cmd_eliminate,
    "verify": cmd_verify,
    "invalidate": cmd_invalidate,
    "simulate": cmd_simulate,
    "complexity": cmd_complexity,
    "export": cmd_export,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except (ScenarioError, ShapeError, SamplingFailed, UnsupportedObjectiveError,
            ValidationError, ValueError, OSError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendError as e:
        print(f"❌ Backend failure: {e}", file=sys.stderr)
        return EXIT_BACKEND
    except LpNumericalError as e:
        print(f"❌ Solver failure: {e}", file=sys.stderr)
        return EXIT_LIMIT
    except DiscriminationError as e:
        logger.exception("unexpected failure")
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())

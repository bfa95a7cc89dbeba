"""Command-line interface: scenario-driven experiments with CSV reports.

Commands
--------
solve          stationary solve + full measure report
measures       solve and print the flat measure table to stdout
sweep          one measure row per sweep point (per case), plus plot-ready
               per-figure CSV files
simulate       discrete-event estimates with confidence intervals and the
               analytic comparison
optimize       simulated-annealing cost minimization (or the full reference
               grid with --grid)
compare-cases  the sweep run repeated for the model cases I..V

Every run writes ``resolved.scenario`` (the scenario after defaults) next to
its outputs so reports are self-describing and replayable.  Outputs are
UTF-8 CSV with LF line endings; numbers use a fixed 12-significant-digit
format so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .generator import ParametricChain, RateScales, assemble_generator
from .measures import SCALAR_MEASURES, MeasureReport, compute_measures
from .optimizer import (
    REFERENCE_OPTIMA,
    CostObjective,
    CostSpec,
    SaConfig,
    gradient_probe,
    simulated_annealing,
)
from .scenario import (
    CASES,
    Scenario,
    ScenarioError,
    build_case,
    load_scenario,
    sweep_scales,
)
from .simulator import SIM_MEASURES, simulate
from .solver import choose_truncation, solve_truncated
from .stochastic import ValidationError, arrival_intensities

WORKERS_ENV = "RETRIALQ_WORKERS"

SWEEP_FIGURE_MEASURES = ("EB", "ER", "lambda_H_out", "P_d", "P_b",
                         "P_loss_total", "P_c_avail", "theta_r_succ",
                         "P_leave_no_service")


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    return str(x)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


def _prepare_out(scenario: Scenario, out: str) -> Path:
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "resolved.scenario").write_text(scenario.resolved_text(), encoding="utf-8")
    return outdir


def _apply_overrides(scenario: Scenario, args) -> Scenario:
    data = dict(scenario.data)
    if args.epsilon is not None:
        data["epsilon"] = args.epsilon
    if args.strict_paper_blocks:
        data["strict_paper_blocks"] = True
    if args.strict_paper_sums:
        data["strict_paper_sums"] = True
    if getattr(args, "backend", None):
        data["backend"] = args.backend
    return Scenario(data=data, path=scenario.path)


def _solve_scenario(scenario: Scenario, epsilon: float | None = None):
    model = scenario.build_model()
    chain = ParametricChain(model, backend=scenario.backend,
                            strict=scenario.strict_blocks)
    res = choose_truncation(model, epsilon or scenario.epsilon, chain=chain)
    report = compute_measures(res.dist, res.generator,
                              strict_sums=scenario.strict_sums)
    return model, chain, res, report


# ---------------------------------------------------------------------------
# solve / measures
# ---------------------------------------------------------------------------


def run_solve(scenario: Scenario, out: str, dump_blocks: bool = False) -> MeasureReport:
    outdir = _prepare_out(scenario, out)
    model, chain, res, report = _solve_scenario(scenario)
    summary = model.summary()
    header = ["M", "tail_mass", "residual", "boundary_condition", "backend",
              "total_dim", "met_criterion", "epsilon",
              *sorted(summary)]
    row = [res.M, res.dist.tail_mass, res.dist.residual, res.dist.boundary_condition,
           res.generator.backend, res.generator.total_dim, res.met, scenario.epsilon,
           *[summary[k] for k in sorted(summary)]]
    _write_csv(outdir / "summary.csv", header, [row])
    _write_csv(outdir / "measures.csv", list(SCALAR_MEASURES),
               [[report.scalars()[k] for k in SCALAR_MEASURES]])
    arr_rows = []
    for name, arr in report.arrays().items():
        arr_rows.extend([name, k, float(v)] for k, v in enumerate(arr))
    _write_csv(outdir / "measures_arrays.csv", ["measure", "index", "value"], arr_rows)
    (outdir / "measures.txt").write_text(report.flat_table(), encoding="utf-8")
    tail_rows = [[m, t] for m, t in sorted(res.tail_curve.items())]
    _write_csv(outdir / "tail_curve.csv", ["M", "tail_mass"], tail_rows)
    if dump_blocks:
        with open(outdir / "blocks.txt", "w", encoding="utf-8") as fh:
            res.generator.dump_blocks(fh)
    return report


def run_measures(scenario: Scenario, out: str) -> MeasureReport:
    report = run_solve(scenario, out)
    sys.stdout.write(report.flat_table())
    return report


# ---------------------------------------------------------------------------
# sweep / compare-cases
# ---------------------------------------------------------------------------


def _sweep_case_job(args):
    scenario_data, path, case, variable, values, epsilon, strict_sums = args
    scenario = Scenario(data=scenario_data, path=path)
    base = scenario.build_model()
    model = build_case(base, case)
    chain = ParametricChain(model, backend=scenario.backend,
                            strict=scenario.strict_blocks)
    # One truncation level per case: the larger of the minimal levels at the
    # two sweep endpoints, so every point meets the tail criterion and the
    # truncation bias varies smoothly along the sweep.
    cache: dict = {}
    m_fix = 1
    for endpoint in (values[0], values[-1]):
        r = choose_truncation(model, epsilon, chain=chain,
                              scales=sweep_scales(model, variable, endpoint))
        m_fix = max(m_fix, r.M)
    rows = []
    for value in values:
        scales = sweep_scales(model, variable, value)
        gen = chain.generator(m_fix, scales)
        dist = solve_truncated(gen)
        report = compute_measures(dist, gen, strict_sums=strict_sums)
        scalars = report.scalars()
        scalars["P_loss_total"] = float(report.p_loss_failure[1:].sum())
        rows.append({
            "case": case, "variable": variable, "value": value,
            "M": m_fix, "tail_mass": dist.tail_mass, **scalars,
        })
    return rows


def run_sweep(scenario: Scenario, out: str, workers: int = 1,
              cases: list[str] | None = None) -> list[dict]:
    outdir = _prepare_out(scenario, out)
    sweep = scenario.section("sweep")
    variable = sweep.get("variable", "mu_N")
    values = [float(v) for v in sweep.get("values", [])]
    if not values:
        raise ScenarioError("sweep.values is empty", scenario.path)
    if not all(np.isfinite(values)):
        raise ScenarioError("sweep.values must be finite", scenario.path)
    epsilon = float(sweep.get("epsilon", scenario.epsilon))
    if cases is None:
        case_spec = sweep.get("cases", False)
        if case_spec is True:
            cases = list(CASES)
        elif case_spec:
            cases = [str(c) for c in case_spec]
        else:
            cases = ["I"]
    jobs = [(scenario.data, scenario.path, case, variable, values, epsilon,
             scenario.strict_sums) for case in cases]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_case_job, jobs))
    else:
        results = [_sweep_case_job(j) for j in jobs]
    rows = [r for chunk in results for r in chunk]

    header = ["case", "variable", "value", "M", "tail_mass",
              *SCALAR_MEASURES, "P_loss_total"]
    _write_csv(outdir / "sweep.csv", header,
               [[r[k] for k in header] for r in rows])
    _write_figures(outdir, rows, variable, values, cases)
    return rows


def _write_figures(outdir: Path, rows: list[dict], variable: str,
                   values: list[float], cases: list[str]) -> None:
    by_case = {c: {} for c in cases}
    for r in rows:
        by_case[r["case"]][r["value"]] = r
    for measure in SWEEP_FIGURE_MEASURES:
        header = [variable, *[f"case_{c}" for c in cases]]
        out_rows = []
        for v in values:
            out_rows.append([v, *[by_case[c][v][measure] for c in cases]])
        _write_csv(outdir / f"figure_{measure}_vs_{variable}.csv", header, out_rows)


def run_compare_cases(scenario: Scenario, out: str, workers: int = 1) -> list[dict]:
    return run_sweep(scenario, out, workers=workers, cases=list(CASES))


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def run_simulate(scenario: Scenario, out: str, seed: int | None = None,
                 workers: int = 1) -> dict:
    outdir = _prepare_out(scenario, out)
    sim = scenario.section("sim")
    horizon = float(sim.get("horizon", 1e5))
    warmup = float(sim.get("warmup", 0.1 * horizon))
    replications = int(sim.get("replications", 30))
    sim_seed = int(seed if seed is not None else sim.get("seed", 0))
    model = scenario.build_model()
    est = simulate(model, horizon, warmup, replications, sim_seed, workers=workers)

    _, _, res, report = _solve_scenario(scenario, epsilon=float(sim.get("epsilon",
                                                                        scenario.epsilon)))
    analytic = {
        "EB": report.eb, "ER": report.er, "EN": report.en,
        "P_d": report.p_dropped, "P_b": report.p_blocked,
        "P_c_avail": report.p_channel_avail,
        "lambda_H_out": report.lambda_h_out,
        "theta_r_succ": report.theta_r_succ_flux,
    }
    rows = []
    for k in SIM_MEASURES:
        lo, hi = est.interval(k)
        rows.append([k, est.estimates[k], est.half_widths[k], lo, hi,
                     analytic[k], est.covers(k, analytic[k])])
    _write_csv(outdir / "simulation.csv",
               ["measure", "estimate", "half_width", "ci_lo", "ci_hi",
                "analytic", "inside_ci"], rows)
    return {"estimates": est, "analytic": analytic, "M": res.M}


# ---------------------------------------------------------------------------
# optimize
# ---------------------------------------------------------------------------


def _sa_config_from(opt: dict, seed: int | None) -> SaConfig:
    kwargs = {}
    if "initial" in opt:
        kwargs["initial"] = tuple(float(x) for x in opt["initial"])
    if "bounds" in opt and opt["bounds"]:
        (a, b), (c, d) = opt["bounds"]
        kwargs["bounds"] = ((float(a), float(b)), (float(c), float(d)))
    for key in ("step_scale", "cooling", "stop_delta"):
        if key in opt:
            kwargs[key] = float(opt[key])
    for key in ("cool_every", "patience", "max_iter", "pilot", "restarts", "polish"):
        if key in opt:
            kwargs[key] = int(opt[key])
    if "temperature" in opt:
        t = opt["temperature"]
        kwargs["temperature"] = t if t == "auto" else float(t)
    kwargs["seed"] = int(seed if seed is not None else opt.get("seed", 0))
    return SaConfig(**kwargs)


def _objective_for(scenario: Scenario, model, lam_target: float | None,
                   lam_f: float | None) -> CostObjective:
    opt = scenario.section("opt")
    weights = CostSpec(*[float(w) for w in opt.get("weights", [10, 15, 15, 20])])
    _, _, lam_base = arrival_intensities(model.arrivals)
    scale = 1.0 if lam_target is None else lam_target / lam_base
    return CostObjective(
        model,
        weights,
        epsilon=float(opt.get("epsilon", 1e-3)),
        backend="aggregated" if scenario.backend == "auto" else scenario.backend,
        service_ratio=opt.get("service_ratio", "nominal"),
        arrival_scale=scale,
        failure_rate=lam_f,
    )


def run_optimize(scenario: Scenario, out: str, seed: int | None = None,
                 workers: int = 1, grid: bool = False) -> dict:
    outdir = _prepare_out(scenario, out)
    model = scenario.build_model()
    opt = scenario.section("opt")
    config = _sa_config_from(opt, seed)
    if grid:
        return _run_grid(scenario, model, config, outdir, workers)

    lam_f = float(opt["lambda_f"]) if "lambda_f" in opt else None
    lam = float(opt["lambda"]) if "lambda" in opt else None
    objective = _objective_for(scenario, model, lam, lam_f)
    result = simulated_annealing(objective, config)
    gx, gy = gradient_probe(objective, result.point)
    _write_trace(outdir / "trace.csv", result)
    key = _reference_key(scenario, model, lam, lam_f)
    ref = REFERENCE_OPTIMA.get(key) if key else None
    header = ["mu_star", "mu_r_star", "f_star", "evaluations", "grad_mu",
              "grad_mu_r", "near_stationary", "ref_mu", "ref_mu_r", "ref_f",
              "dev_f"]
    near = abs(gx) < 1.0 and abs(gy) < 1.0
    row = [result.point[0], result.point[1], result.value, result.evaluations,
           gx, gy, near,
           ref[0] if ref else "", ref[1] if ref else "", ref[2] if ref else "",
           (result.value - ref[2]) if ref else ""]
    _write_csv(outdir / "optimum.csv", header, [row])
    return {"result": result, "gradient": (gx, gy), "reference": ref}


def _reference_key(scenario, model, lam, lam_f):
    _, _, lam_base = arrival_intensities(model.arrivals)
    lam_eff = lam if lam is not None else lam_base
    lamf_eff = lam_f if lam_f is not None else model.failure_rate
    for (rf, rl) in REFERENCE_OPTIMA:
        if abs(rf - lamf_eff) < 1e-9 and abs(rl - lam_eff) < 5e-3:
            return (rf, rl)
    return None


def _grid_cell_job(args):
    scenario_data, path, lam, lam_f, seed = args
    scenario = Scenario(data=scenario_data, path=path)
    model = scenario.build_model()
    config = _sa_config_from(scenario.section("opt"), seed)
    objective = _objective_for(scenario, model, lam, lam_f)
    result = simulated_annealing(objective, config)
    ref = REFERENCE_OPTIMA.get((lam_f, lam))
    return {
        "lambda_f": lam_f, "lambda": lam,
        "mu_star": result.point[0], "mu_r_star": result.point[1],
        "f_star": result.value, "evaluations": result.evaluations,
        "ref_mu": ref[0] if ref else float("nan"),
        "ref_mu_r": ref[1] if ref else float("nan"),
        "ref_f": ref[2] if ref else float("nan"),
        "dev_mu": result.point[0] - ref[0] if ref else float("nan"),
        "dev_mu_r": result.point[1] - ref[1] if ref else float("nan"),
        "dev_f": result.value - ref[2] if ref else float("nan"),
    }


def _run_grid(scenario, model, config, outdir: Path, workers: int) -> dict:
    opt = scenario.section("opt")
    lambdas = [float(x) for x in opt.get("grid_lambdas", [])]
    lambda_fs = [float(x) for x in opt.get("grid_lambda_fs", [])]
    if not lambdas or not lambda_fs:
        raise ScenarioError("grid mode needs opt.grid_lambdas and opt.grid_lambda_fs",
                            scenario.path)
    jobs = [(scenario.data, scenario.path, lam, lam_f, config.seed)
            for lam_f in lambda_fs for lam in lambdas]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_grid_cell_job, jobs))
    else:
        cells = [_grid_cell_job(j) for j in jobs]
    header = ["lambda_f", "lambda", "mu_star", "mu_r_star", "f_star",
              "evaluations", "ref_mu", "ref_mu_r", "ref_f", "dev_mu",
              "dev_mu_r", "dev_f"]
    _write_csv(outdir / "table.csv", header, [[c[k] for k in header] for c in cells])
    return {"cells": cells}


def _write_trace(path: Path, result) -> None:
    rows = [[r.iteration, r.mu, r.mu_r, r.value, r.temperature,
             r.accepted, r.uniform] for r in result.trace]
    _write_csv(path, ["iteration", "mu", "mu_r", "f", "temperature",
                      "accepted", "uniform"], rows)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="retrialq",
                                description="Performability analysis of an "
                                            "unreliable multi-server retrial cell")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("solve", "measures", "sweep", "simulate", "optimize", "compare-cases"):
        sp = sub.add_parser(name)
        sp.add_argument("--scenario", required=True, help="scenario file path")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--epsilon", type=float, default=None,
                        help="tail-mass tolerance override")
        sp.add_argument("--strict-paper-blocks", action="store_true",
                        help="use the legacy block conventions (see README)")
        sp.add_argument("--strict-paper-sums", action="store_true",
                        help="use the legacy measure index ranges")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--workers", type=int, default=None,
                        help=f"worker processes (default ${WORKERS_ENV} or 1)")
        sp.add_argument("--backend", choices=("auto", "tracked", "aggregated"),
                        default=None)
        if name == "solve":
            sp.add_argument("--dump-blocks", action="store_true",
                            help="write every generator entry to blocks.txt")
        if name == "optimize":
            sp.add_argument("--grid", action="store_true",
                            help="optimize every (lambda, lambda_f) grid cell")
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    workers = args.workers if args.workers is not None else int(
        os.environ.get(WORKERS_ENV, "1"))
    try:
        scenario = _apply_overrides(load_scenario(args.scenario), args)
        t0 = time.time()
        if args.command == "solve":
            run_solve(scenario, args.out, dump_blocks=args.dump_blocks)
        elif args.command == "measures":
            run_measures(scenario, args.out)
        elif args.command == "sweep":
            run_sweep(scenario, args.out, workers=workers)
        elif args.command == "simulate":
            run_simulate(scenario, args.out, seed=args.seed, workers=workers)
        elif args.command == "optimize":
            run_optimize(scenario, args.out, seed=args.seed, workers=workers,
                         grid=args.grid)
        elif args.command == "compare-cases":
            run_compare_cases(scenario, args.out, workers=workers)
        print(f"{args.command}: done in {time.time() - t0:.1f}s -> {args.out}",
              file=sys.stderr)
    except (ScenarioError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AssertionError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - surface everything with context
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Pipeline CLI: run a scenario file through one analysis stage and emit files.

Every command writes a JSON run record; the sweep/cooperate/bargain stages
additionally write a CSV and render the matching figure next to it.
Exit codes: 0 ok, 2 validation, 3 infeasible, 4 search budget exceeded.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from .bargaining import (BargainingProblem, EmptyBargainingSet, bargaining_frontier,
                         max_aggregate_profit, nash_bargain_all)
from .clearing import InfeasibleDispatch, clear_market
from .cooperation import ScalarMargins, cooperation_interval, cooperation_region
from .games import SearchSettings, solve_stackelberg
from .network import NodalInjections
from .plots import plot_cooperation_region, plot_frontier, plot_sweep
from .scenario import (ParseError, Scenario, ScenarioError, ValidationError,
                       VersionError, load_scenario, scenario_hash)
from .solver import Infeasible, SolverSettings
from .storage import su_profit
from .twoperiod import TwoPeriodModel, scalarizable
from .welfare import (MpmpConfig, clear_with_mpmp, compare_table, load_payment,
                      social_optimum, sweep_cost_profit_curves,
                      uniform_constant_for_target)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_BUDGET = 4

COMMANDS = ("validate", "clear", "stackelberg", "cooperate", "bargain",
            "social", "mpmp", "compare", "sweep")


def _fmt(x) -> str:
    return format(float(x), ".12g")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) if isinstance(v, (int, float, np.floating)) else str(v)
                             for v in row])


def _schedules_payload(schedules) -> dict:
    return {uid: {"d_plus": list(map(float, s.d_plus)),
                  "d_minus": list(map(float, s.d_minus))}
            for uid, s in schedules.items()}


def _prices_payload(prices) -> dict:
    return {uid: list(map(float, p.tau)) for uid, p in prices.items()}


def _search_settings(args) -> SearchSettings:
    return SearchSettings(multistart=args.multistart, budget=args.budget,
                          step_tolerance=args.tol * 0.1, seed=args.seed,
                          solver=SolverSettings(kkt_tolerance=min(args.tol, 1e-8)))


def _record(args, scenario: Scenario, command: str, outputs: dict, started: float) -> dict:
    return {
        "scenario_hash": scenario_hash(scenario),
        "scenario_name": scenario.name,
        "command": command,
        "settings": {
            "tol": args.tol, "grid_res": args.grid_res, "multistart": args.multistart,
            "budget": args.budget, "delta": args.delta, "seed": args.seed,
        },
        "outputs": outputs,
        "wall_time_s": time.perf_counter() - started,
    }


def _emit(args, record: dict, scenario: Scenario, command: str) -> Path:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = scenario.name or Path(args.scenario).stem
    path = out_dir / f"{name}_{command}.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path


def _discount(args, scenario: Scenario) -> float:
    return args.delta if args.delta is not None else scenario.discount


def _require_scalarizable(scenario: Scenario, command: str) -> TwoPeriodModel:
    units = list(scenario.units)
    if not scalarizable(scenario.network, scenario.demand, units):
        raise ValidationError(command, "this stage needs a two-period single-unit "
                                       "single-bus scenario")
    return TwoPeriodModel(scenario.network, scenario.demand, units[0])


def cmd_validate(args, scenario: Scenario, started: float) -> int:
    outputs = {
        "n_buses": scenario.network.n_buses,
        "n_periods": scenario.horizon,
        "n_units": len(scenario.units),
        "valid": True,
    }
    _emit(args, _record(args, scenario, "validate", outputs, started), scenario, "validate")
    print(f"{scenario.name or args.scenario}: valid "
          f"({outputs['n_buses']} buses, {outputs['n_periods']} periods, "
          f"{outputs['n_units']} units)")
    return EXIT_OK


def cmd_clear(args, scenario: Scenario, started: float) -> int:
    search = _search_settings(args)
    if args.zero_storage:
        injections = NodalInjections.zeros(scenario.network.n_buses, scenario.horizon)
        storage_cost = 0.0
        schedules = {}
    else:
        schedules, _ = max_aggregate_profit(scenario.network, scenario.demand,
                                            scenario.units, search)
        injections = NodalInjections.from_schedules(scenario.units, schedules,
                                                    scenario.network.n_buses)
        storage_cost = sum(u.cost(schedules[u.id]) for u in scenario.units)
    outcome = clear_market(scenario.network, scenario.demand, injections, storage_cost,
                           search.solver)
    outputs = {
        "system_cost": outcome.system_cost,
        "generation_cost": outcome.generation_cost,
        "storage_cost": storage_cost,
        "lmps": outcome.lmps.tolist(),
        "generation": outcome.generation.tolist(),
        "load_payment": load_payment(outcome, scenario.demand),
        "schedules": _schedules_payload(schedules),
    }
    _emit(args, _record(args, scenario, "clear", outputs, started), scenario, "clear")
    print(f"system cost: {outcome.system_cost:.6g}")
    return EXIT_OK


def cmd_stackelberg(args, scenario: Scenario, started: float) -> int:
    search = _search_settings(args)
    outcome = solve_stackelberg(scenario.network, scenario.demand, scenario.units,
                                scenario.aggregator, search)
    outputs = {
        "prices": _prices_payload(outcome.prices),
        "schedules": _schedules_payload(outcome.schedules),
        "agg_profit": outcome.agg_profit,
        "su_profits": outcome.su_profits,
        "tag": outcome.tag,
    }
    if scalarizable(scenario.network, scenario.demand, list(scenario.units)):
        model = TwoPeriodModel(scenario.network, scenario.demand, scenario.units[0])
        outputs["dtau"] = model.dtau_of(outcome.prices[scenario.units[0].id])
    _emit(args, _record(args, scenario, "stackelberg", outputs, started),
          scenario, "stackelberg")
    print(f"aggregator profit: {outcome.agg_profit:.6g}  "
          f"unit profits: { {k: round(v, 6) for k, v in outcome.su_profits.items()} }")
    return EXIT_BUDGET if outcome.tag == "budget_exceeded" else EXIT_OK


def cmd_cooperate(args, scenario: Scenario, started: float) -> int:
    model = _require_scalarizable(scenario, "cooperate")
    discount = _discount(args, scenario)
    bound = scenario.aggregator.price_bound
    n = args.grid_res
    x_values = np.linspace(0.0, model.x_max, n)
    lo, _ = model.dtau_range(bound)
    dtau_values = np.linspace(lo, 0.0, n)
    cells = cooperation_region(scenario.network, scenario.demand, scenario.units[0],
                               discount, x_values, dtau_values, bound)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = scenario.name or Path(args.scenario).stem
    csv_path = out_dir / f"{name}_cooperation_region.csv"
    _write_csv(csv_path, ["x_hat", "dtau_hat", "alpha_s", "alpha_a", "region_label"],
               [(c.x_hat, c.dtau_hat, c.alpha_s, c.alpha_a, c.region_label)
                for c in cells])
    plot_cooperation_region(cells, out_dir / f"{name}_cooperation_region.png")

    margins = ScalarMargins.build(model, discount, bound)
    x_star = model.maximize_aggregate()
    interval = cooperation_interval(margins, x_star, bound)
    outputs = {
        "csv": csv_path.name,
        "cells": len(cells),
        "cooperative_cells": sum(1 for c in cells if c.region_label == "both"),
        "x_star": x_star,
        "interval_at_x_star": list(interval) if interval else None,
        "defection_profits": {"aggregator": margins.defection_agg_profit,
                              "unit": margins.defection_su_profit},
    }
    _emit(args, _record(args, scenario, "cooperate", outputs, started), scenario, "cooperate")
    if interval:
        print(f"cooperation interval at x*={x_star:.4f}: "
              f"[{interval[0]:.4f}, {interval[1]:.4f}]")
    else:
        print(f"no cooperative spread at x*={x_star:.4f}")
    return EXIT_OK


def cmd_bargain(args, scenario: Scenario, started: float) -> int:
    search = _search_settings(args)
    discount = _discount(args, scenario)
    problem = BargainingProblem.build(scenario.network, scenario.demand, scenario.units,
                                      scenario.aggregator, discount, search)
    outcome = nash_bargain_all(problem, search)
    outputs = {
        "pi_star": problem.pi_star,
        "disagreement": {uid: list(v) for uid, v in problem.disagreement.items()},
        "agreed_prices": _prices_payload(outcome.agreed_prices),
        "agreed_schedules": _schedules_payload(outcome.agreed_schedules),
        "agg_profit": outcome.agg_profit,
        "su_profits": outcome.su_profits,
        "nash_product": outcome.nash_product,
        "interior": outcome.interior,
    }
    if scalarizable(scenario.network, scenario.demand, list(scenario.units)):
        model = TwoPeriodModel(scenario.network, scenario.demand, scenario.units[0])
        outputs["dtau"] = model.dtau_of(outcome.agreed_prices[scenario.units[0].id])
        points = bargaining_frontier(problem, scenario.units[0].id,
                                     n_points=args.grid_res, search=search)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        name = scenario.name or Path(args.scenario).stem
        csv_path = out_dir / f"{name}_bargaining_frontier.csv"
        _write_csv(csv_path, ["pi_s", "pi_a", "on_pareto_line", "on_symmetry_line"],
                   [(p.pi_s, p.pi_a, p.on_pareto_line, p.on_symmetry_line)
                    for p in points])
        plot_frontier(points, out_dir / f"{name}_bargaining_frontier.png")
        outputs["csv"] = csv_path.name
    _emit(args, _record(args, scenario, "bargain", outputs, started), scenario, "bargain")
    msg = f"aggregate profit {problem.pi_star:.6g}; split: aggregator " \
          f"{outcome.agg_profit:.6g}, units { {k: round(v, 6) for k, v in outcome.su_profits.items()} }"
    if "dtau" in outputs:
        msg += f"; spread {outputs['dtau']:.6g}"
    print(msg)
    return EXIT_OK


def cmd_social(args, scenario: Scenario, started: float) -> int:
    search = _search_settings(args)
    schedules = social_optimum(scenario.network, scenario.demand, scenario.units,
                               search.solver)
    injections = NodalInjections.from_schedules(scenario.units, schedules,
                                                scenario.network.n_buses)
    storage_cost = sum(u.cost(schedules[u.id]) for u in scenario.units)
    outcome = clear_market(scenario.network, scenario.demand, injections, storage_cost,
                           search.solver)
    outputs = {
        "schedules": _schedules_payload(schedules),
        "system_cost": outcome.system_cost,
        "lmps": outcome.lmps.tolist(),
        "load_payment": load_payment(outcome, scenario.demand),
    }
    _emit(args, _record(args, scenario, "social", outputs, started), scenario, "social")
    print(f"social system cost: {outcome.system_cost:.6g}")
    return EXIT_OK


def cmd_mpmp(args, scenario: Scenario, started: float) -> int:
    search = _search_settings(args)
    if args.target_profit is not None:
        config = uniform_constant_for_target(scenario.network, scenario.demand,
                                             scenario.units, args.target_profit,
                                             search.solver)
    elif scenario.mpmp is not None:
        config = scenario.mpmp
    else:
        config = MpmpConfig.zero(scenario.network.n_buses, scenario.horizon)
    outcome = clear_with_mpmp(scenario.network, scenario.demand, scenario.units,
                              config, search)
    outputs = {
        "constants": config.constants.tolist(),
        "schedules": _schedules_payload(outcome.schedules),
        "aggregator_profit": outcome.aggregator_profit,
        "system_cost": outcome.market.system_cost,
        "cost_social": outcome.report.cost_social,
        "load_payment": outcome.report.load_payment,
    }
    _emit(args, _record(args, scenario, "mpmp", outputs, started), scenario, "mpmp")
    print(f"mitigated-price bid clears at system cost {outcome.market.system_cost:.6g}; "
          f"aggregator profit {outcome.aggregator_profit:.6g}")
    return EXIT_OK


def cmd_compare(args, scenario: Scenario, started: float) -> int:
    search = _search_settings(args)
    table = compare_table(scenario.network, scenario.demand, scenario.units, search)
    outputs = {
        side: {k: (v if isinstance(v, float) else _schedules_payload(v))
               for k, v in row.items()}
        for side, row in table.items()
    }
    _emit(args, _record(args, scenario, "compare", outputs, started), scenario, "compare")
    print(f"{'Storage level':<18}{'SU/agg. profit':>16}{'Sys. cost':>12}{'Load payment':>14}")
    for label, key in (("Social optimum", "social"), ("Market clearing", "market")):
        row = table[key]
        print(f"{label:<18}{row['profit']:>16.2f}{row['system_cost']:>12.2f}"
              f"{row['load_payment']:>14.2f}")
    return EXIT_OK


def cmd_sweep(args, scenario: Scenario, started: float) -> int:
    model = _require_scalarizable(scenario, "sweep")
    xs = np.linspace(0.0, model.x_max, args.grid_res)
    points = sweep_cost_profit_curves(scenario.network, scenario.demand,
                                      scenario.units[0], xs)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = scenario.name or Path(args.scenario).stem
    csv_path = out_dir / f"{name}_cost_profit_sweep.csv"
    _write_csv(csv_path, ["x", "system_cost", "aggregate_profit", "label"],
               [(p.x, p.system_cost, p.aggregate_profit, p.label) for p in points])
    plot_sweep(points, out_dir / f"{name}_cost_profit_sweep.png")
    marked = {p.label: p.x for p in points if p.label}
    outputs = {"csv": csv_path.name, "points": len(points), "marked": marked}
    _emit(args, _record(args, scenario, "sweep", outputs, started), scenario, "sweep")
    print(f"swept {len(points)} points; A/B/C at "
          f"{ {k: round(v, 4) for k, v in marked.items()} }")
    return EXIT_OK


_HANDLERS = {
    "validate": cmd_validate,
    "clear": cmd_clear,
    "stackelberg": cmd_stackelberg,
    "cooperate": cmd_cooperate,
    "bargain": cmd_bargain,
    "social": cmd_social,
    "mpmp": cmd_mpmp,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="storagemarket",
        description="Storage-aggregator market games over scenario files",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("scenario", help="path to a scenario JSON file")
        p.add_argument("--out-dir", default="out", help="directory for result files")
        p.add_argument("--tol", type=float, default=1e-8, help="numeric tolerance")
        p.add_argument("--grid-res", type=int, default=41,
                       help="grid points per axis for sweeps and rasters")
        p.add_argument("--multistart", type=int, default=4,
                       help="number of outer-search starting points")
        p.add_argument("--budget", type=int, default=20_000,
                       help="outer-search evaluation budget")
        p.add_argument("--delta", type=float, default=None,
                       help="override the scenario discount rate")
        p.add_argument("--seed", type=int, default=0,
                       help="seed for randomized search starts")
        if name == "clear":
            p.add_argument("--zero-storage", action="store_true",
                           help="clear with all storage idle")
        if name == "mpmp":
            p.add_argument("--target-profit", type=float, default=None,
                           help="choose uniform constants hitting this aggregator profit")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    try:
        scenario = load_scenario(args.scenario)
        return _HANDLERS[args.command](args, scenario, started)
    except (ParseError, ValidationError, VersionError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (InfeasibleDispatch, Infeasible) as exc:
        print(f"infeasible ({args.command}): {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except EmptyBargainingSet as exc:
        print(f"bargain: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

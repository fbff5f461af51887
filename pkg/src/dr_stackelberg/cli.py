"""Command-line entry point: ``dr-stackelberg {solve,verify,sweep,generate}``.

Exit codes: 0 success, 1 usage or validation error, 2 infeasible scenario,
3 oracle budget exceeded, 4 methods disagree beyond tolerance.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, bilevel
from .model import InvalidScenarioError, Scenario
from .report import sweep_csv, to_csv, to_figure_data
from .scenario_io import (
    GameParams,
    GeneratorSpec,
    GeneratorSpecError,
    ScenarioFormatError,
    ScenarioIOError,
    generate,
    load_generator_spec,
    read_scenario,
    read_text,
    save_report,
    save_scenario,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_BUDGET = 3
EXIT_DISAGREE = 4

METHODS = {
    "qp": bilevel.HYPOGRAPH_QP,
    "mpcc": bilevel.MPCC_ENUMERATION,
    "oracle": bilevel.GRID_ORACLE,
}
AUTO_STEP_DIVISORS = (200, 100, 50, 40, 20, 10, 5, 2, 1)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _err(msg: str) -> None:
    print(f"dr-stackelberg: {msg}", file=sys.stderr)


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8", newline="")
    except OSError as e:
        raise ScenarioIOError(e.errno, f"cannot write {path}: {e.strerror}") from e


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ScenarioIOError(e.errno, f"cannot create {out}: {e.strerror}") from e
    return out


def summary_line(report) -> str:
    return (
        f"achieved {report.achieved_kwh:.2f} kWh"
        f" ({100.0 * report.achievement_rate:.1f}% of target),"
        f" commission {report.commission:.4f},"
        f" call variance {report.call_variance:.4f}"
    )


def _oracle(scenario: Scenario, step: float | None, budget: int):
    """Run the oracle at ``step``, or at the finest automatic step that fits."""
    if step is not None:
        if step <= 0:
            raise UsageError("--grid-step must be positive")
        m = bilevel.SolveMethod(bilevel.GRID_ORACLE, grid_step=step, max_grid_points=budget)
        return bilevel.solve(scenario, m), step
    for k in AUTO_STEP_DIVISORS:
        step = scenario.target / k
        if bilevel.grid_size_estimate(scenario, step) > budget:
            continue
        m = bilevel.SolveMethod(bilevel.GRID_ORACLE, grid_step=step, max_grid_points=budget)
        try:
            return bilevel.solve(scenario, m), step
        except bilevel.OracleBudgetError:
            continue
    raise bilevel.OracleBudgetError("no grid step fits the oracle budget")


# -- commands --------------------------------------------------------------------


def cmd_solve(args) -> int:
    scenario = read_scenario(args.scenario)
    kind = METHODS[args.method]
    if kind == bilevel.GRID_ORACLE:
        sol, _ = _oracle(scenario, args.grid_step, args.max_grid_points)
    else:
        sol = bilevel.solve(scenario, bilevel.SolveMethod(kind))
    out = _out_dir(args.out)
    report = sol.report
    save_report(report, out / "report.json")
    _write(out / "report.csv", to_csv(report))
    fig_csv, fig_svg = to_figure_data([report], [f"{kind}, R={scenario.target:g} kWh"])
    _write(out / "figure.csv", fig_csv)
    _write(out / "figure.svg", fig_svg)
    print(summary_line(report))
    return EXIT_OK


def cmd_verify(args) -> int:
    scenario = read_scenario(args.scenario)
    results = {"qp": bilevel.solve(scenario).report}
    if scenario.n <= bilevel.MPCC_MAX_CONSUMERS:
        results["mpcc"] = bilevel.solve(
            scenario, bilevel.SolveMethod(bilevel.MPCC_ENUMERATION)
        ).report
    else:
        print(
            f"mpcc: skipped ({scenario.n} consumers; enumeration is limited to"
            f" {bilevel.MPCC_MAX_CONSUMERS})"
        )
    oracle, step = _oracle(scenario, args.grid_step, args.max_grid_points)
    results["oracle"] = oracle.report

    tolerances = {
        "mpcc": bilevel.OBJECTIVE_TOL,
        "oracle": bilevel.oracle_tolerance(scenario, step),
    }
    for name, rep in results.items():
        print(f"{name}: objective {rep.leader_objective:.10g}")
    print(f"oracle grid step: {step:.6g} kWh")

    names = list(results)
    worst = 0.0
    ok = True
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            gap = abs(results[a].leader_objective - results[b].leader_objective)
            worst = max(worst, gap)
            tol = max(tolerances.get(a, 0.0), tolerances.get(b, 0.0))
            within = gap <= tol
            ok &= within
            print(f"gap {a}-{b}: {gap:.3e} (tolerance {tol:.3e}) {'ok' if within else 'FAIL'}")
    # the exact answer may never be beaten by a grid point
    beaten = results["oracle"].leader_objective > results["qp"].leader_objective + bilevel.OBJECTIVE_TOL
    if beaten:
        print("oracle exceeds the qp objective: FAIL")
        ok = False
    print(f"max gap: {worst:.3e}")
    return EXIT_OK if ok else EXIT_DISAGREE


def parse_gammas(text: str) -> list[float]:
    try:
        gammas = [float(g) for g in text.split(",") if g.strip()]
    except ValueError:
        raise UsageError(f"--gammas must be comma-separated numbers, got {text!r}") from None
    if not gammas:
        raise UsageError("--gammas needs at least one value")
    if any(not np.isfinite(g) or g < 0 for g in gammas):
        raise UsageError("fairness weights must be non-negative")
    if any(b < a for a, b in zip(gammas, gammas[1:])):
        raise UsageError("fairness weights must be in ascending order")
    return gammas


def cmd_sweep(args) -> int:
    gammas = parse_gammas(args.gammas)
    scenario = read_scenario(args.scenario)
    points = bilevel.gamma_sweep(scenario, gammas)
    out = _out_dir(args.out)
    reports = [(g, s.report) for g, s in points]
    _write(out / "sweep.csv", sweep_csv(reports))
    _, svg = to_figure_data([r for _, r in reports], [f"gamma={g:g}" for g, _ in reports])
    _write(out / "sweep.svg", svg)
    for g, r in reports:
        print(f"gamma {g:g}: {summary_line(r)}")
    var = [r.call_variance for _, r in reports]
    monotone = all(b <= a * (1 + 1e-9) + 1e-9 for a, b in zip(var, var[1:]))
    print(f"variance non-increasing in gamma: {'yes' if monotone else 'no'}")
    return EXIT_OK


def cmd_generate(args) -> int:
    if args.spec:
        spec, game = load_generator_spec(read_text(args.spec))
    else:
        spec, game = GeneratorSpec(), GameParams()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    if args.n is not None:
        spec = replace(spec, n_consumers=args.n)
    if args.no_outlier:
        spec = replace(spec, outlier_baseline=None)
    elif args.outlier is not None:
        spec = replace(spec, outlier_baseline=args.outlier)
    if args.target is not None:
        game = replace(game, target=args.target)
    scenario = generate(spec, game)
    save_scenario(scenario, args.out)
    total = float(np.sum(scenario.baselines))
    print(f"total baseline {total:.6g} kWh; feasible target range (0, {total:.6g}]")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dr-stackelberg", description="Demand-response leader/follower game solver.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def oracle_flags(sp):
        sp.add_argument("--grid-step", type=float, default=None, help="oracle grid step in kWh (default: finest R/k that fits)")
        sp.add_argument("--max-grid-points", type=int, default=bilevel.DEFAULT_GRID_BUDGET, help="oracle budget")

    sp = sub.add_parser("solve", help="solve a scenario and write report.json, report.csv, figure.svg")
    sp.add_argument("scenario")
    sp.add_argument("--method", choices=sorted(METHODS), default="qp")
    sp.add_argument("--out", default=".", help="output directory")
    oracle_flags(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("verify", help="cross-check the solution methods")
    sp.add_argument("scenario")
    oracle_flags(sp)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("sweep", help="solve over several fairness weights")
    sp.add_argument("scenario")
    sp.add_argument("--gammas", required=True, help="comma-separated, ascending, e.g. 0,1,10,100")
    sp.add_argument("--out", default=".", help="output directory")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("generate", help="write a synthetic scenario")
    sp.add_argument("--spec", help="generator spec JSON (default: built-in population)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n", type=int, help="number of consumers")
    sp.add_argument("--target", type=float, help="reduction target in kWh")
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--outlier", type=float, help="baseline of the last consumer in kWh")
    g.add_argument("--no-outlier", action="store_true")
    sp.add_argument("--out", required=True, help="scenario JSON path")
    sp.set_defaults(func=cmd_generate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InvalidScenarioError as e:
        _err(str(e))
        return EXIT_INFEASIBLE if e.infeasible else EXIT_USAGE
    except bilevel.OracleBudgetError as e:
        _err(str(e))
        return EXIT_BUDGET
    except (UsageError, ScenarioFormatError, GeneratorSpecError, bilevel.BranchLimitError, ValueError) as e:
        _err(str(e))
        return EXIT_USAGE
    except OSError as e:
        _err(str(e))
        return EXIT_USAGE
    except bilevel.SolveError as e:
        _err(f"solver failed: {e}")
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())

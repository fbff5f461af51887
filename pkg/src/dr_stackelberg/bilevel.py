"""Leader problem: choose calls that maximise commission minus unfairness.

Three independent routes to the same optimum:

``hypograph_qp``
    Each consumer shifts ``min(willing_kwh, call)``, which is concave in the
    call, so the bilevel program is a convex QP in calls ``c`` and shifted
    energy ``t`` with ``t <= c`` and ``t <= willing_kwh``.
``mpcc_enumeration``
    Replace every follower by its KKT system and enumerate which
    complementarity branch is active; each joint branch is a QP in ``c``.
``grid_oracle``
    Exhaustive search over call vectors on a grid.
"""

from __future__ import annotations

import itertools
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import follower
from .model import (
    CallVector,
    InvalidScenarioError,
    Scenario,
    ShiftVector,
    SolutionReport,
    SolverDiagnostics,
    check_scenario,
    leader_objective,
)
from .qp import KKT_TOL, OPTIMAL, QpProblem, QpSolution, kkt_certificate, solve_qp
from .report import build_report

HYPOGRAPH_QP = "hypograph_qp"
MPCC_ENUMERATION = "mpcc_enumeration"
GRID_ORACLE = "grid_oracle"

MPCC_MAX_CONSUMERS = 4
DEFAULT_GRID_BUDGET = 5_000_000

OBJECTIVE_TOL = 1e-6
ARGMIN_TOL = 1e-6


class SolveError(RuntimeError):
    pass


class BranchLimitError(SolveError):
    pass


class OracleBudgetError(SolveError):
    pass


@dataclass(frozen=True)
class SolveMethod:
    kind: str = HYPOGRAPH_QP
    grid_step: float | None = None
    max_branches: int = 4**MPCC_MAX_CONSUMERS
    max_grid_points: int = DEFAULT_GRID_BUDGET

    def check(self, scenario: Scenario) -> None:
        if self.kind not in (HYPOGRAPH_QP, MPCC_ENUMERATION, GRID_ORACLE):
            raise ValueError(f"unknown method {self.kind!r}")
        if self.kind == GRID_ORACLE and not (self.grid_step and self.grid_step > 0):
            raise ValueError("grid_oracle needs a positive grid_step")
        if self.kind == MPCC_ENUMERATION:
            if scenario.n > MPCC_MAX_CONSUMERS:
                raise BranchLimitError(
                    f"branch enumeration is limited to {MPCC_MAX_CONSUMERS} consumers"
                    f" (got {scenario.n})"
                )
            if 4**scenario.n > self.max_branches:
                raise BranchLimitError(
                    f"{4 ** scenario.n} branch combinations exceed max_branches={self.max_branches}"
                )


@dataclass(frozen=True)
class BilevelSolution:
    report: SolutionReport
    method: SolveMethod
    certified: bool = False

    @property
    def calls(self) -> np.ndarray:
        return self.report.calls.as_array()

    @property
    def objective(self) -> float:
        return self.report.leader_objective


def _fairness_hessian(n: int, gamma: float) -> np.ndarray:
    # (gamma/n) * sum (mean(c) - c_i)^2 = 0.5 c' H c
    return (2.0 * gamma / n) * (np.eye(n) - np.full((n, n), 1.0 / n))


def reduce_to_qp(scenario: Scenario) -> QpProblem:
    """Single-level convex QP over ``x = (calls, shifted_kwh)``, as a minimisation.

    The objective is the negated leader objective; general rows are
    ``t_i - c_i <= 0``.
    """
    check_scenario(scenario)
    n = scenario.n
    B = scenario.baselines
    Q = np.zeros((2 * n, 2 * n))
    Q[:n, :n] = _fairness_hessian(n, scenario.fairness_weight)
    q = np.r_[np.zeros(n), np.full(n, -scenario.commission_coef)]
    G = np.hstack([-np.eye(n), np.eye(n)])
    return QpProblem(
        Q=Q,
        q=q,
        lower=np.zeros(2 * n),
        upper=np.r_[B, follower.willing_kwh(scenario)],
        eq_coef=np.r_[np.ones(n), np.zeros(n)],
        eq_rhs=scenario.target,
        ineq_coef=G,
        ineq_rhs=np.zeros(n),
    )


def _clean_calls(scenario: Scenario, c: np.ndarray) -> np.ndarray:
    """Clip round-off so calls sit in their boxes and sum to the target."""
    B = scenario.baselines
    c = np.clip(np.asarray(c, dtype=float), 0.0, B)
    r = scenario.target - c.sum()
    if r != 0.0:
        room = (B - c) if r > 0 else c
        j = int(np.argmax(room))
        c[j] = min(max(c[j] + r, 0.0), B[j])
    return c


def assemble(scenario: Scenario, calls, method: str, iterations=0, kkt=0.0, started=None):
    """Best responses to ``calls`` and the metrics built on them."""
    c = np.asarray(calls, dtype=float)
    responses = follower.best_responses(scenario, c)
    shifts = ShiftVector([r.shift for r in responses])
    kkt = max([kkt] + [r.kkt_residual for r in responses])
    diag = SolverDiagnostics(
        method=method,
        iterations=int(iterations),
        kkt_residual_max=float(kkt),
        wall_time=0.0 if started is None else time.perf_counter() - started,
    )
    return build_report(scenario, CallVector(c), shifts, diag)


def separable_start(scenario: Scenario) -> np.ndarray:
    """Optimal calls from the separable form of the leader problem.

    With the total fixed at ``R`` the spread penalty is ``(gamma/N) sum c^2``
    up to a constant, so each call maximises ``k min(c, w) - g c^2 - lam c``
    for a common price ``lam`` found by bisection.
    """
    B = scenario.baselines
    w = follower.willing_kwh(scenario)
    R = scenario.target
    k = scenario.commission_coef
    g = scenario.fairness_weight / scenario.n
    if g <= 0:
        # any split with sum(min(c, w)) maximal is optimal
        if w.sum() >= R:
            return w * (R / w.sum()) if w.sum() > 0 else B * (R / B.sum())
        spare = B - w
        return w + spare * ((R - w.sum()) / spare.sum())

    def calls(lam):
        with np.errstate(over="ignore"):
            below = (k - lam) / (2 * g)
            above = -lam / (2 * g)
        c = np.where(below < w, below, np.where(above > w, above, w))
        return np.clip(c, 0.0, B)

    lo, hi = -2 * g * B.max() - 1.0, k + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if calls(mid).sum() > R:
            lo = mid
        else:
            hi = mid
    c = calls(0.5 * (lo + hi))
    # spread the bisection residue over the consumers with room to move
    room = (c > 0) & (c < B)
    if room.any():
        c[room] += (R - c.sum()) / room.sum()
    return np.clip(c, 0.0, B)


def _certify_start(scenario: Scenario, problem: QpProblem, c) -> QpSolution | None:
    """Multipliers for ``x = (c, min(c, w))`` in closed form, or None if none fit.

    Per consumer the active constraints pin the equality multiplier ``eta`` to an
    interval; any ``eta`` in the intersection gives a full KKT certificate.
    """
    n = scenario.n
    B = scenario.baselines
    w = problem.upper[n:]
    k = scenario.commission_coef
    tol = 1e-9 * np.maximum(1.0, B)
    c = np.asarray(c, dtype=float).copy()
    at0 = c <= tol
    atB = c >= B - tol
    c[at0] = 0.0
    c[atB] = B[atB]
    kink = np.abs(c - w) <= tol
    c[kink & ~at0 & ~atB] = w[kink & ~at0 & ~atB]
    t = np.minimum(c, w)
    x = np.r_[c, t]
    if problem.violation(x) > 1e-9 * max(1.0, scenario.target):
        return None
    h = (problem.Q @ x)[:n]
    inf = np.inf
    row = (c <= w) | kink  # t_i - c_i <= 0 active
    t_up = (c >= w) | kink
    t_lo = t <= 0.0
    nu_lo = np.where(t_up, -inf, k)
    nu_hi = np.where(t_lo, inf, k)
    nu_lo = np.where(row, np.maximum(nu_lo, 0.0), 0.0)
    nu_hi = np.where(row, nu_hi, 0.0)
    # l - u = h + eta - nu must be >= 0 at a lower bound and <= 0 at an upper bound
    s_lo = np.where(atB, -inf, 0.0)
    s_hi = np.where(at0, inf, 0.0)
    with np.errstate(invalid="ignore"):
        L = float(np.max(nu_lo + s_lo - h))
        U = float(np.min(nu_hi + s_hi - h))
    if not L <= U + KKT_TOL:
        return None
    eta = 0.5 * (L + U) if np.isfinite(L) and np.isfinite(U) else (L if np.isfinite(L) else U)
    if not np.isfinite(eta):
        eta = 0.0
    nu = np.clip(eta + h, np.maximum(nu_lo, eta + h - s_hi), np.minimum(nu_hi, eta + h - s_lo))
    d = h + eta - nu
    dt = k - nu
    zeros = np.zeros(n)
    lower = np.r_[np.where(at0, np.maximum(d, 0.0), 0.0), np.where(t_lo, np.maximum(-dt, 0.0), 0.0)]
    upper = np.r_[np.where(atB, np.maximum(-d, 0.0), 0.0), np.where(t_up, np.maximum(dt, 0.0), 0.0)]
    dim = problem.dim
    active = {0}
    active |= {1 + int(j) for j in np.flatnonzero(lower > 0)}
    active |= {1 + dim + int(j) for j in np.flatnonzero(upper > 0)}
    active |= {1 + 2 * dim + int(r) for r in np.flatnonzero(row)}
    sol = QpSolution(
        x=x,
        objective=problem.objective(x),
        active_set=frozenset(active),
        iterations=0,
        status=OPTIMAL,
        eq_multiplier=float(eta),
        lower_multipliers=lower,
        upper_multipliers=upper,
        ineq_multipliers=np.where(row, nu, zeros),
    )
    cert = kkt_certificate(problem, sol)
    if max(cert["stationarity"], cert["complementarity"], -cert["dual_feasibility"]) > KKT_TOL:
        return None
    return sol


def hypograph_solution(scenario: Scenario):
    """Solve the reduced QP; returns ``(calls, shifted_kwh, QpSolution)``.

    With no commission nothing pushes ``t`` up to its bound, so it is set to
    the follower response explicitly.
    """
    problem = reduce_to_qp(scenario)
    c0 = separable_start(scenario)
    sol = _certify_start(scenario, problem, c0)
    if sol is None:
        sol = solve_qp(problem)
    if sol.status != OPTIMAL:
        raise SolveError(f"QP solver stopped with status {sol.status}")
    n = scenario.n
    c = _clean_calls(scenario, sol.x[:n])
    t = sol.x[n:].copy()
    if scenario.commission_coef <= 0:
        t = follower.shifted_energy(scenario, c)
    return c, t, sol


def _solve_hypograph(scenario: Scenario):
    started = time.perf_counter()
    c, _, sol = hypograph_solution(scenario)
    return assemble(scenario, c, HYPOGRAPH_QP, sol.iterations, 0.0, started)


# -- complementarity branches ---------------------------------------------------


@dataclass(frozen=True)
class _Branch:
    name: str
    lo: float  # call interval on which the branch is consistent
    hi: float
    linear: bool  # shifted energy equals the call
    kwh: float  # shifted energy when not linear


def follower_branches(scenario: Scenario, i: int) -> list[_Branch]:
    """KKT branches of consumer ``i`` that admit non-negative multipliers."""
    B = scenario.consumers[i].baseline
    theta = follower.vertex(scenario, i)
    out = []
    if 0.0 <= theta <= 1.0:
        # no multiplier; needs theta*B <= c
        out.append(_Branch(follower.INTERIOR, theta * B, B, False, theta * B))
    if theta >= 0.0:
        # s = c/B; call multiplier 2a(theta - s)/B >= 0 needs c <= theta*B
        out.append(_Branch(follower.CALL_CAP, 0.0, min(theta, 1.0) * B, True, 0.0))
    if theta >= 1.0:
        # s = 1 with s*B <= c forces c = B
        out.append(_Branch(follower.UNIT_CAP, B, B, False, B))
    if theta <= 0.0:
        out.append(_Branch(follower.ZERO_FLOOR, 0.0, B, False, 0.0))
    return out


def _branch_response(scenario: Scenario, i: int, branch: _Branch, call: float):
    c = scenario.consumers[i]
    B, a = c.baseline, c.dissat_a
    theta = follower.vertex(scenario, i)
    if branch.name == follower.INTERIOR:
        return theta, (0.0, 0.0, 0.0)
    if branch.name == follower.CALL_CAP:
        s = call / B
        return s, (max(2.0 * a * (theta - s) / B, 0.0), 0.0, 0.0)
    if branch.name == follower.UNIT_CAP:
        return 1.0, (0.0, 2.0 * a * (theta - 1.0), 0.0)
    return 0.0, (0.0, 0.0, -2.0 * a * theta)


def _solve_mpcc(scenario: Scenario, method: SolveMethod):
    started = time.perf_counter()
    n = scenario.n
    R = scenario.target
    kappa = scenario.commission_coef
    H = _fairness_hessian(n, scenario.fairness_weight)
    tol = scenario.feasibility_tol()
    branches = [follower_branches(scenario, i) for i in range(n)]

    best = None
    explored = 0
    iterations = 0
    for combo in itertools.product(*branches):
        lo = np.array([b.lo for b in combo])
        hi = np.array([b.hi for b in combo])
        if lo.sum() > R + tol or hi.sum() < R - tol or np.any(lo > hi + tol):
            continue
        explored += 1
        linear = np.array([b.linear for b in combo])
        sol = solve_qp(
            QpProblem(
                Q=H,
                q=np.where(linear, -kappa, 0.0),
                lower=lo,
                upper=np.maximum(hi, lo),
                eq_coef=np.ones(n),
                eq_rhs=R,
            )
        )
        iterations += sol.iterations
        if sol.status != OPTIMAL:
            continue
        c = _clean_calls(scenario, sol.x)
        shifts, kkt = [], 0.0
        for i, b in enumerate(combo):
            s, lam = _branch_response(scenario, i, b, float(c[i]))
            shifts.append(s)
            kkt = max(kkt, follower.kkt_residual(scenario, i, float(c[i]), s, lam))
        value = leader_objective(scenario, c, shifts)
        if best is None or value > best[0] + 1e-12:
            best = (value, c, kkt)
    if best is None:
        raise SolveError("no complementarity branch is feasible")
    _, c, kkt = best
    return assemble(scenario, c, MPCC_ENUMERATION, iterations, kkt, started)


# -- grid oracle ----------------------------------------------------------------


def grid_size_estimate(scenario: Scenario, grid_step: float) -> int:
    """Number of simplex grid points for the first N-1 calls (baseline caps ignored)."""
    k = int(math.floor(scenario.target / grid_step + 1e-9)) + 1
    n = scenario.n
    return math.comb(k + n - 2, n - 1)


def _candidates(top: float, grid_step: float, extra, tol: float) -> np.ndarray:
    vals = np.arange(int(math.floor(top / grid_step + 1e-9)) + 1) * grid_step
    vals = np.concatenate([vals, [v for v in extra if 0.0 <= v <= top]])
    vals = np.unique(vals[vals <= top + tol])
    # drop near-duplicates so ties stay rare and deterministic
    return vals[np.r_[True, np.diff(vals) > tol]]


def _grid_search(scenario: Scenario, grid_step: float, budget: int, free: int):
    """Best feasible grid call vector with consumer ``free`` taking the remainder.

    Every other call takes a value on the grid ``0, h, 2h, ...`` or one of
    the consumer's breakpoints (its baseline and the kink ``willing_kwh``).
    Because the calls sum to R, their mean is fixed and the leader objective
    is a sum of per-consumer terms plus a constant, so values accumulate as
    the grid is expanded. Returns ``(value, calls, count)``; ties keep the
    first vector in lexicographic grid order.
    """
    n = scenario.n
    B = scenario.baselines
    R = scenario.target
    tol = scenario.feasibility_tol()
    kinks = follower.willing_kwh(scenario)
    kappa = scenario.commission_coef
    weight = scenario.fairness_weight / n

    def term(i, c):
        return kappa * np.minimum(c, kinks[i]) - weight * c * c

    order = [i for i in range(n) if i != free]
    cap_after = np.r_[np.cumsum(B[order][::-1])[::-1][1:], 0.0] + B[free]
    sums = np.zeros(1)
    acc = np.zeros(1)
    trail = []  # (parent row, value) per expanded consumer
    for pos, i in enumerate(order):
        vals = _candidates(min(B[i], R), grid_step, (B[i], kinks[i]), tol)
        new_sums = (sums[:, None] + vals[None, :]).ravel()
        keep = np.flatnonzero(
            (new_sums <= R + tol) & (new_sums + cap_after[pos] >= R - tol)
        )
        if keep.size > budget:
            raise OracleBudgetError(
                f"grid step {grid_step:g} exceeds the budget of {budget} call vectors"
            )
        parent, col = np.divmod(keep, vals.size)
        trail.append((parent, vals[col]))
        sums = new_sums[keep]
        acc = acc[parent] + term(i, vals[col])
    rest = R - sums
    ok = np.flatnonzero((rest >= -tol) & (rest <= B[free] + tol))
    if ok.size == 0:
        return -np.inf, None, 0
    rest = np.clip(rest[ok], 0.0, B[free])
    total = acc[ok] + term(free, rest) + weight * R * R / n
    k = int(np.argmax(total))
    calls = np.empty(n)
    calls[free] = rest[k]
    row = int(ok[k])
    for i, (parent, value) in zip(reversed(order), reversed(trail)):
        calls[i] = value[row]
        row = int(parent[row])
    return float(total[k]), calls, int(ok.size)


def grid_oracle_calls(scenario: Scenario, grid_step: float, budget: int = DEFAULT_GRID_BUDGET):
    """Best grid call vector over every choice of remainder consumer.

    Returns ``(calls, points_evaluated)``; ties keep the earliest pass.
    """
    n = scenario.n
    if n == 1:
        return np.array([scenario.target]), 1
    if grid_size_estimate(scenario, grid_step) > budget:
        raise OracleBudgetError(
            f"grid step {grid_step:g} exceeds the oracle budget of {budget} call vectors"
            f" for {n} consumers"
        )
    best, best_c, count = -np.inf, None, 0
    for free in range(n):
        value, calls, m = _grid_search(scenario, grid_step, budget, free)
        count += m
        if calls is not None and value > best:
            best, best_c = value, calls
    if best_c is None:
        raise SolveError("grid contains no feasible call vector")
    return best_c, count


def _solve_grid(scenario: Scenario, method: SolveMethod):
    started = time.perf_counter()
    calls, count = grid_oracle_calls(scenario, method.grid_step, method.max_grid_points)
    return assemble(scenario, calls, GRID_ORACLE, count, 0.0, started)


# -- public entry points ---------------------------------------------------------


def solve(
    scenario: Scenario,
    method: SolveMethod | None = None,
    certify_with: SolveMethod | None = None,
) -> BilevelSolution:
    method = method or SolveMethod()
    check_scenario(scenario)
    method.check(scenario)
    if method.kind == HYPOGRAPH_QP:
        report = _solve_hypograph(scenario)
    elif method.kind == MPCC_ENUMERATION:
        report = _solve_mpcc(scenario, method)
    else:
        report = _solve_grid(scenario, method)
    certified = False
    if certify_with is not None:
        other = solve(scenario, certify_with).report
        certified = agree(
            report,
            other,
            objective_tol(scenario, certify_with),
            call_tol(scenario, certify_with),
        )
    return BilevelSolution(report=report, method=method, certified=certified)


def oracle_tolerance(scenario: Scenario, grid_step: float) -> float:
    """Bound on how far the grid oracle can fall below the true optimum.

    Rounding each call to the grid loses at most the commission slope per
    kWh moved, plus a second-order fairness term that matters when the
    commission is zero.
    """
    n = scenario.n
    h = grid_step
    return (
        scenario.commission_coef * h * n
        + scenario.fairness_weight * h * h * n / 4.0
        + 1e-8
    )


def objective_tol(scenario: Scenario, method: SolveMethod) -> float:
    """Allowed objective gap between an exact method and ``method``."""
    if method.kind == GRID_ORACLE:
        return oracle_tolerance(scenario, method.grid_step)
    return OBJECTIVE_TOL


def call_tol(scenario: Scenario, method: SolveMethod) -> float:
    """Allowed max-norm distance between argmins of an exact method and ``method``."""
    if method.kind == GRID_ORACLE:
        return method.grid_step * scenario.n
    return ARGMIN_TOL * max(1.0, scenario.target)


def agree(a: SolutionReport, b: SolutionReport, tol: float, calls_tol: float) -> bool:
    """Objectives within ``tol`` and argmins within ``calls_tol``."""
    gap = abs(a.leader_objective - b.leader_objective)
    dist = float(np.max(np.abs(a.calls.as_array() - b.calls.as_array())))
    return bool(gap <= tol and dist <= calls_tol)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("DR_STACKELBERG_THREADS", "1")))
    except ValueError:
        return 1


def gamma_sweep(scenario: Scenario, gammas) -> list[tuple[float, BilevelSolution]]:
    gammas = [float(g) for g in gammas]
    if not gammas:
        raise ValueError("at least one fairness weight is required")
    if any(g < 0 or not math.isfinite(g) for g in gammas):
        raise ValueError("fairness weights must be non-negative")
    if any(b < a for a, b in zip(gammas, gammas[1:])):
        raise ValueError("fairness weights must be sorted ascending")

    def run(g):
        return solve(_with_gamma(scenario, g), SolveMethod(HYPOGRAPH_QP))

    workers = min(_threads(), len(gammas))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sols = list(pool.map(run, gammas))
    else:
        sols = [run(g) for g in gammas]
    return list(zip(gammas, sols))


def _with_gamma(scenario: Scenario, gamma: float) -> Scenario:
    from dataclasses import replace

    return replace(scenario, fairness_weight=gamma)


__all__ = [
    "BilevelSolution",
    "BranchLimitError",
    "InvalidScenarioError",
    "OracleBudgetError",
    "SolveError",
    "SolveMethod",
    "gamma_sweep",
    "grid_oracle_calls",
    "hypograph_solution",
    "oracle_tolerance",
    "reduce_to_qp",
    "solve",
]

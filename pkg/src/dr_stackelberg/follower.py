"""Consumer best response to a call.

Each consumer minimises a strictly convex quadratic in its shift fraction
over ``[0, min(1, call / baseline)]``, so the response is a clamp of the
parabola's vertex.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Scenario, follower_objective_expanded

INTERIOR = "interior"
CALL_CAP = "call_cap"
UNIT_CAP = "unit_cap"
ZERO_FLOOR = "zero_floor"

ACTIVE_CONSTRAINTS = (INTERIOR, CALL_CAP, UNIT_CAP, ZERO_FLOOR)


@dataclass(frozen=True)
class BestResponse:
    shift: float
    shifted_kwh: float
    unconstrained_vertex: float
    active_constraint: str
    kkt_residual: float
    # (call cap, unit cap, zero floor); None for grid answers
    multipliers: tuple[float, float, float] | None = None


def vertex(scenario: Scenario, i: int) -> float:
    """Minimiser of consumer ``i``'s cost ignoring every constraint."""
    c = scenario.consumers[i]
    slope = (1.0 + scenario.reward_factor) * c.baseline * scenario.delta_p + c.dissat_b
    return slope / (2.0 * c.dissat_a)


def vertices(scenario: Scenario) -> np.ndarray:
    B = scenario.baselines
    slope = (1.0 + scenario.reward_factor) * B * scenario.delta_p + scenario.dissat_b
    return slope / (2.0 * scenario.dissat_a)


def willing_kwh(scenario: Scenario) -> np.ndarray:
    """Energy each consumer shifts when the call never binds."""
    return np.clip(vertices(scenario), 0.0, 1.0) * scenario.baselines


def shifted_energy(scenario: Scenario, calls) -> np.ndarray:
    """Vectorised ``min(willing_kwh, call)``, the energy shifted per consumer."""
    c = np.asarray(getattr(calls, "calls", calls), dtype=float)
    return np.minimum(willing_kwh(scenario), np.maximum(c, 0.0))


def _check_call(scenario: Scenario, i: int, call: float) -> None:
    B = scenario.consumers[i].baseline
    tol = 1e-12 * max(1.0, B)
    if not (-tol <= call <= B + tol):
        raise ValueError(f"call {call!r} for consumer {i} outside [0, {B}]")


def kkt_residual(scenario: Scenario, i: int, call: float, s: float, multipliers) -> float:
    lam_call, lam_unit, lam_zero = (float(m) for m in multipliers)
    if min(lam_call, lam_unit, lam_zero) < 0:
        raise ValueError("KKT multipliers must be non-negative")
    c = scenario.consumers[i]
    B = c.baseline
    stationarity = (
        2.0 * c.dissat_a * s
        - (1.0 + scenario.reward_factor) * B * scenario.delta_p
        - c.dissat_b
        + lam_call * B
        + lam_unit
        - lam_zero
    )
    return max(
        abs(stationarity),
        abs(lam_call * (s * B - call)),
        abs(lam_unit * (s - 1.0)),
        abs(lam_zero * s),
        max(0.0, s * B - call),
        max(0.0, s - 1.0),
        max(0.0, -s),
    )


def best_response(scenario: Scenario, i: int, call: float) -> BestResponse:
    _check_call(scenario, i, call)
    c = scenario.consumers[i]
    B, a = c.baseline, c.dissat_a
    call = min(max(call, 0.0), B)
    theta = vertex(scenario, i)
    cap = min(1.0, call / B)

    if theta >= cap:
        if call >= B:
            # both caps bind; the multiplier goes on the unit cap
            s, kwh, active = 1.0, B, UNIT_CAP
            lam = (0.0, 2.0 * a * (theta - 1.0), 0.0)
        else:
            s, kwh, active = cap, call, CALL_CAP
            lam = (2.0 * a * (theta - s) / B, 0.0, 0.0)
    elif theta <= 0.0:
        s, kwh, active = 0.0, 0.0, ZERO_FLOOR
        lam = (0.0, 0.0, -2.0 * a * theta)
    else:
        s, kwh, active = theta, theta * B, INTERIOR
        lam = (0.0, 0.0, 0.0)

    return BestResponse(
        shift=s,
        shifted_kwh=kwh,
        unconstrained_vertex=theta,
        active_constraint=active,
        kkt_residual=kkt_residual(scenario, i, call, s, lam),
        multipliers=lam,
    )


def best_responses(scenario: Scenario, calls) -> list[BestResponse]:
    c = np.asarray(getattr(calls, "calls", calls), dtype=float)
    return [best_response(scenario, i, float(c[i])) for i in range(scenario.n)]


def oracle_best_response(
    scenario: Scenario, i: int, call: float, step: float = 1e-5
) -> BestResponse:
    """Grid-scan the consumer's cost; used only to check :func:`best_response`.

    The scan covers ``0, step, 2*step, ...`` up to the cap, the cap itself,
    and the vertex when it lies inside.
    """
    if not 0.0 < step <= 1e-2:
        raise ValueError("step must lie in (0, 1e-2]")
    c = scenario.consumers[i]
    B = c.baseline
    cap = min(1.0, max(call, 0.0) / B)
    grid = np.arange(int(np.floor(cap / step)) + 1, dtype=float) * step
    grid = grid[grid <= cap]
    if grid[-1] < cap:
        grid = np.append(grid, cap)
    theta = vertex(scenario, i)
    if 0.0 < theta < cap:
        grid = np.append(grid, theta)

    t = scenario.tariff
    bill = t.on_peak * B * (1.0 - grid) + t.off_peak * B * grid
    reward = scenario.reward_factor * grid * B * (t.on_peak - t.off_peak)
    cost = bill + c.dissat_a * grid**2 - c.dissat_b * grid - reward
    s = float(grid[int(np.argmin(cost))])

    if cap > 0 and s >= cap - step:
        active = UNIT_CAP if cap >= 1.0 else CALL_CAP
    elif s <= 0.0:
        active = ZERO_FLOOR if cap > 0 else CALL_CAP
    else:
        active = INTERIOR
    return BestResponse(
        shift=s,
        shifted_kwh=s * B,
        unconstrained_vertex=theta,
        active_constraint=active,
        kkt_residual=float("nan"),
    )

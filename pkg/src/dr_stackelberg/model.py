"""Domain types and pure evaluation of the demand-response game.

Energy is in kWh, prices in currency per kWh, and the dissatisfaction
coefficients ``dissat_a``/``dissat_b`` are in currency, so a consumer's
dissatisfaction is a cost on the same scale as the bill.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class DomainError(ValueError):
    """An argument lies outside the domain of an objective."""


@dataclass(frozen=True)
class Violation:
    """One broken scenario invariant.

    ``index`` is the 0-based consumer position, or ``None`` for
    scenario-level fields.
    """

    field: str
    message: str
    index: int | None = None
    infeasible: bool = False

    def __str__(self) -> str:
        if self.index is None:
            return f"{self.field}: {self.message}"
        return f"consumer {self.index}: {self.field}: {self.message}"


class InvalidScenarioError(ValueError):
    def __init__(self, violations: Sequence[Violation]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))

    @property
    def infeasible(self) -> bool:
        """True when the only problems are leader-side infeasibility."""
        return bool(self.violations) and all(v.infeasible for v in self.violations)


@dataclass(frozen=True)
class Tariff:
    on_peak: float
    off_peak: float

    @property
    def premium(self) -> float:
        return self.on_peak - self.off_peak


@dataclass(frozen=True)
class Consumer:
    baseline: float
    dissat_a: float
    dissat_b: float
    id: int = 0


@dataclass(frozen=True)
class Scenario:
    tariff: Tariff
    reward_factor: float
    commission_rate: float
    fairness_weight: float
    target: float
    consumers: tuple[Consumer, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "consumers", tuple(self.consumers))

    @property
    def n(self) -> int:
        return len(self.consumers)

    @property
    def delta_p(self) -> float:
        return self.tariff.premium

    @property
    def baselines(self) -> np.ndarray:
        return np.array([c.baseline for c in self.consumers], dtype=float)

    @property
    def dissat_a(self) -> np.ndarray:
        return np.array([c.dissat_a for c in self.consumers], dtype=float)

    @property
    def dissat_b(self) -> np.ndarray:
        return np.array([c.dissat_b for c in self.consumers], dtype=float)

    @property
    def commission_coef(self) -> float:
        """Leader revenue per shifted kWh."""
        return self.commission_rate * self.delta_p

    def feasibility_tol(self) -> float:
        return 1e-9 * max(1.0, self.target)


@dataclass(frozen=True)
class CallVector:
    calls: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "calls", tuple(float(c) for c in self.calls))

    def __len__(self):
        return len(self.calls)

    def as_array(self) -> np.ndarray:
        return np.array(self.calls, dtype=float)

    @property
    def mean(self) -> float:
        return float(np.mean(self.calls))


@dataclass(frozen=True)
class ShiftVector:
    shifts: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "shifts", tuple(float(s) for s in self.shifts))

    def __len__(self):
        return len(self.shifts)

    def as_array(self) -> np.ndarray:
        return np.array(self.shifts, dtype=float)


@dataclass(frozen=True)
class SolverDiagnostics:
    method: str
    iterations: int = 0
    kkt_residual_max: float = 0.0
    # timing is excluded from equality so reruns compare equal
    wall_time: float = field(default=0.0, compare=False)


@dataclass(frozen=True)
class SolutionReport:
    calls: CallVector
    shifts: ShiftVector
    leader_objective: float
    follower_objectives: tuple[float, ...]
    bills: tuple[float, ...]
    rewards: tuple[float, ...]
    commission: float
    achieved_kwh: float
    achievement_rate: float
    call_variance: float
    compliance: tuple[bool, ...]
    solver: SolverDiagnostics
    baselines: tuple[float, ...] = ()

    @property
    def shifted_kwh(self) -> tuple[float, ...]:
        return tuple(s * b for s, b in zip(self.shifts.shifts, self.baselines))


def _values(v, attr: str) -> np.ndarray:
    return np.asarray(getattr(v, attr, v), dtype=float)


def _check_fraction(s: float) -> None:
    if not 0.0 <= s <= 1.0:
        raise DomainError(f"shift fraction {s!r} outside [0, 1]")


def dissatisfaction(consumer: Consumer, s: float) -> float:
    _check_fraction(s)
    return consumer.dissat_a * s * s - consumer.dissat_b * s


def follower_objective(scenario: Scenario, i: int, s: float) -> float:
    """Consumer ``i``'s total cost at shift fraction ``s`` (collapsed form)."""
    _check_fraction(s)
    c = scenario.consumers[i]
    t = scenario.tariff
    return (
        t.on_peak * c.baseline
        - (1.0 + scenario.reward_factor) * c.baseline * s * t.premium
        + c.dissat_a * s * s
        - c.dissat_b * s
    )


def follower_objective_expanded(scenario: Scenario, i: int, s: float) -> float:
    """Same cost written as bill + dissatisfaction - reward."""
    _check_fraction(s)
    c = scenario.consumers[i]
    t = scenario.tariff
    bill = t.on_peak * c.baseline * (1.0 - s) + t.off_peak * c.baseline * s
    reward = scenario.reward_factor * s * c.baseline * (t.on_peak - t.off_peak)
    return bill + dissatisfaction(c, s) - reward


def bill_and_reward(scenario: Scenario, i: int, s: float) -> tuple[float, float]:
    _check_fraction(s)
    c = scenario.consumers[i]
    t = scenario.tariff
    bill = t.on_peak * c.baseline * (1.0 - s) + t.off_peak * c.baseline * s
    reward = scenario.reward_factor * s * c.baseline * t.premium
    return bill, reward


def call_variance(calls) -> float:
    c = _values(calls, "calls")
    return float(np.mean((c.mean() - c) ** 2))


def leader_objective(scenario: Scenario, calls, shifts) -> float:
    """Commission on shifted energy minus the fairness penalty on calls."""
    c = _values(calls, "calls")
    s = _values(shifts, "shifts")
    n = scenario.n
    if c.shape != (n,) or s.shape != (n,):
        raise ValueError(
            f"expected {n} calls and shifts, got {c.shape[0]} and {s.shape[0]}"
        )
    commission = scenario.commission_coef * float(np.dot(s, scenario.baselines))
    penalty = scenario.fairness_weight / n * float(np.sum((c.mean() - c) ** 2))
    return commission - penalty


def validate(scenario: Scenario) -> list[Violation]:
    """Every broken invariant of ``scenario``; empty iff it can be solved."""
    out: list[Violation] = []
    t = scenario.tariff
    if not (np.isfinite(t.on_peak) and np.isfinite(t.off_peak)):
        out.append(Violation("tariff", "tariffs must be finite"))
    if t.off_peak < 0:
        out.append(Violation("tariff.off_peak", "must be non-negative"))
    if t.on_peak < t.off_peak:
        out.append(Violation("tariff.on_peak", "must be at least off_peak"))
    for name in ("reward_factor", "commission_rate", "fairness_weight"):
        v = getattr(scenario, name)
        if not np.isfinite(v) or v < 0:
            out.append(Violation(name, "must be a non-negative number"))
    if scenario.n < 1:
        out.append(Violation("consumers", "at least one consumer is required"))
    for k, c in enumerate(scenario.consumers):
        for name in ("baseline", "dissat_a", "dissat_b"):
            v = getattr(c, name)
            if not np.isfinite(v) or v <= 0:
                out.append(Violation(name, "must be positive", index=k))
    if not np.isfinite(scenario.target) or scenario.target <= 0:
        out.append(Violation("target", "must be positive"))
    elif scenario.n >= 1:
        total = float(np.sum(scenario.baselines))
        if scenario.target > total + scenario.feasibility_tol():
            out.append(
                Violation(
                    "target",
                    f"target exceeds total baseline ({scenario.target:g} > {total:g})",
                    infeasible=True,
                )
            )
    return out


def check_scenario(scenario: Scenario) -> None:
    violations = validate(scenario)
    if violations:
        raise InvalidScenarioError(violations)


def check_calls(scenario: Scenario, calls) -> None:
    """Raise ``ValueError`` unless ``calls`` is a feasible leader decision."""
    c = _values(calls, "calls")
    if c.shape != (scenario.n,):
        raise ValueError(f"expected {scenario.n} calls, got {c.shape[0]}")
    tol = scenario.feasibility_tol()
    if np.any(c < -tol) or np.any(c > scenario.baselines + tol):
        raise ValueError("calls must lie within [0, baseline]")
    if abs(c.sum() - scenario.target) > tol:
        raise ValueError(
            f"calls sum to {c.sum():.12g}, target is {scenario.target:.12g}"
        )

"""Scenario and report JSON, plus the seeded synthetic-population generator."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .model import (
    CallVector,
    Consumer,
    Scenario,
    ShiftVector,
    SolutionReport,
    SolverDiagnostics,
    Tariff,
    check_scenario,
)
from .report import FORMAT_TAG

MASK64 = (1 << 64) - 1


class ScenarioFormatError(ValueError):
    """Malformed JSON or a document that does not match the schema."""


class ScenarioIOError(OSError):
    """Reading or writing a file failed; the message names the path."""


class GeneratorSpecError(ValueError):
    pass


# -- scenarios -------------------------------------------------------------------


def scenario_schema() -> dict:
    text = resources.files(__package__).joinpath("scenario.schema.json").read_text("utf-8")
    return json.loads(text)


def _reject_constant(name):
    raise ValueError(f"{name} is not a valid JSON number")


def _parse(text: str):
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as e:
        raise ScenarioFormatError(f"line {e.lineno} column {e.colno}: {e.msg}") from None
    except ValueError as e:
        raise ScenarioFormatError(str(e)) from None


def _field_path(path) -> str:
    out = ""
    for part in path:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out or "(document)"


def _check_schema(doc, schema) -> None:
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(map(str, e.path)), e.message))
    if errors:
        msgs = []
        for e in errors:
            where = _field_path(e.path)
            if e.validator == "required":
                missing = [k for k in e.validator_value if k not in e.instance]
                msgs += [f"{where}: missing required field '{k}'" for k in missing]
            else:
                msgs.append(f"{where}: {e.message}")
        raise ScenarioFormatError("; ".join(msgs))


def scenario_from_dict(doc: dict) -> Scenario:
    _check_schema(doc, scenario_schema())
    consumers = tuple(
        Consumer(
            baseline=float(c["baseline"]),
            dissat_a=float(c["dissat_a"]),
            dissat_b=float(c["dissat_b"]),
            id=int(c.get("id", k)),
        )
        for k, c in enumerate(doc["consumers"])
    )
    scenario = Scenario(
        tariff=Tariff(float(doc["tariff"]["on_peak"]), float(doc["tariff"]["off_peak"])),
        reward_factor=float(doc["reward_factor"]),
        commission_rate=float(doc["commission_rate"]),
        fairness_weight=float(doc["fairness_weight"]),
        target=float(doc["target"]),
        consumers=consumers,
    )
    check_scenario(scenario)
    return scenario


def load_scenario(text: str) -> Scenario:
    """Parse and validate a scenario document.

    Raises ScenarioFormatError for bad JSON or schema mismatches and
    InvalidScenarioError for values that break a model invariant.
    """
    return scenario_from_dict(_parse(text))


def scenario_to_dict(scenario: Scenario) -> dict:
    t = scenario.tariff
    return {
        "tariff": {"on_peak": t.on_peak, "off_peak": t.off_peak},
        "reward_factor": scenario.reward_factor,
        "commission_rate": scenario.commission_rate,
        "fairness_weight": scenario.fairness_weight,
        "target": scenario.target,
        "consumers": [
            {"id": c.id, "baseline": c.baseline, "dissat_a": c.dissat_a, "dissat_b": c.dissat_b}
            for c in scenario.consumers
        ],
    }


def dumps(doc) -> str:
    # json renders floats with repr, the shortest text that round-trips
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def _write(path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8", newline="")
    except OSError as e:
        raise ScenarioIOError(e.errno, f"cannot write {path}: {e.strerror}") from e


def read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioIOError(e.errno, f"cannot read {path}: {e.strerror}") from e
    except UnicodeDecodeError as e:
        raise ScenarioFormatError(f"{path} is not UTF-8: {e}") from e


def save_scenario(scenario: Scenario, path) -> None:
    _write(path, dumps(scenario_to_dict(scenario)))


def read_scenario(path) -> Scenario:
    return load_scenario(read_text(path))


# -- reports ---------------------------------------------------------------------


def report_to_dict(report: SolutionReport, include_timing: bool = False) -> dict:
    """``include_timing`` adds wall-clock time, which makes output non-reproducible."""
    solver = {
        "method": report.solver.method,
        "iterations": report.solver.iterations,
        "kkt_residual_max": report.solver.kkt_residual_max,
    }
    if include_timing:
        solver["wall_time"] = report.solver.wall_time
    return {
        "format": FORMAT_TAG,
        "calls": list(report.calls.calls),
        "shifts": list(report.shifts.shifts),
        "baselines": list(report.baselines),
        "leader_objective": report.leader_objective,
        "follower_objectives": list(report.follower_objectives),
        "bills": list(report.bills),
        "rewards": list(report.rewards),
        "commission": report.commission,
        "achieved_kwh": report.achieved_kwh,
        "achievement_rate": report.achievement_rate,
        "call_variance": report.call_variance,
        "compliance": list(report.compliance),
        "solver": solver,
    }


def report_from_dict(doc: dict) -> SolutionReport:
    try:
        s = doc["solver"]
        return SolutionReport(
            calls=CallVector(doc["calls"]),
            shifts=ShiftVector(doc["shifts"]),
            leader_objective=float(doc["leader_objective"]),
            follower_objectives=tuple(float(v) for v in doc["follower_objectives"]),
            bills=tuple(float(v) for v in doc["bills"]),
            rewards=tuple(float(v) for v in doc["rewards"]),
            commission=float(doc["commission"]),
            achieved_kwh=float(doc["achieved_kwh"]),
            achievement_rate=float(doc["achievement_rate"]),
            call_variance=float(doc["call_variance"]),
            compliance=tuple(bool(v) for v in doc["compliance"]),
            solver=SolverDiagnostics(
                method=s["method"],
                iterations=int(s["iterations"]),
                kkt_residual_max=float(s["kkt_residual_max"]),
                wall_time=float(s.get("wall_time", 0.0)),
            ),
            baselines=tuple(float(v) for v in doc["baselines"]),
        )
    except (KeyError, TypeError) as e:
        raise ScenarioFormatError(f"malformed report: {e}") from None


def save_report(report: SolutionReport, path, include_timing: bool = False) -> None:
    _write(path, dumps(report_to_dict(report, include_timing)))


def load_report(text: str) -> SolutionReport:
    return report_from_dict(_parse(text))


# -- generator -------------------------------------------------------------------


class SplitMix64:
    """SplitMix64 stream.

    Each draw adds 0x9E3779B97F4A7C15 to the 64-bit state and mixes it:
    ``z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27;
    z *= 0x94D049BB133111EB; z ^= z >> 31`` (all modulo 2**64).
    A uniform on [0, 1) is ``(z >> 11) * 2**-53``.
    """

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def uniform(self, lo: float, hi: float) -> float:
        u = (self.next_u64() >> 11) * 2.0**-53
        return lo + (hi - lo) * u


@dataclass(frozen=True)
class GeneratorSpec:
    """Synthetic population: ``n_consumers`` with uniform baselines and coefficients.

    Defaults give both compliance regimes under the default game: with
    p_on=5, p_off=3 and rho=0.5 a consumer's willing fraction is
    ``(3*B + b) / (2*a)``, which is below 1 for large ``a``.
    """

    n_consumers: int = 10
    baseline_range: tuple[float, float] = (80.0, 150.0)
    outlier_baseline: float | None = 800.0
    a_range: tuple[float, float] = (100.0, 1200.0)
    b_range: tuple[float, float] = (1.0, 50.0)
    seed: int = 42

    def errors(self) -> list[str]:
        out = []
        if not isinstance(self.n_consumers, int) or self.n_consumers < 1:
            out.append("n_consumers must be a positive integer")
        for name in ("baseline_range", "a_range", "b_range"):
            r = getattr(self, name)
            if len(r) != 2 or not all(math.isfinite(v) and v > 0 for v in r):
                out.append(f"{name} must be two positive numbers")
            elif r[0] > r[1]:
                out.append(f"{name} is inverted ({r[0]:g} > {r[1]:g})")
        ob = self.outlier_baseline
        if ob is not None and not (math.isfinite(ob) and ob > 0):
            out.append("outlier_baseline must be positive")
        if not isinstance(self.seed, int) or not 0 <= self.seed <= MASK64:
            out.append("seed must be an integer in [0, 2**64)")
        return out

    def check(self) -> None:
        errs = self.errors()
        if errs:
            raise GeneratorSpecError("; ".join(errs))


@dataclass(frozen=True)
class GameParams:
    on_peak: float = 5.0
    off_peak: float = 3.0
    reward_factor: float = 0.5
    commission_rate: float = 0.1
    fairness_weight: float = 0.01
    target: float = 800.0


def generate(spec: GeneratorSpec, game: GameParams | None = None) -> Scenario:
    """Draw a scenario: all baselines, then all ``a``, then all ``b``.

    The outlier overwrites the last baseline after its draw, so the stream
    position does not depend on whether an outlier is set.
    """
    spec.check()
    game = game or GameParams()
    rng = SplitMix64(spec.seed)
    n = spec.n_consumers
    baselines = [rng.uniform(*spec.baseline_range) for _ in range(n)]
    if spec.outlier_baseline is not None:
        baselines[-1] = float(spec.outlier_baseline)
    a = [rng.uniform(*spec.a_range) for _ in range(n)]
    b = [rng.uniform(*spec.b_range) for _ in range(n)]
    scenario = Scenario(
        tariff=Tariff(game.on_peak, game.off_peak),
        reward_factor=game.reward_factor,
        commission_rate=game.commission_rate,
        fairness_weight=game.fairness_weight,
        target=game.target,
        consumers=tuple(Consumer(baselines[i], a[i], b[i], id=i) for i in range(n)),
    )
    check_scenario(scenario)
    return scenario


def spec_to_dict(spec: GeneratorSpec, game: GameParams) -> dict:
    return {"generator": asdict(spec), "game": asdict(game)}


def spec_from_dict(doc: dict) -> tuple[GeneratorSpec, GameParams]:
    if not isinstance(doc, dict):
        raise GeneratorSpecError("generator spec must be a JSON object")
    unknown = set(doc) - {"generator", "game", "description"}
    if unknown:
        raise GeneratorSpecError(f"unknown sections: {', '.join(sorted(unknown))}")
    try:
        gen = dict(doc.get("generator", {}))
        for name in ("baseline_range", "a_range", "b_range"):
            if name in gen:
                gen[name] = tuple(float(v) for v in gen[name])
        spec = GeneratorSpec(**gen)
        game = GameParams(**{k: float(v) for k, v in doc.get("game", {}).items()})
    except (TypeError, ValueError) as e:
        raise GeneratorSpecError(f"bad generator spec: {e}") from None
    spec.check()
    return spec, game


def load_generator_spec(text: str) -> tuple[GeneratorSpec, GameParams]:
    try:
        return spec_from_dict(_parse(text))
    except ScenarioFormatError as e:
        raise GeneratorSpecError(str(e)) from None


__all__ = [
    "GameParams",
    "GeneratorSpec",
    "GeneratorSpecError",
    "ScenarioFormatError",
    "ScenarioIOError",
    "SplitMix64",
    "generate",
    "load_report",
    "load_scenario",
    "read_scenario",
    "save_report",
    "save_scenario",
    "scenario_schema",
]

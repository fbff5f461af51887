import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dr_stackelberg import bilevel
from dr_stackelberg.model import InvalidScenarioError
from dr_stackelberg.scenario_io import (
    GameParams,
    GeneratorSpec,
    GeneratorSpecError,
    ScenarioFormatError,
    ScenarioIOError,
    SplitMix64,
    generate,
    load_generator_spec,
    load_report,
    load_scenario,
    read_scenario,
    report_to_dict,
    save_report,
    save_scenario,
    scenario_schema,
)

from .helpers import scenarios

ROOT = Path(__file__).resolve().parents[1]

MINIMAL = {
    "tariff": {"on_peak": 5, "off_peak": 3},
    "reward_factor": 0.5,
    "commission_rate": 0.1,
    "fairness_weight": 0.01,
    "target": 40,
    "consumers": [{"baseline": 100, "dissat_a": 400, "dissat_b": 20}],
}


def doc(**changes):
    d = json.loads(json.dumps(MINIMAL))
    d.update(changes)
    return json.dumps(d)


def test_minimal_document():
    sc = load_scenario(doc())
    assert sc.n == 1 and sc.target == 40.0 and sc.consumers[0].id == 0


def test_missing_target_is_named():
    d = dict(MINIMAL)
    del d["target"]
    with pytest.raises(ScenarioFormatError, match="'target'"):
        load_scenario(json.dumps(d))


def test_schema_errors_name_the_field():
    with pytest.raises(ScenarioFormatError, match=r"consumers\[0\]\.baseline"):
        load_scenario(doc(consumers=[{"baseline": "x", "dissat_a": 1, "dissat_b": 1}]))
    with pytest.raises(ScenarioFormatError, match="surplus"):
        load_scenario(doc(surplus=1))


def test_target_exceeds_baseline():
    with pytest.raises(InvalidScenarioError, match="target exceeds total baseline") as e:
        load_scenario(doc(target=101))
    assert e.value.infeasible


def test_validation_names_consumer():
    consumers = MINIMAL["consumers"] * 2 + [{"baseline": 100, "dissat_a": 0, "dissat_b": 20}]
    with pytest.raises(InvalidScenarioError, match="consumer 2: dissat_a"):
        load_scenario(doc(consumers=consumers))


def test_parse_error_has_position():
    with pytest.raises(ScenarioFormatError, match=r"line 3 column \d+"):
        load_scenario('{\n  "target": 1,\n  oops\n}')
    with pytest.raises(ScenarioFormatError):
        load_scenario('{"target": NaN}')


def test_schema_file_is_packaged():
    schema = scenario_schema()
    assert set(schema["required"]) == set(MINIMAL)


@given(scenarios())
def test_scenario_round_trip(tmp_path_factory, sc):
    path = tmp_path_factory.mktemp("rt") / "s.json"
    save_scenario(sc, path)
    assert read_scenario(path) == sc


def test_report_round_trip(tmp_path):
    sc = generate(GeneratorSpec(), GameParams())
    rep = bilevel.solve(sc).report
    save_report(rep, tmp_path / "r.json", include_timing=True)
    back = load_report((tmp_path / "r.json").read_text())
    assert back == rep
    assert back.solver.wall_time == rep.solver.wall_time
    d = report_to_dict(rep)
    assert d["solver"]["method"] == "hypograph_qp" and "wall_time" not in d["solver"]


def test_unwritable_destination_names_path(tmp_path):
    target = tmp_path / "missing" / "x.json"
    with pytest.raises(ScenarioIOError, match="missing"):
        save_scenario(generate(GeneratorSpec(), GameParams()), target)
    with pytest.raises(ScenarioIOError):
        read_scenario(tmp_path / "nope.json")


def test_splitmix_reference_value():
    assert SplitMix64(1234567).next_u64() == 6457827717110365317


@given(st.integers(0, 2**64 - 1))
def test_uniform_in_range(seed):
    rng = SplitMix64(seed)
    for _ in range(5):
        assert 2.0 <= rng.uniform(2.0, 3.0) < 3.0


def test_generator_deterministic():
    a = generate(GeneratorSpec(seed=42), GameParams())
    b = generate(GeneratorSpec(seed=42), GameParams())
    assert a == b
    assert generate(GeneratorSpec(seed=43), GameParams()) != a


def test_generator_ranges():
    spec = GeneratorSpec(n_consumers=50)
    sc = generate(spec)
    B = sc.baselines
    assert np.sum(B == 800.0) == 1 and B[-1] == 800.0
    assert np.all((B[:-1] >= 80) & (B[:-1] <= 150))
    assert np.all((sc.dissat_a >= 100) & (sc.dissat_a <= 1200))
    no_outlier = generate(replace(spec, outlier_baseline=None))
    # the outlier does not move the stream
    assert no_outlier.baselines[:-1].tolist() == B[:-1].tolist()
    assert no_outlier.dissat_a.tolist() == sc.dissat_a.tolist()


def test_default_targets_feasible():
    for R in (800.0, 1500.0):
        sc = generate(GeneratorSpec(), GameParams(target=R))
        assert R <= sc.baselines.sum()
    assert 9 * 80 + 800 >= 1500


def test_default_population_has_both_regimes():
    sc = generate(GeneratorSpec(), GameParams())
    theta = bilevel.follower.vertices(sc)
    assert np.any(theta < 1) and np.any(theta >= 1)


@pytest.mark.parametrize(
    "change",
    [
        dict(baseline_range=(150.0, 80.0)),
        dict(a_range=(0.0, 5.0)),
        dict(n_consumers=0),
        dict(outlier_baseline=-1.0),
        dict(seed=-1),
    ],
)
def test_generator_spec_errors(change):
    with pytest.raises(GeneratorSpecError):
        generate(replace(GeneratorSpec(), **change))


def test_spec_file_matches_defaults():
    spec, game = load_generator_spec((ROOT / "scenarios" / "default_spec.json").read_text())
    assert spec == GeneratorSpec() and game == GameParams()
    with pytest.raises(GeneratorSpecError):
        load_generator_spec('{"generator": {"bogus": 1}}')
    with pytest.raises(GeneratorSpecError):
        load_generator_spec('{"nope": {}}')


def test_shipped_scenarios_are_current():
    for R in (800, 1500):
        shipped = (ROOT / "scenarios" / f"default_R{R}.json").read_text()
        assert load_scenario(shipped) == generate(GeneratorSpec(), GameParams(target=R))

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dr_stackelberg import follower
from dr_stackelberg.follower import (
    CALL_CAP,
    INTERIOR,
    UNIT_CAP,
    ZERO_FLOOR,
    best_response,
    kkt_residual,
    oracle_best_response,
    shifted_energy,
    vertex,
)
from dr_stackelberg.model import Tariff

from .helpers import make_scenario, scenarios

unit = st.floats(0.0, 1.0)


def test_vertex(spec_consumer):
    # (1.5 * 100 * 2 + 20) / 800
    assert vertex(spec_consumer, 0) == pytest.approx(0.4)


def test_call_zero(spec_consumer):
    r = best_response(spec_consumer, 0, 0.0)
    assert r.shift == 0.0 and r.active_constraint == CALL_CAP
    assert oracle_best_response(spec_consumer, 0, 0.0).shift == 0.0


def test_call_cap_binds(spec_consumer):
    r = best_response(spec_consumer, 0, 30.0)
    assert r.shift == pytest.approx(0.3)
    assert r.shifted_kwh == pytest.approx(30.0)
    assert r.active_constraint == CALL_CAP
    # stationarity at s=0.3: 240 - 320 + 100*lam = 0
    assert r.multipliers[0] == pytest.approx(0.8)
    assert r.kkt_residual <= 1e-8
    assert oracle_best_response(spec_consumer, 0, 30.0).shift == pytest.approx(0.3, abs=1e-5)


def test_partial_compliance(spec_consumer):
    r = best_response(spec_consumer, 0, 60.0)
    assert r.shift == pytest.approx(0.4)
    assert r.shifted_kwh == pytest.approx(40.0)
    assert r.active_constraint == INTERIOR
    assert r.multipliers == (0.0, 0.0, 0.0)
    assert oracle_best_response(spec_consumer, 0, 60.0).shift == pytest.approx(0.4, abs=1e-5)


def test_unit_cap():
    sc = make_scenario([100.0], [100.0], [20.0], 50.0)  # vertex 1.6
    r = best_response(sc, 0, 100.0)
    assert r.shift == 1.0 and r.active_constraint == UNIT_CAP
    assert r.kkt_residual <= 1e-8
    assert oracle_best_response(sc, 0, 100.0).shift == 1.0


def test_zero_floor():
    # a negative vertex needs b < 0, which validation rejects; the response
    # itself still handles it
    sc = make_scenario([100.0], [100.0], [-20.0], 50.0, p_on=3.0, p_off=3.0)
    assert vertex(sc, 0) == pytest.approx(-0.1)
    r = best_response(sc, 0, 50.0)
    assert r.shift == 0.0 and r.active_constraint == ZERO_FLOOR
    assert r.multipliers[2] == pytest.approx(20.0)
    assert r.kkt_residual <= 1e-8
    assert oracle_best_response(sc, 0, 50.0).shift == 0.0


def test_kkt_residual_examples(spec_consumer):
    assert kkt_residual(spec_consumer, 0, 60.0, 0.4, (0, 0, 0)) == pytest.approx(0.0, abs=1e-12)
    lam = (2 * 400 * 0.3 - 1.5 * 100 * 2 - 20) / -100
    assert lam == pytest.approx(0.8)
    assert kkt_residual(spec_consumer, 0, 30.0, 0.3, (lam, 0, 0)) <= 1e-8
    assert kkt_residual(spec_consumer, 0, 60.0, 0.4, (1.0, 0, 0)) > 0
    with pytest.raises(ValueError):
        kkt_residual(spec_consumer, 0, 60.0, 0.4, (-1.0, 0, 0))


def test_call_out_of_range(spec_consumer):
    with pytest.raises(ValueError):
        best_response(spec_consumer, 0, 100.5)
    with pytest.raises(ValueError):
        best_response(spec_consumer, 0, -1.0)


def test_oracle_step_domain(spec_consumer):
    for step in (0.0, 0.02):
        with pytest.raises(ValueError):
            oracle_best_response(spec_consumer, 0, 30.0, step=step)


@given(scenarios(max_n=1), unit)
def test_closed_form_is_clamped_vertex(sc, frac):
    B = sc.consumers[0].baseline
    call = frac * B
    r = best_response(sc, 0, call)
    expected = np.median([0.0, vertex(sc, 0), min(1.0, call / B)])
    assert r.shift == pytest.approx(expected, abs=1e-15)
    assert r.kkt_residual <= 1e-8 * max(1.0, sc.consumers[0].dissat_a)


@given(scenarios(max_n=1), unit)
def test_oracle_agrees(sc, frac):
    call = frac * sc.consumers[0].baseline
    assert best_response(sc, 0, call).shift == pytest.approx(
        oracle_best_response(sc, 0, call, step=1e-4).shift, abs=1e-4
    )


@given(scenarios(max_n=1), unit, unit)
def test_monotone_in_call(sc, f1, f2):
    B = sc.consumers[0].baseline
    lo, hi = sorted((f1 * B, f2 * B))
    assert best_response(sc, 0, lo).shift <= best_response(sc, 0, hi).shift


@given(scenarios(), st.lists(unit, min_size=4, max_size=4))
def test_shifted_energy_identity(sc, fracs):
    calls = np.array(fracs[: sc.n]) * sc.baselines
    willing = np.clip(follower.vertices(sc), 0, 1) * sc.baselines
    got = [best_response(sc, i, calls[i]).shifted_kwh for i in range(sc.n)]
    np.testing.assert_allclose(got, np.minimum(willing, calls), rtol=0, atol=1e-10)
    np.testing.assert_allclose(shifted_energy(sc, calls), np.minimum(willing, calls), rtol=0, atol=0)


@given(scenarios(max_n=1), unit)
def test_saturation(sc, frac):
    B = sc.consumers[0].baseline
    willing = follower.willing_kwh(sc)[0]
    call = willing + frac * (B - willing)
    assert best_response(sc, 0, call).shifted_kwh == pytest.approx(willing, abs=1e-10)


@given(scenarios(max_n=1), unit, st.floats(0.0, 2.0), st.floats(0.0, 2.0))
def test_reward_monotone(sc, frac, r1, r2):
    call = frac * sc.consumers[0].baseline
    lo, hi = sorted((r1, r2))
    s_lo = best_response(replace(sc, reward_factor=lo), 0, call).shift
    s_hi = best_response(replace(sc, reward_factor=hi), 0, call).shift
    assert s_lo <= s_hi


@given(scenarios(max_n=1), unit, st.floats(0.0, 10.0))
def test_tariff_shift_invariance(sc, frac, t):
    call = frac * sc.consumers[0].baseline
    moved = replace(sc, tariff=Tariff(sc.tariff.on_peak + t, sc.tariff.off_peak + t))
    assert best_response(moved, 0, call).shift == pytest.approx(
        best_response(sc, 0, call).shift, abs=1e-12
    )

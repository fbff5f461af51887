"""Scenario builders shared by the tests."""

import numpy as np
from hypothesis import strategies as st

from dr_stackelberg.model import Consumer, Scenario, Tariff


def make_scenario(B, a, b, R, p_on=5.0, p_off=3.0, rho=0.5, kappa=0.1, gamma=0.01):
    consumers = [Consumer(float(B[i]), float(a[i]), float(b[i]), id=i) for i in range(len(B))]
    return Scenario(Tariff(p_on, p_off), rho, kappa, gamma, float(R), consumers)


def random_scenario(rng, n, gamma=None, kappa=None):
    """Heterogeneous scenario in which both compliance regimes are likely."""
    B = rng.uniform(20.0, 200.0, n)
    return make_scenario(
        B,
        rng.uniform(20.0, 2000.0, n),
        rng.uniform(1.0, 50.0, n),
        rng.uniform(0.1, 0.95) * B.sum(),
        p_on=float(rng.uniform(3.0, 8.0)),
        p_off=float(rng.uniform(1.0, 3.0)),
        rho=float(rng.uniform(0.0, 1.0)),
        kappa=float(rng.uniform(0.01, 0.3)) if kappa is None else kappa,
        gamma=float(rng.uniform(0.0, 0.02)) if gamma is None else gamma,
    )


@st.composite
def scenarios(draw, min_n=1, max_n=4):
    n = draw(st.integers(min_n, max_n))
    pos = st.floats(1.0, 500.0, allow_nan=False)
    B = [draw(st.floats(10.0, 300.0)) for _ in range(n)]
    a = [draw(pos) for _ in range(n)]
    b = [draw(st.floats(0.1, 60.0)) for _ in range(n)]
    frac = draw(st.floats(0.05, 1.0))
    p_off = draw(st.floats(0.0, 5.0))
    return make_scenario(
        B,
        a,
        b,
        frac * sum(B),
        p_on=p_off + draw(st.floats(0.0, 5.0)),
        p_off=p_off,
        rho=draw(st.floats(0.0, 2.0)),
        kappa=draw(st.floats(0.0, 0.5)),
        gamma=draw(st.floats(0.0, 0.05)),
    )


# (criterion, passed, detail) rows printed in the terminal summary
ACCEPTANCE_RESULTS = []

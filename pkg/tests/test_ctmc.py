import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st
from scipy.linalg import expm
from scipy.stats import poisson

from conftest import dist_vector, flip_exact, random_finite_case
from popmc import DivergenceError, RateExceeded, parse_model
from popmc.ctmc import (Accumulator, UniformizationConfig, dump_points,
                        fast_adaptive_uniformization, rk4_cme, standard_uniformization)
from popmc.examples import load_example
from popmc.store import StateStore

IMMIGRATION_DEATH = """
const a = 4;
const b = 0.5;
var x = 0;
arrive: true  |- a   -> x := x + 1;
leave:  x > 0 |- b*x -> x := x - 1;
"""


def immigration_death_exact(t, a=4.0, b=0.5):
    return poisson(a / b * (1 - math.exp(-b * t)))


def test_flip_chain_standard_uniformization(flip):
    r = standard_uniformization(flip, UniformizationConfig(1.0, lambda_user=1.0))
    assert r.prob((1, 0)) == pytest.approx(0.5676676, abs=1e-7)
    assert r.prob((1, 0)) == pytest.approx(flip_exact(1.0), abs=1e-8)
    assert r.accumulated_error <= 1e-8


def test_flip_chain_adaptive_uniformization(flip):
    r = fast_adaptive_uniformization(flip, UniformizationConfig(1.0))
    assert r.prob((1, 0)) == pytest.approx(flip_exact(1.0), abs=1e-8)
    assert r.prob((0, 1)) == pytest.approx(1 - flip_exact(1.0), abs=1e-8)


def test_flip_chain_rk4(flip):
    r = rk4_cme(flip, 1.0, 1e-3)
    assert r.prob((1, 0)) == pytest.approx(flip_exact(1.0), abs=1e-6)


def test_rk4_convergence_order(flip):
    errors = [abs(rk4_cme(flip, 1.0, h).prob((1, 0)) - flip_exact(1.0)) for h in (0.1, 0.05)]
    assert 8 <= errors[0] / errors[1] <= 32


@pytest.mark.parametrize("method", ["su", "fau", "rk4"])
def test_zero_horizon_is_the_initial_dirac(flip, method):
    if method == "su":
        r = standard_uniformization(flip, UniformizationConfig(0.0, lambda_user=1.0))
    elif method == "fau":
        r = fast_adaptive_uniformization(flip, UniformizationConfig(0.0))
    else:
        r = rk4_cme(flip, 0.0, 0.1)
    assert r.distribution == {(1, 0): 1.0}
    assert r.accumulated_error == 0.0


def test_rate_exceeded_names_the_state(flip):
    with pytest.raises(RateExceeded) as info:
        standard_uniformization(flip, UniformizationConfig(1.0, lambda_user=0.5))
    assert info.value.state == (1, 0)
    assert "(1, 0)" in str(info.value) and "--lambda" in str(info.value)


def test_rate_exceeded_for_states_found_later():
    m = parse_model(IMMIGRATION_DEATH)
    with pytest.raises(RateExceeded) as info:
        standard_uniformization(m, UniformizationConfig(5.0, lambda_user=5.0))
    assert info.value.exit_rate > 5.0


def test_standard_uniformization_needs_a_rate(flip):
    with pytest.raises(ValueError):
        standard_uniformization(flip, UniformizationConfig(1.0))


@pytest.mark.parametrize("kw", [dict(epsilon=0.0), dict(epsilon=1.0), dict(t=-1.0),
                                dict(dump=0.0), dict(delta=-1.0), dict(lambda_user=0.0),
                                dict(safety=0.5)])
def test_configuration_is_validated(kw):
    args = dict(t=1.0) | kw
    with pytest.raises(ValueError):
        UniformizationConfig(**args)


def test_zero_rate_model_is_constant():
    m = parse_model("var x = 3; x > 5 |- 1 -> x := x + 1; true |- 0 -> x := x - 1;")
    for r in (rk4_cme(m, 10.0, 0.5), fast_adaptive_uniformization(m, UniformizationConfig(10.0))):
        assert r.distribution == {(3,): 1.0}
    # a fixed rate still walks the Poisson series, whose tail is lost
    r = standard_uniformization(m, UniformizationConfig(10.0, lambda_user=1.0))
    assert list(r.distribution) == [(3,)]
    assert r.prob((3,)) + r.accumulated_error == pytest.approx(1.0, abs=1e-15)
    assert r.accumulated_error <= 1e-8


@pytest.mark.parametrize("delta", [0.0, 1e-15])
def test_adaptive_uniformization_on_an_infinite_chain(delta):
    m = parse_model(IMMIGRATION_DEATH)
    t = 3.0
    r = fast_adaptive_uniformization(m, UniformizationConfig(t, delta=delta))
    exact = immigration_death_exact(t)
    ks = np.arange(60)
    got = np.array([r.prob((k,)) for k in ks])
    assert np.abs(got - exact.pmf(ks)).sum() < 1e-7
    assert r.accumulated_error < 1e-7


def test_standard_uniformization_on_an_infinite_chain():
    m = parse_model(IMMIGRATION_DEATH)
    r = standard_uniformization(m, UniformizationConfig(3.0, lambda_user=30.0))
    ks = np.arange(60)
    got = np.array([r.prob((k,)) for k in ks])
    assert np.abs(got - immigration_death_exact(3.0).pmf(ks)).sum() < 1e-7


def test_aggressive_threshold_keeps_mass_accounted():
    # a large delta drops and rediscovers states inside each segment
    m = parse_model(IMMIGRATION_DEATH)
    r = fast_adaptive_uniformization(m, UniformizationConfig(3.0, delta=1e-5, dump=1.0))
    total = r.final.total()
    assert total <= 1 + 1e-9
    assert total + r.accumulated_error == pytest.approx(1.0, abs=1e-12)
    assert r.accumulated_error < 1e-2
    ks = np.arange(60)
    got = np.array([r.prob((k,)) for k in ks])
    assert np.abs(got - immigration_death_exact(3.0).pmf(ks)).sum() < 2 * r.accumulated_error + 1e-7


def test_dump_segments_agree_with_a_single_segment():
    m = parse_model(IMMIGRATION_DEATH)
    one = fast_adaptive_uniformization(m, UniformizationConfig(4.0, epsilon=1e-10))
    seg = fast_adaptive_uniformization(m, UniformizationConfig(4.0, dump=1.0, epsilon=1e-10))
    assert [s.point for s in seg.snapshots] == [1.0, 2.0, 3.0, 4.0]
    ks = np.arange(60)
    a = np.array([one.prob((k,)) for k in ks])
    b = np.array([seg.prob((k,)) for k in ks])
    assert np.abs(a - b).sum() < 1e-9
    mid = seg.snapshots[1]
    exact = immigration_death_exact(2.0).pmf(ks)
    assert np.abs(np.array([mid.prob_of((k,)) for k in ks]) - exact).sum() < 1e-8


def test_dump_points():
    assert dump_points(10.0, None) == [10.0]
    assert dump_points(10.0, 2.5) == [2.5, 5.0, 7.5, 10.0]
    assert dump_points(10.0, 3.0) == [3.0, 6.0, 9.0, 10.0]
    assert dump_points(1.0, 0.1)[-1] == 1.0 and len(dump_points(1.0, 0.1)) == 10
    assert dump_points(0.0, 1.0) == [0.0]


def _dense_case(seed):
    case = random_finite_case(np.random.default_rng(seed))
    states, q = case.generator()
    return case, parse_model(case.text), states, q


@settings(max_examples=20, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(seed=st.integers(0, 2 ** 32 - 1), t=st.floats(0.1, 5.0))
def test_uniformization_matches_matrix_exponential(seed, t):
    case, m, states, q = _dense_case(seed)
    want = case.start(states) @ expm(q * t)
    lam = max(1e-3, float(-q.diagonal().min())) * (1 + 1e-9)
    su = standard_uniformization(m, UniformizationConfig(t, delta=0.0, lambda_user=lam))
    fau = fast_adaptive_uniformization(m, UniformizationConfig(t, delta=0.0))
    for r in (su, fau):
        got = dist_vector(r, states)
        assert 0.5 * np.abs(got - want).sum() <= 1e-7
        assert got.sum() <= 1 + 1e-9
        assert got.sum() + r.accumulated_error >= 1 - 1e-9


@settings(max_examples=20, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(bound=st.integers(1, 30), up=st.floats(0.1, 3.0), down=st.floats(0.1, 3.0),
       start=st.integers(0, 30), t=st.floats(0.1, 4.0))
def test_adaptive_equals_standard_for_uniform_exit_rates(bound, up, down, start, t):
    # a cyclic walk whose exit rate is up + down in every state
    text = f"""
    var x = {min(start, bound)};
    x < {bound} |- {up!r} -> x := x + 1;
    x = {bound} |- {up!r} -> x := x - {bound};
    x > 0 |- {down!r} -> x := x - 1;
    x = 0 |- {down!r} -> x := x + {bound};
    """
    m = parse_model(text)
    lam = up + down
    cfg = dict(delta=0.0, epsilon=1e-12)
    su = standard_uniformization(m, UniformizationConfig(t, lambda_user=lam, **cfg))
    fau = fast_adaptive_uniformization(m, UniformizationConfig(t, safety=1.0, **cfg))
    states = [(k,) for k in range(bound + 1)]
    assert np.abs(dist_vector(su, states) - dist_vector(fau, states)).max() <= 1e-9


def test_rk4_matches_adaptive_uniformization_on_the_toggle_switch():
    m = load_example("toggle_switch")
    t = 5.0
    fau = fast_adaptive_uniformization(m, UniformizationConfig(t))
    rk = rk4_cme(m, t, 0.01)
    keys = set(fau.distribution) | set(rk.distribution)
    tv = 0.5 * sum(abs(fau.prob(k) - rk.prob(k)) for k in keys)
    assert tv <= 1e-5


def test_rk4_reports_instability():
    m = parse_model(IMMIGRATION_DEATH)
    with pytest.raises(DivergenceError) as info:
        rk4_cme(m, 10.0, 2.0)
    assert "smaller step" in str(info.value)


def test_rk4_invalid_arguments(flip):
    with pytest.raises(ValueError):
        rk4_cme(flip, 1.0, 0.0)
    with pytest.raises(ValueError):
        rk4_cme(flip, -1.0, 0.1)


def test_accumulator_follows_the_store():
    s = StateStore(1, 1, capacity=2, chunk=2)
    acc = Accumulator(s)
    idx, _ = s.insert_many(np.array([[0], [1]]))
    s.prob[idx] = [0.5, 0.5]
    acc.add(0.5)
    s.deactivate(idx[0])                    # accumulated 0.25 spills out
    s.insert_many(np.array([[2], [3]]))     # growth
    s.maybe_compress()
    s.insert_many(np.array([[0]]))          # rediscovered: spill comes back
    s.deactivate(s.find((1,)))              # spilled and never rediscovered
    acc.commit()
    got = {s.state_of(i): s.prob[i] for i in s.iterate_active() if s.prob[i] > 0}
    assert got == {(0,): 0.25, (1,): 0.25}
    acc.detach()
    assert acc not in s.listeners

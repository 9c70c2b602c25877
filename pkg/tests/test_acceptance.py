"""Acceptance criteria, one test per criterion.

Each check prints a ``[PASS]``/``[FAIL]`` line; the lines are repeated in the
pytest terminal summary.  Run ``python tests/test_acceptance.py`` to evaluate
them without pytest.
"""

from __future__ import annotations

import math
import os
import sys
import time

import numpy as np
from scipy.linalg import expm

sys.path.insert(0, os.path.dirname(__file__))

from conftest import ACCEPTANCE_LINES, dist_vector, flip_exact, random_finite_case  # noqa: E402
from popmc import parse_model  # noqa: E402
from popmc.ctmc import (UniformizationConfig, fast_adaptive_uniformization,  # noqa: E402
                        rk4_cme, standard_uniformization)
from popmc.dtmc import PropagationConfig, dtmc_transient  # noqa: E402
from popmc.examples import load_example  # noqa: E402
from popmc.jump import BirthWeights, birth_weights, poisson_weights  # noqa: E402
from popmc.meanfield import rre_mean_field  # noqa: E402

FLIP = """
var a = 1; var b = 0;
a > 0 |- 1 -> a := a - 1, b := b + 1;
b > 0 |- 1 -> a := a + 1, b := b - 1;
"""


def report(number: int, title: str, ok: bool, detail: str) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] AC{number} {title}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


# -- the seven criteria ------------------------------------------------------

def check_moran() -> bool:
    m = load_example("moran")
    start = time.perf_counter()
    r = dtmc_transient(m, 10 ** 6, PropagationConfig(delta=0.0, capacity=4096))
    elapsed = time.perf_counter() - start
    fix = r.prob((1000, 0))
    ok = abs(fix - 0.00049) <= 0.00005 and r.accumulated_error == 0 and r.active_states == 1001
    return report(1, "Moran fixation", ok,
                  f"P(x_A1=1000)={fix:.6g}, error={r.accumulated_error}, "
                  f"states={r.active_states}, {elapsed:.1f}s")


def modes(p: np.ndarray) -> list[int]:
    out = []
    for i in range(len(p)):
        left = p[i - 1] if i > 0 else -1.0
        right = p[i + 1] if i + 1 < len(p) else -1.0
        if p[i] > left and p[i] > right:
            out.append(i)
    return out


def check_exclusive_switch() -> bool:
    m = load_example("exclusive_switch")
    start = time.perf_counter()
    r = fast_adaptive_uniformization(m, UniformizationConfig(
        10000.0, dump=1000.0, delta=1e-15, epsilon=1e-8, capacity=1 << 16))
    elapsed = time.perf_counter() - start
    values, probs = r.final.marginal(m.variables.index("N1"))
    dense = np.zeros(values.max() + 1)
    dense[values] = probs
    peaks = modes(dense)
    bimodal = len(peaks) == 2 and peaks[0] == 0 and 8 <= peaks[1] <= 12
    ok = (r.accumulated_error <= 1e-6 and 1500 <= r.peak_states <= 6000 and bimodal
          and elapsed <= 300)
    return report(2, "Exclusive switch", ok,
                  f"error={r.accumulated_error:.3g}, peak states={r.peak_states}, "
                  f"N1 modes={peaks}, {elapsed:.1f}s")


def check_enzymatic() -> bool:
    from scipy.integrate import solve_ivp

    m = load_example("enzymatic")
    start = time.perf_counter()
    r = rre_mean_field(m, 70.0, dump=7.0)
    elapsed = time.perf_counter() - start
    x = r.states
    cons = max(np.abs(x[:, 0] + x[:, 2] - 1000).max(),
               np.abs(x[:, 1] + x[:, 2] + x[:, 3] - 100).max())
    # reference: the same equations, written out by hand, on a tight-tolerance
    # implicit integrator (far finer than h/100)
    def f(_, y):
        e, s, c, p = y
        return [-e * s + 1.1 * c, -e * s + c, e * s - 1.1 * c, 0.1 * c]
    ref = solve_ivp(f, (0, 70), [1000, 100, 0, 0], method="Radau",
                    rtol=1e-12, atol=1e-12).y[3, -1]
    rel = abs(r.final[3] - ref) / ref
    ok = elapsed < 1.0 and cons <= 1e-6 and rel <= 1e-4
    return report(3, "Enzymatic mean field", ok,
                  f"{elapsed:.2f}s, conservation drift={cons:.2g}, x_P(70) rel.err={rel:.2g}")


def check_oracles(n_models: int = 25) -> bool:
    rng = np.random.default_rng(12345)
    worst_dtmc = worst_su = worst_fau = worst_uniform = 0.0
    max_states = 0
    for _ in range(n_models):
        case = random_finite_case(rng, "dtmc")
        m = parse_model(case.text)
        states, p = case.embedded()
        max_states = max(max_states, len(states))
        k = int(rng.integers(1, 80))
        want = case.start(states) @ np.linalg.matrix_power(p, k)
        got = dist_vector(dtmc_transient(m, k, PropagationConfig(delta=0.0, capacity=64)), states)
        worst_dtmc = max(worst_dtmc, np.abs(got - want).max())

        case = random_finite_case(rng, "ctmc")
        m = parse_model(case.text)
        states, q = case.generator()
        max_states = max(max_states, len(states))
        t = float(rng.uniform(0.1, 5.0))
        want = case.start(states) @ expm(q * t)
        lam = max(1e-3, float(-q.diagonal().min())) * (1 + 1e-9)
        su = standard_uniformization(m, UniformizationConfig(t, delta=0.0, lambda_user=lam))
        fau = fast_adaptive_uniformization(m, UniformizationConfig(t, delta=0.0))
        worst_su = max(worst_su, 0.5 * np.abs(dist_vector(su, states) - want).sum())
        worst_fau = max(worst_fau, 0.5 * np.abs(dist_vector(fau, states) - want).sum())

        bound = int(rng.integers(1, 150))
        up, down = (float(v) for v in np.round(rng.uniform(0.1, 3.0, size=2), 4))
        m = parse_model(f"""
            var x = {int(rng.integers(0, bound + 1))};
            x < {bound} |- {up} -> x := x + 1;
            x = {bound} |- {up} -> x := x - {bound};
            x > 0 |- {down} -> x := x - 1;
            x = 0 |- {down} -> x := x + {bound};
        """)
        t = float(rng.uniform(0.1, 5.0))
        cfg = dict(delta=0.0, epsilon=1e-12)
        a = standard_uniformization(m, UniformizationConfig(t, lambda_user=up + down, **cfg))
        b = fast_adaptive_uniformization(m, UniformizationConfig(t, safety=1.0, **cfg))
        states = [(i,) for i in range(bound + 1)]
        worst_uniform = max(worst_uniform,
                            np.abs(dist_vector(a, states) - dist_vector(b, states)).max())
    ok = (worst_dtmc <= 1e-10 and worst_su <= 1e-7 and worst_fau <= 1e-7
          and worst_uniform <= 1e-9 and max_states <= 200)
    return report(4, "Oracle equivalence", ok,
                  f"{n_models} models/kind (<= {max_states} states): dtmc max|d|={worst_dtmc:.2g}, "
                  f"su TV={worst_su:.2g}, fau TV={worst_fau:.2g}, fau-su={worst_uniform:.2g}")


def check_jump_weights() -> bool:
    eps = 1e-8
    sums_ok = True
    for lt in (0.1, 1.0, 10.0, 1e4):
        jw = poisson_weights(lt, eps)
        sums_ok &= bool(np.isfinite(jw.weights).all()) and math.fsum(jw.weights) >= 1 - eps
    worst_const = 0.0
    for rate, t in ((1.0, 1.0), (3.0, 2.0), (0.5, 30.0), (20.0, 5.0)):
        ref = poisson_weights(rate * t, 1e-14)
        bw = BirthWeights(t, 1e-10)
        k = 0
        while not bw.converged:
            worst_const = max(worst_const, abs(bw.push_rate(rate) - ref[k]))
            k += 1
    two = birth_weights([1.0, 2.0], 1.0, 1e-8).weights
    two_err = max(abs(two[0] - 0.3678794), abs(two[1] - 0.2325442))
    exact_err = max(abs(two[0] - math.exp(-1)), abs(two[1] - (math.exp(-1) - math.exp(-2))))
    ok = sums_ok and worst_const <= 1e-10 and two_err <= 1e-7 and exact_err <= 1e-8
    return report(5, "Jump weights", ok,
                  f"Poisson sums ok={sums_ok}, birth vs Poisson max|d|={worst_const:.2g}, "
                  f"two-rate weights={two[0]:.7f},{two[1]:.7f}")


def check_store() -> bool:
    from hypothesis import settings
    from hypothesis.stateful import run_state_machine_as_test
    from test_store import StoreMachine

    try:
        run_state_machine_as_test(
            StoreMachine, settings=settings(max_examples=200, stateful_step_count=50,
                                            deadline=None, database=None))
        ok, detail = True, "200 random operation sequences kept bijection, exact mass, 20% rule"
    except Exception as e:  # report the falsifying case instead of aborting the suite
        ok, detail = False, f"{type(e).__name__}: {e}"
    return report(6, "Store invariants", ok, detail)


def check_rk4_order() -> bool:
    m = parse_model(FLIP)
    errs = [abs(rk4_cme(m, 1.0, h).prob((1, 0)) - flip_exact(1.0)) for h in (0.1, 0.05)]
    ratio = errs[0] / errs[1]
    return report(7, "RK4 order", 8 <= ratio <= 32,
                  f"errors {errs[0]:.3g} -> {errs[1]:.3g}, ratio {ratio:.2f}")


# -- pytest entry points -----------------------------------------------------

def test_ac1_moran_fixation():
    assert check_moran()


def test_ac2_exclusive_switch():
    assert check_exclusive_switch()


def test_ac3_enzymatic_mean_field():
    assert check_enzymatic()


def test_ac4_oracle_equivalence():
    assert check_oracles()


def test_ac5_jump_weights():
    assert check_jump_weights()


def test_ac6_store_invariants():
    assert check_store()


def test_ac7_rk4_order():
    assert check_rk4_order()


if __name__ == "__main__":
    checks = [check_moran, check_exclusive_switch, check_enzymatic, check_oracles,
              check_jump_weights, check_store, check_rk4_order]
    results = [c() for c in checks]
    sys.exit(0 if all(results) else 1)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from lossnet.core import Exponential, RequestClass, Scenario, builtin, knapsack
from lossnet.lp import (
    LpInfeasible,
    epsilon_zero,
    solve_knapsack,
    solve_lp,
    solve_network_lp,
    solve_simplex,
)


def as_network(sc):
    """The same knapsack, forced through the network path."""
    return Scenario(sc.classes, sc.capacity, sc.name)


def generic_lp(sc, shrink=1.0, horizon=math.inf):
    rho, r, b = sc.rho, sc.reward, sc.sizes()
    ub = np.ones(sc.m) if horizon == math.inf else -np.expm1(-sc.mu * horizon)
    return solve_simplex(r * rho, (b * rho)[None, :], [sc.capacity[0] / shrink], ub)


@st.composite
def knapsacks(draw, max_m=6):
    m = draw(st.integers(1, max_m))
    fl = lambda lo, hi: st.floats(lo, hi, allow_nan=False)  # noqa: E731
    lam = draw(st.lists(fl(0.1, 50), min_size=m, max_size=m))
    mu = draw(st.lists(fl(0.1, 5), min_size=m, max_size=m))
    r = draw(st.lists(fl(0.0, 3), min_size=m, max_size=m))
    b = draw(st.lists(fl(0.01, 1), min_size=m, max_size=m))
    cap = draw(fl(1.0, 60))
    return knapsack(lam, mu, r, b, cap)


# --- solve_knapsack -----------------------------------------------------------


def test_eq52_steady_solution():
    sol = solve_knapsack(builtin("eq52"))
    np.testing.assert_allclose(sol.alpha, [1, 1, 0.7818], atol=5e-5)
    assert sol.value == pytest.approx(207.2727, abs=1e-3)
    assert sol.saturated == frozenset({0, 1})


def test_eq52_duals():
    sol = solve_knapsack(builtin("eq52"))
    assert sol.dual_u[0] == pytest.approx(0.75 / 0.55, rel=1e-12)
    np.testing.assert_allclose(sol.dual_v, [69.0909090909, 1.8181818182, 0.0], atol=1e-9)
    assert sol.dual_value == pytest.approx(sol.value, rel=1e-12)


def test_nonbinding_capacity_accepts_everything():
    sc = knapsack([1, 2], [1, 1], [2, 3], [0.1, 0.2], 100)
    sol = solve_knapsack(sc)
    np.testing.assert_array_equal(sol.alpha, [1, 1])
    assert sol.dual_u[0] == 0
    np.testing.assert_allclose(sol.dual_v, sc.reward * sc.rho)


def test_eq52_perturbed_solution():
    sol = solve_knapsack(builtin("eq52"), shrink=2.0)
    np.testing.assert_allclose(sol.alpha, [1, 1, 36 / 110], rtol=1e-12)


def test_shrink_below_one_rejected():
    with pytest.raises(ValueError):
        solve_knapsack(builtin("eq52"), shrink=0.5)


def test_knapsack_needs_single_resource():
    sc = Scenario((RequestClass(1.0, Exponential(1.0), 1.0, ((1.0, 0.0),)),), (1.0, 1.0))
    with pytest.raises(ValueError):
        solve_knapsack(sc)


def test_ratio_ties_go_to_lower_index():
    sc = knapsack([1, 1], [1, 1], [1, 1], [1, 1], 1.5)
    np.testing.assert_allclose(solve_knapsack(sc).alpha, [1, 0.5])


# --- solve_simplex ------------------------------------------------------------


def test_one_variable_lp():
    res = solve_simplex([1.0], [[1.0]], [1.0])
    assert res.value == pytest.approx(1.0)
    assert res.duals[0] == pytest.approx(1.0)


def test_empty_polytope_is_infeasible():
    with pytest.raises(LpInfeasible, match="infeasible"):
        solve_simplex([1.0], [[1.0]], [-1.0])


def test_generic_lp_matches_greedy_on_eq52():
    sc = builtin("eq52")
    res = generic_lp(sc)
    sol = solve_knapsack(sc)
    assert res.value == pytest.approx(sol.value, abs=1e-8)
    np.testing.assert_allclose(res.x, sol.alpha, atol=1e-8)
    assert res.duals[0] == pytest.approx(sol.dual_u[0], abs=1e-8)


def test_simplex_handles_negative_rhs_rows():
    # x >= 1 written as -x <= -1; max -x hits 1
    res = solve_simplex([-1.0], [[-1.0]], [-1.0], [5.0])
    assert res.x[0] == pytest.approx(1.0)


def test_simplex_rejects_nonfinite_data():
    with pytest.raises(ValueError):
        solve_simplex([np.nan], [[1.0]], [1.0])


# --- network LP ---------------------------------------------------------------


def test_network_path_reduces_to_knapsack():
    sc = builtin("eq52")
    net = solve_network_lp(as_network(sc))
    ks = solve_knapsack(sc)
    assert net.value == pytest.approx(ks.value, abs=1e-8)
    np.testing.assert_allclose(net.alpha, ks.alpha, atol=1e-8)


def test_two_allocation_class_splits_across_resources():
    sc = Scenario((RequestClass(4.0, Exponential(1.0), 1.0, ((1.0, 0.0), (0.0, 1.0))),), (1.0, 1.0))
    sol = solve_network_lp(sc)
    assert sol.value == pytest.approx(2.0)
    assert sol.alpha[0] == pytest.approx(0.5)
    # brute force over a grid of (a1, a2)
    g = np.linspace(0, 1, 401)
    A1, A2 = np.meshgrid(g, g)
    ok = (4 * A1 <= 1 + 1e-12) & (4 * A2 <= 1 + 1e-12) & (A1 + A2 <= 1 + 1e-12)
    assert np.max(np.where(ok, 4 * (A1 + A2), -1)) == pytest.approx(2.0)


def test_zero_rewards_give_zero_value():
    sc = knapsack([1, 2], [1, 1], [0, 0], [0.3, 0.2], 1)
    assert solve_network_lp(as_network(sc)).value == 0.0
    assert solve_knapsack(sc).value == 0.0


def test_keep_mask_fixes_allocations_at_zero():
    sc = Scenario((RequestClass(4.0, Exponential(1.0), 1.0, ((1.0, 0.0), (0.0, 1.0))),), (1.0, 1.0))
    sol = solve_network_lp(sc, keep=[np.array([True, False])])
    assert sol.alpha_ij[0][1] == 0.0
    assert sol.value == pytest.approx(1.0)


# --- epsilon_0 ----------------------------------------------------------------


def test_eq52_epsilon_zero_is_quarter():
    assert epsilon_zero(builtin("eq52")) == 0.25


def test_large_capacity_epsilon_zero_is_quarter():
    assert epsilon_zero(knapsack([1, 1], [1, 1], [1, 2], [1, 1], 1e6)) == 0.25


def test_epsilon_zero_at_marginal_class_breakpoint():
    # class 0 loads 0.6 of capacity 1; class 1 is marginal until 1/(1+4e) = 0.6
    sc = knapsack([6, 10], [1, 1], [2, 1], [0.1, 0.1], 1)
    assert epsilon_zero(sc) == pytest.approx((1 / 0.6 - 1) / 4, abs=1e-6)


# --- properties ---------------------------------------------------------------


@settings(max_examples=100, deadline=None)
@given(knapsacks())
def test_greedy_agrees_with_simplex(sc):
    ks = solve_knapsack(sc)
    res = generic_lp(sc)
    assert abs(ks.value - res.value) <= 1e-7 * (1 + abs(ks.value))
    assert abs(ks.dual_value - res.value) <= 1e-6 * (1 + abs(ks.value))


@settings(max_examples=100, deadline=None)
@given(knapsacks())
def test_greedy_agrees_with_reference_solver(sc):
    ks = solve_knapsack(sc)
    ref = linprog(-(sc.reward * sc.rho), A_ub=[sc.sizes() * sc.rho], b_ub=[sc.capacity[0]], bounds=(0, 1))
    assert ks.value == pytest.approx(-ref.fun, rel=1e-7, abs=1e-7)


@settings(max_examples=100, deadline=None)
@given(knapsacks(), st.sampled_from([math.inf, 0.1, 1.0, 5.0]), st.floats(1.0, 2.0))
def test_primal_dual_feasibility_and_slackness(sc, horizon, shrink):
    sol = solve_knapsack(sc, horizon, shrink)
    b, rho, r = sc.sizes(), sc.rho, sc.reward
    used = float(np.sum(rho * sol.alpha * b))
    room = sc.capacity[0] / shrink
    assert used <= room + 1e-9
    assert np.all(sol.alpha >= 0) and np.all(sol.alpha <= sol.caps + 1e-12)
    assert np.all(sol.dual_v + rho * sol.dual_u[0] * b >= r * rho - 1e-9)
    assert abs(sol.value - sol.dual_value) <= 1e-6 * (1 + abs(sol.value))
    assert abs(sol.dual_u[0] * (room - used)) <= 1e-6 * (1 + sol.value)
    assert np.all(np.abs(sol.dual_v * (sol.caps - sol.alpha)) <= 1e-6 * (1 + sol.value))


@settings(max_examples=50, deadline=None)
@given(knapsacks(), st.floats(0.01, 10), st.floats(0.01, 10), st.floats(1, 2), st.floats(1, 2))
def test_value_monotone_in_horizon_and_shrink(sc, t1, t2, s1, s2):
    lo, hi = sorted((t1, t2))
    assert solve_knapsack(sc, lo).value <= solve_knapsack(sc, hi).value + 1e-9
    assert solve_knapsack(sc, hi).value <= solve_knapsack(sc).value + 1e-9
    a, b = sorted((s1, s2))
    assert solve_knapsack(sc, shrink=b).value <= solve_knapsack(sc, shrink=a).value + 1e-9


@settings(max_examples=40, deadline=None)
@given(knapsacks(max_m=4))
def test_network_path_agrees_with_greedy(sc):
    assert solve_network_lp(as_network(sc)).value == pytest.approx(solve_lp(sc).value, rel=1e-7, abs=1e-7)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.data())
def test_network_lp_strong_duality(m, s, data):
    fl = lambda lo, hi: st.floats(lo, hi, allow_nan=False)  # noqa: E731
    classes = []
    for _ in range(m):
        L = data.draw(st.integers(1, 3))
        allocs = []
        for _ in range(L):
            a = data.draw(st.lists(fl(0.0, 1.0), min_size=s, max_size=s))
            a[data.draw(st.integers(0, s - 1))] = data.draw(fl(0.05, 1.0))
            allocs.append(tuple(a))
        classes.append(RequestClass(data.draw(fl(0.5, 20)), Exponential(data.draw(fl(0.2, 3))), data.draw(fl(0, 2)), tuple(allocs)))
    cap = tuple(data.draw(st.lists(fl(1.0, 10.0), min_size=s, max_size=s)))
    sc = Scenario(tuple(classes), cap)
    sol = solve_network_lp(sc)
    assert abs(sol.value - sol.dual_value) <= 1e-6 * (1 + abs(sol.value))
    alloc, n = sc.alloc_array()
    use = sum(sc.rho[i] * sol.alpha_ij[i][j] * alloc[i, j] for i in range(m) for j in range(n[i]))
    assert np.all(use <= sc.cap + 1e-9)
    for i in range(m):
        for j in range(n[i]):
            assert sol.dual_v[i] + sc.rho[i] * sol.dual_u @ alloc[i, j] >= sc.reward[i] * sc.rho[i] - 1e-7

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lossnet import core
from lossnet.core import (
    Deterministic,
    Exponential,
    HeavyTail,
    HyperExponential,
    RequestClass,
    Scenario,
    builtin,
    knapsack,
    load_balancing_alphas,
    offered_loads,
    scale_scenario,
    scenario_from_json,
    validate_scenario,
)


def test_eq52_is_valid():
    assert validate_scenario(builtin("eq52")) == []


def test_oversized_allocation_is_reported():
    sc = knapsack([1], [1], [1], [2], 1)
    assert validate_scenario(sc) == ["class 0: no fitting allocation"]


def test_zero_arrival_rate_is_reported():
    sc = Scenario((RequestClass(0.0, Exponential(1.0), 1.0, ((0.5,),)),), (1.0,))
    assert validate_scenario(sc) == ["class 0: arrival rate nonpositive"]


def test_allocation_dimension_mismatch_is_reported():
    sc = Scenario((RequestClass(1.0, Exponential(1.0), 1.0, ((0.5, 0.5),)),), (1.0,))
    out = validate_scenario(sc)
    assert any("dimension" in v for v in out)


def test_all_zero_allocation_is_reported():
    sc = Scenario((RequestClass(1.0, Exponential(1.0), 1.0, ((0.0,),)),), (1.0,))
    assert any("no positive component" in v for v in validate_scenario(sc))


def test_eq52_offered_loads():
    np.testing.assert_allclose(offered_loads(builtin("eq52")), [80, 40, 200])


def test_offered_load_deterministic_service():
    sc = Scenario((RequestClass(1.0, Deterministic(1.0), 1.0, ((1.0,),)),), (1.0,))
    assert offered_loads(sc)[0] == pytest.approx(1.0)


def test_offered_load_hyperexponential_mixture():
    sc = Scenario((RequestClass(2.0, HyperExponential((0.5, 0.5), (1.0, 2.0)), 1.0, ((1.0,),)),), (1.0,))
    assert offered_loads(sc)[0] == pytest.approx(1.5)


def test_scale_one_is_identity():
    sc = builtin("eq52")
    assert scale_scenario(sc, 1) == sc


def test_scale_two_eq52():
    sc = scale_scenario(builtin("eq52"), 2)
    np.testing.assert_allclose(sc.lam, [80, 160, 120])
    np.testing.assert_allclose(sc.sizes(), [0.05, 0.075, 0.275])
    np.testing.assert_allclose(sc.reward, [0.5, 0.125, 0.375])
    np.testing.assert_allclose(sc.cap, [100])


def test_scale_without_reward_rescaling_keeps_rewards():
    sc = scale_scenario(builtin("eq52"), 4, rescale_reward=False)
    np.testing.assert_allclose(sc.reward, [1.0, 0.25, 0.75])


def test_scale_rejects_nonpositive():
    with pytest.raises(ValueError):
        scale_scenario(builtin("eq52"), 0)


@given(st.floats(0.01, 1000))
def test_size_times_load_is_scale_invariant(n):
    sc = builtin("s3")
    scn = scale_scenario(sc, n)
    np.testing.assert_allclose(scn.sizes() * scn.rho, sc.sizes() * sc.rho, rtol=1e-12)


@given(st.floats(0.05, 50), st.floats(0.05, 50))
def test_scaling_composes(a, b):
    sc = builtin("s1")
    left = scale_scenario(scale_scenario(sc, a), b)
    right = scale_scenario(sc, a * b)
    for f in ("lam", "reward", "cap"):
        np.testing.assert_allclose(getattr(left, f), getattr(right, f), rtol=1e-12)
    np.testing.assert_allclose(left.sizes(), right.sizes(), rtol=1e-12)


def test_load_balancing_equal_rates():
    np.testing.assert_allclose(load_balancing_alphas(builtin("s4"), (0.1, 0.9)), [0.1, 0.9])


def test_load_balancing_zero_target():
    np.testing.assert_array_equal(load_balancing_alphas(builtin("s4"), (0, 0)), [0, 0])


def test_load_balancing_unequal_rates():
    sc = builtin("s5")
    np.testing.assert_allclose(sc.rho, [1000, 100])
    np.testing.assert_allclose(load_balancing_alphas(sc, (100 / 190, 90 / 190)), [0.1, 0.9], rtol=1e-12)


def test_load_balancing_rejects_unreachable_target():
    with pytest.raises(ValueError):
        load_balancing_alphas(builtin("s4"), (0.0, 1.0 + 0.5))


# --- service models -----------------------------------------------------------

MODELS = [Exponential(0.7), HyperExponential((0.3, 0.7), (0.5, 4.0)), Deterministic(2.0), HeavyTail()]


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.kind)
def test_eq_tail_starts_at_one_and_decreases(model):
    t = np.linspace(0, 50, 501)
    g = model.eq_tail(t)
    assert g[0] == pytest.approx(1.0)
    assert np.all(np.diff(g) <= 1e-15)
    assert float(model.eq_tail(1e9)) < 1e-6


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.kind)
def test_eq_tail_matches_quadrature(model):
    from scipy.integrate import quad

    for t in (0.0, 0.3, 1.0, 1.7, 5.0):
        upper = max(model.d, t) if isinstance(model, Deterministic) else np.inf
        val, _ = quad(lambda s: float(model.tail(s)), t, upper, epsabs=1e-12, epsrel=1e-12)
        assert float(model.eq_tail(t)) == pytest.approx(val / model.mean, abs=1e-8)


def test_exponential_eq_tail_equals_tail():
    m = Exponential(1.3)
    t = np.linspace(0, 10, 50)
    np.testing.assert_array_equal(m.eq_tail(t), np.exp(-1.3 * t))


@pytest.mark.parametrize("model", MODELS[:3], ids=lambda m: m.kind)
def test_sample_mean_within_three_standard_errors(model):
    rng = np.random.default_rng(7)
    x = model.sample(rng, 100_000)
    se = x.std(ddof=1) / math.sqrt(x.size)
    assert abs(x.mean() - model.mean) <= 3 * se + 1e-12


def test_heavy_tail_sample_matches_cdf():
    # infinite variance: check distribution quantiles rather than the mean
    x = HeavyTail().sample(np.random.default_rng(3), 100_000)
    for q in (0.25, 0.5, 0.9):
        s_q = 1 / math.sqrt(1 - q) - 1
        assert np.mean(x <= s_q) == pytest.approx(q, abs=0.006)


def test_service_rejects_bad_parameters():
    with pytest.raises(ValueError):
        Exponential(0.0)
    with pytest.raises(ValueError):
        HyperExponential((0.5, 0.6), (1, 2))
    with pytest.raises(ValueError):
        Deterministic(-1)


# --- json and built-ins -------------------------------------------------------


def test_json_round_trip():
    sc = builtin("s3")
    assert scenario_from_json(sc.to_json()) == sc


def test_json_rejects_unknown_keys():
    obj = builtin("s1").to_json()
    obj["extra"] = 1
    with pytest.raises(ValueError):
        scenario_from_json(obj)


def test_json_rejects_unknown_service():
    obj = builtin("s1").to_json()
    obj["classes"][0]["service"] = {"type": "gamma"}
    with pytest.raises(ValueError):
        scenario_from_json(obj)


@pytest.mark.parametrize("name", core.BUILTIN_NAMES)
def test_builtins_validate(name):
    assert validate_scenario(builtin(name)) == []


def test_builtin_parameters():
    s1 = builtin("s1")
    np.testing.assert_allclose(s1.lam, [4, 8, 6])
    np.testing.assert_allclose(s1.mu, [0.5, 2, 0.3])
    np.testing.assert_allclose(s1.sizes(), [0.1, 0.015, 0.055])
    s3 = builtin("s3")
    np.testing.assert_allclose(s3.reward, [1, 0.25, 0.75, 0.67])
    np.testing.assert_allclose(s3.sizes(), [0.02, 0.015, 0.055, 0.045])
    s5 = builtin("s5")
    np.testing.assert_allclose(s5.mu, [0.1, 1])
    assert s5.capacity == (190.0,)


def test_unknown_builtin_raises_key_error():
    with pytest.raises(KeyError):
        builtin("nope")


def test_sizes_requires_single_resource():
    sc = Scenario((RequestClass(1.0, Exponential(1.0), 1.0, ((1.0, 0.0), (0.0, 1.0))),), (1.0, 1.0))
    assert not sc.single_resource
    with pytest.raises(ValueError):
        sc.sizes()
    alloc, n = sc.alloc_array()
    assert alloc.shape == (1, 2, 2) and n.tolist() == [2]

import hashlib
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spillover.confounding import BiasSpecSimple, bias_general, bias_simple
from spillover.data import format_households, summarize_households
from spillover.errors import EstimationError, ValidationError
from spillover.estimands import direct_effect, indirect_effect, overall_effect, total_effect
from spillover.infectiousness import crude_effect
from spillover.oracle import (ClusterWorld, DiscreteConfounderWorld, HouseholdWorld, TrialWorld,
                              adjusted_p_u_se, all_conventions, binary_rule, features_from_arrays,
                              linear_rule, simulate_cluster_arrays, simulate_clusters,
                              simulate_households, simulate_trial, true_household_quantities,
                              true_trial_effects)
from spillover.selection import SelectionModel, fit

HOUSEHOLDS = HouseholdWorld(0.3, 0.2, 0.5, q_doomed_v=0.25, q_doomed_u=0.4, q_protected_u=0.1, q2=0.05)


def test_w1_analytic_values():
    t = true_household_quantities(HOUSEHOLDS)
    assert t.pi_d == pytest.approx(0.6) and t.pi_p == pytest.approx(0.4)
    assert t.p0 == pytest.approx(0.6 * 0.4 + 0.4 * 0.1)
    assert t.theta == pytest.approx(0.12)
    assert t.p_v == t.p1 == 0.25
    assert t.beta == pytest.approx(math.log((0.4 / 0.6) / (0.1 / 0.9)))


def test_no_protected_mass_means_no_selection():
    t = true_household_quantities(HouseholdWorld(0.3, 0.0, 0.7, 0.2, 0.4, 0.9))
    assert t.p0 == t.p_u and t.theta == 0 and t.gamma is None
    assert crude_effect(t.study()).risk_difference == pytest.approx(t.p_v - t.p_u)


def test_equal_transmission_gives_zero_beta_and_theta():
    t = true_household_quantities(HouseholdWorld(0.3, 0.2, 0.5, 0.2, 0.4, 0.4))
    assert t.beta == 0 and t.theta == pytest.approx(0, abs=1e-15)


def test_degenerate_strata():
    with pytest.raises(EstimationError, match="doomed \\+ protected"):
        true_household_quantities(HouseholdWorld(0, 0, 1, 0.2, 0.4, 0.4))
    with pytest.raises(EstimationError, match="doomed stratum"):
        true_household_quantities(HouseholdWorld(0, 0.5, 0.5, 0.2, 0.4, 0.4))
    with pytest.raises(ValidationError, match="sum"):
        HouseholdWorld(0.5, 0.5, 0.5, 0.2, 0.4, 0.4)


@pytest.mark.parametrize("seed", [1, 7, 2024])
def test_household_simulation_is_deterministic(seed):
    a = format_households(simulate_households(HOUSEHOLDS, 500, seed)).encode()
    b = format_households(simulate_households(HOUSEHOLDS, 500, seed)).encode()
    assert hashlib.sha256(a).digest() == hashlib.sha256(b).digest()


def test_keyed_draws_do_not_depend_on_n():
    small = simulate_households(HOUSEHOLDS, 100, 3)
    big = simulate_households(HOUSEHOLDS, 1000, 3)
    assert np.array_equal(small.y2, big.y2[:100])


def test_household_simulation_converges():
    n = 10_000
    s = summarize_households(simulate_households(HOUSEHOLDS, n, 11))
    t = true_household_quantities(HOUSEHOLDS)
    assert abs(s.p1 - t.p1) < 3 * math.sqrt(t.p1 * (1 - t.p1) / s.n1)
    assert abs(s.p0 - t.p0) < 3 * math.sqrt(t.p0 * (1 - t.p0) / s.n0)
    se = adjusted_p_u_se(HOUSEHOLDS, n, lambda st_: st_.doomed_fraction)
    assert abs(s.doomed_fraction - t.pi_d) < 3 * se


@settings(max_examples=200)
@given(st.floats(0.01, 0.6), st.floats(0.0, 0.39), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_ordered_secondary_risk_makes_crude_conservative(d, p, qv, qu, qp):
    world = HouseholdWorld(d, p, 1 - d - p, qv, qu, qp)
    t = true_household_quantities(world)
    if world.protected_risk_not_higher:
        assert t.p0 <= t.p_u + 1e-15
        assert t.p1 - t.p0 >= t.p_v - t.p_u - 1e-15


# -- trials -----------------------------------------------------------------

FRACTIONS = {"30": 0.3, "50": 0.5}


def test_no_interference_zero_indirect():
    w = TrialWorld((10, 20, 30), linear_rule(1.0, -0.5, 0.0, spread=1.0), FRACTIONS)
    for eff in all_conventions(w, "30", "50").values():
        assert eff.indirect == pytest.approx(0, abs=1e-12)


def test_linear_rule_closed_form_direct_effect():
    n, a, b, c = 10, 1.0, -0.5, 0.05
    for inter, constant in ((0.0, True), (0.02, False)):
        w = TrialWorld((n,) * 3, linear_rule(a, b, c, interaction=inter), FRACTIONS)
        eff = true_trial_effects(w, "30", "50")
        for label, frac in FRACTIONS.items():
            k = round(frac * n)
            # control sees k treated others, treated sees k - 1
            want = (a + c * k) - (a + b + (c + inter) * (k - 1))
            got = eff.direct_phi if label == "30" else eff.direct_psi
            assert got == pytest.approx(want, abs=1e-12)
        assert (abs(eff.direct_phi - eff.direct_psi) < 1e-12) == constant


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(2, 40), min_size=1, max_size=5), st.floats(-1, 1), st.floats(-1, 1),
       st.floats(-0.2, 0.2), st.floats(-0.1, 0.1), st.floats(0, 1), st.floats(0, 1))
def test_conventions_agree_for_linear_rules(sizes, a, b, c, d, f1, f2):
    w = TrialWorld(tuple(sizes), linear_rule(a, b, c, interaction=d, spread=0.5), {"p": f1, "q": f2})
    conv = all_conventions(w, "p", "q")
    # expectation matching: Bernoulli(k/n) vs mixed allocation averaged over own treatment
    for key, val in conv["bernoulli"].as_dict().items():
        assert abs(val - conv["unconditional"].as_dict()[key]) < 1e-12
    # overall effects agree with the conditional law too when z and count act additively
    additive = TrialWorld(tuple(sizes), linear_rule(a, b, c, spread=0.5), {"p": f1, "q": f2})
    conv = all_conventions(additive, "p", "q")
    assert abs(conv["bernoulli"].overall - conv["conditional"].overall) < 1e-12


@settings(max_examples=60)
@given(st.lists(st.integers(2, 30), min_size=1, max_size=4), st.floats(0, 1), st.floats(0, 1),
       st.sampled_from(["conditional", "unconditional", "bernoulli"]))
def test_total_is_direct_plus_indirect(sizes, f1, f2, weighting):
    w = TrialWorld(tuple(sizes), binary_rule(0.3, -0.1, -0.1, seed=2), {"p": f1, "q": f2})
    e = true_trial_effects(w, "p", "q", weighting)
    # undefined arms (nobody or everybody treated) propagate as NaN on both sides
    np.testing.assert_allclose(e.total, e.direct_psi + e.indirect, rtol=0, atol=1e-14)


def test_trial_simulation_deterministic_and_zero_world():
    w = TrialWorld((50,) * 6, binary_rule(0.1, -0.05, -0.05, seed=1), FRACTIONS)
    a = simulate_trial(w, "30", "50", (3, 3), 5)
    assert a == simulate_trial(w, "30", "50", (3, 3), 5)
    assert [g.n_treated for g in a.groups if g.assignment == "30"] == [15, 15, 15]
    zero = TrialWorld((50,) * 6, binary_rule(0.0, 0.0, 0.0), FRACTIONS)
    t = simulate_trial(zero, "30", "50", (3, 3), 5)
    for f in (indirect_effect, total_effect, overall_effect):
        assert f(t, "30", "50").point == 0
    assert direct_effect(t, "30").point == 0


def test_trial_simulation_needs_binary_outcomes():
    w = TrialWorld((10,) * 2, linear_rule(0.5, 0.1, 0.0), FRACTIONS)
    with pytest.raises(ValidationError, match="binary"):
        simulate_trial(w, "30", "50", (1, 1), 0)


def test_trial_world_validation():
    with pytest.raises(ValidationError):
        TrialWorld((1, 3), binary_rule(0.1, 0, 0), FRACTIONS)
    with pytest.raises(ValidationError):
        TrialWorld((3, 3), binary_rule(0.1, 0, 0), {"x": 1.5})


def test_estimators_unbiased_for_trial_world():
    w = TrialWorld((60,) * 8, binary_rule(0.15, -0.08, -0.1, seed=3), FRACTIONS)
    truth = true_trial_effects(w, "30", "50")
    est = []
    for r in range(300):
        t = simulate_trial(w, "30", "50", (4, 4), r)
        est.append([indirect_effect(t, "30", "50").point, total_effect(t, "30", "50").point,
                    overall_effect(t, "30", "50").point, direct_effect(t, "30").point])
    est = np.array(est)
    want = [truth.indirect, truth.total, truth.overall, truth.direct_phi]
    se = est.std(axis=0, ddof=1) / np.sqrt(len(est))
    assert np.all(np.abs(est.mean(axis=0) - want) < 3 * se + 1e-12)


# -- clusters ---------------------------------------------------------------

def test_cluster_simulation_ledger_and_determinism():
    w = ClusterWorld()
    cl, led = simulate_clusters(w, 20, 9)
    cl2, led2 = simulate_clusters(w, 20, 9)
    assert all(np.array_equal(a.y, b.y) for a, b in zip(cl, cl2))
    assert led.format() == led2.format()
    assert len(led.u) == 80
    u = led.u.reshape(20, 4)
    np.testing.assert_allclose(led.v.reshape(20, 4), u.sum(axis=1, keepdims=True) - u)


def test_unconfounded_world_has_zero_delta():
    w = ClusterWorld(kappa=0.0)
    assert w.delta_d.is_zero and w.delta_s.is_zero
    F = features_from_arrays(simulate_cluster_arrays(w, 4000, 1))
    res = fit(F, SelectionModel())
    assert abs(res.psi_d[0] - w.psi_d0) < 0.1 and abs(res.psi_s[0] - w.psi_s) < 0.1


def test_confounded_delta_matches_large_sample_gap():
    w = ClusterWorld()
    F = features_from_arrays(simulate_cluster_arrays(w, 20000, 2))
    naive = fit(F, SelectionModel())
    assert naive.psi_d[0] - w.psi_d0 == pytest.approx(w.delta_d.lam[0], abs=0.05)
    assert naive.psi_s[0] - w.psi_s == pytest.approx(w.delta_s.lam[0], abs=0.03)


def test_discrete_world_dual_computation():
    w = DiscreteConfounderWorld(size=4)
    spec = w.bias_spec()
    for zg, alt in (((1, 2), (0, 1)), ((1, 0), (0, 3)), ((0, 3), (0, 0))):
        b = bias_general(spec, zg, alt)
        assert b == pytest.approx(w.true_bias(zg, alt), abs=1e-12)
        du, dv = w.mean_differences(zg, alt)
        assert b == pytest.approx(bias_simple(BiasSpecSimple(w.lam, w.tau, du, dv)), abs=1e-12)


def test_discrete_world_nonadditive_shift():
    w = DiscreteConfounderWorld(size=3, kappa=0.8)
    with pytest.warns(UserWarning):
        b = bias_general(w.bias_spec(), (1, 1), (0, 1))
    assert b == pytest.approx(w.true_bias((1, 1), (0, 1)), abs=1e-12)


def test_independent_confounder_means_zero_bias():
    w = DiscreteConfounderWorld(size=3, b1=0.0)
    assert w.true_bias((1, 2), (0, 0)) == pytest.approx(0, abs=1e-14)
    assert bias_general(w.bias_spec(), (1, 2), (0, 0)) == pytest.approx(0, abs=1e-14)

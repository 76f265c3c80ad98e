"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line (shown even without
``-s``) before asserting.
"""
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from spillover.confounding import BiasSpecGeneral, BiasSpecSimple, bias_general, bias_simple, correct
from spillover.data import GroupSummary, TrialTable, summarize_households
from spillover.estimands import (decomposition_report, direct_effect, indirect_effect,
                                 overall_effect, total_effect)
from spillover.infectiousness import (InfectEffect, beta_adjust, beta_from_gamma, beta_quadratic,
                                      crude_effect, gamma_adjust, gamma_from_p_u, p_u_from_beta,
                                      p_u_from_gamma, theta_adjust, theta_from_p_u)
from spillover.oracle import (ClusterWorld, HouseholdWorld, TrialWorld, adjusted_p_u_se,
                              all_conventions, binary_rule, features_from_arrays, linear_rule,
                              simulate_cluster_arrays, simulate_households,
                              true_household_quantities, true_trial_effects, simulate_trial)
from spillover.selection import SelectionModel, fit, sensitivity_sweep


@pytest.fixture
def verdict(capsys):
    def report(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return report


def test_criterion_1_cholera_effects_via_cli(cholera_path, verdict):
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "spillover", "effects", "--data", str(cholera_path),
                           "--phi", "30", "--psi", "50", "--per-1000"], capture_output=True, text=True)
    elapsed = time.perf_counter() - start
    rows = [ln.split("\t") for ln in proc.stdout.splitlines() if ln and not ln.startswith("#")]
    got = {r[0]: r for r in rows[1:]}
    want = {"direct@30": (3.64, None), "direct@50": (1.30, None), "indirect(30,50)": (2.81, 3.079),
            "total(30,50)": (4.11, 0.672), "overall(30,50)": (2.37, 1.430)}
    ok = proc.returncode == 0 and elapsed < 1.0
    for name, (point, var) in want.items():
        ok &= abs(float(got[name][1]) - point) <= 0.01
        if var is not None:
            ok &= abs(float(got[name][2]) - var) <= 0.005
    verdict(1, ok, f"runtime {elapsed:.2f}s")


def _random_table(rng, equal_coverage):
    groups = []
    for label in ("p", "q"):
        k, m = rng.integers(1, 8), 8
        for i in range(rng.integers(2, 8)):
            if equal_coverage:
                n = m * int(rng.integers(1, 60))
                nt = n * k // m
            else:
                n = int(rng.integers(4, 500))
                nt = int(rng.integers(1, n))
            groups.append(GroupSummary(f"{label}{i}", label, nt, int(rng.integers(0, nt + 1)),
                                       n - nt, int(rng.integers(0, n - nt + 1))))
    return TrialTable(tuple(groups))


def test_criterion_2_decomposition_identities(cholera, verdict):
    rng = np.random.default_rng(2)
    r1 = max(abs(decomposition_report(_random_table(rng, False), "p", "q").residual_total)
             for _ in range(1000))
    r2 = max(abs(decomposition_report(_random_table(rng, True), "p", "q").residual_overall)
             for _ in range(1000))
    t1 = abs(decomposition_report(cholera, "30", "50").residual_overall) * 1000
    verdict(2, r1 < 1e-12 and r2 < 1e-12 and t1 < 0.01,
            f"max residual_total {r1:.2g}, equal-coverage residual_overall {r2:.2g}, "
            f"cholera residual_overall {t1:.2g} per 1000")


def test_criterion_3_bias_correction(verdict):
    a = correct(-8.86, -4.61, (-11.56, -6.16))
    b = correct(-8.18, -7.58, (-10.02, -6.34))
    got = [a.corrected, *a.ci_corrected, b.corrected, *b.ci_corrected]
    want = [-4.25, -6.95, -1.55, -0.60, -2.44, 1.24]
    err = max(abs(g - w) for g, w in zip(got, want))
    verdict(3, err <= 0.01 + 1e-12, f"max deviation {err:.3g}")


def test_criterion_4_parameterization_round_trip(verdict):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(1000):
        pi_d, p_u, gamma = rng.uniform(0.02, 0.98, 3)
        p0 = pi_d * p_u + (1 - pi_d) * gamma
        theta = theta_from_p_u(p0, p_u)
        g = gamma_from_p_u(p0, pi_d, p_u)
        beta = beta_from_gamma(p_u, g)
        back = (p0 + theta, p_u_from_gamma(p0, pi_d, g), p_u_from_beta(p0, pi_d, beta))
        worst = max(worst, *(abs(x - p_u) for x in back))
    zero_exact = all(p_u_from_beta(p0, d, 0.0) == p0 for p0, d in rng.uniform(0.01, 0.99, (200, 2)))
    root = p_u_from_beta(0.3, 0.6, math.log(2))
    a, b, c = beta_quadratic(0.3, 0.4, math.log(2))
    resid = abs(a * root**2 + b * root + c)
    verdict(4, worst < 1e-10 and zero_exact and abs(root - 0.3558) < 1e-4 and resid < 1e-10,
            f"max round-trip error {worst:.2g}, worked root {root:.6f}, residual {resid:.2g}")


def test_criterion_5_household_oracle(verdict):
    rng = np.random.default_rng(5)
    n = 10**6
    worst_exact, worst_z, conservative = 0.0, 0.0, True
    for i in range(20):
        doomed, protected = rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.4)
        qv, qu, qp = rng.uniform(0.1, 0.8, 3)
        world = HouseholdWorld(doomed, protected, 1 - doomed - protected, qv, qu, qp)
        t = true_household_quantities(world)
        adjusters = {
            "theta": lambda s: theta_adjust(s, t.theta).p_u,
            "gamma": lambda s: gamma_adjust(s, t.gamma).p_u,
            "beta": lambda s: beta_adjust(s, t.beta).p_u,
        }
        sample = summarize_households(simulate_households(world, n, seed=i))
        for adjust in adjusters.values():
            worst_exact = max(worst_exact, abs(adjust(t.study()) - t.p_u))
            z = abs(adjust(sample) - t.p_u) / adjusted_p_u_se(world, n, adjust)
            worst_z = max(worst_z, z)
        # crude contrast is conservative when protected-stratum secondary risk is no higher
        lo, hi = sorted((qu, qp))
        w2 = HouseholdWorld(doomed, protected, 1 - doomed - protected, qv, hi, lo)
        t2 = true_household_quantities(w2)
        crude, causal = crude_effect(t2.study()), InfectEffect(t2.p_v, t2.p_u)
        conservative &= (w2.protected_risk_not_higher
                         and crude.risk_difference >= causal.risk_difference
                         and crude.risk_ratio >= causal.risk_ratio
                         and crude.odds_ratio >= causal.odds_ratio
                         and crude.efficacy <= causal.efficacy)
    verdict(5, worst_exact < 1e-10 and worst_z < 3 and conservative,
            f"max analytic error {worst_exact:.2g}, max |z| {worst_z:.2f}, conservative {conservative}")


def test_criterion_6_general_equals_simple(verdict):
    rng = np.random.default_rng(6)
    worst_eq, worst_ref = 0.0, 0.0
    for _ in range(1000):
        k = int(rng.integers(2, 6))
        support = tuple(map(tuple, rng.normal(size=(k, 2)).round(3)))
        if len(set(support)) < k:
            continue
        lam, tau = rng.normal(size=2)
        ref = support[int(rng.integers(k))]
        dists = {key: rng.dirichlet(np.ones(k)) for key in ("a", "b", "m")}
        pairs = {(1.0, 2.0): dists["a"], (0.0, 1.0): dists["b"]}
        spec = BiasSpecGeneral(
            support,
            lambda z, g, u, v, ref=ref, lam=lam, tau=tau: lam * (u - ref[0]) + tau * (v - ref[1]),
            lambda z, g, pairs=pairs: pairs[(z, g)], dists["m"], ref)
        general = bias_general(spec, (1.0, 2.0), (0.0, 1.0))
        pts = np.array(support)
        du, dv = pts.T @ dists["a"] - pts.T @ dists["b"]
        worst_eq = max(worst_eq, abs(general - bias_simple(BiasSpecSimple(lam, tau, du, dv))))
        other = spec.with_reference(support[int(rng.integers(k))])
        worst_ref = max(worst_ref, abs(bias_general(other, (1.0, 2.0), (0.0, 1.0)) - general))
    verdict(6, worst_eq < 1e-12 and worst_ref < 1e-12,
            f"max |general - simple| {worst_eq:.2g}, max reference shift {worst_ref:.2g}")


@pytest.mark.slow
def test_criterion_7_gee_validity(verdict):
    world = ClusterWorld()
    truth = np.concatenate([world.psi_d, world.psi_s_vec])
    oracle_model = SelectionModel().with_delta(world.delta_d.lam, world.delta_s.lam)
    ignorable = SelectionModel()
    start = time.perf_counter()
    true_fits, null_fits, bit_equal = [], [], True
    for rep in range(500):
        F = features_from_arrays(simulate_cluster_arrays(world, 200, rep))
        a, b = fit(F, oracle_model), fit(F, ignorable)
        true_fits.append(np.concatenate([a.psi_d, a.psi_s]))
        null_fits.append(np.concatenate([b.psi_d, b.psi_s]))
        if rep < 5:
            row = sensitivity_sweep(F, ignorable, [((0.0,), (0.0,)), ((0.6,), (0.25,))])[0]
            bit_equal &= np.array_equal(row.result.params.vector, b.params.vector)
    elapsed = time.perf_counter() - start
    true_fits, null_fits = np.array(true_fits), np.array(null_fits)
    se = true_fits.std(axis=0, ddof=1) / np.sqrt(len(true_fits))
    z_true = np.abs(true_fits.mean(axis=0) - truth) / se
    # delta_d(1, g, l, h) is constant in g, so it shifts psi_d[z] only
    bias_want = np.array([world.delta_d.lam[0], 0.0])
    se0 = null_fits[:, :2].std(axis=0, ddof=1) / np.sqrt(len(null_fits))
    z_null = np.abs(null_fits[:, :2].mean(axis=0) - world.psi_d - bias_want) / se0
    ok = z_true.max() < 3 and z_null.max() < 3 and bit_equal and elapsed < 300
    verdict(7, ok, f"max |z| true delta {z_true.max():.2f}, null-delta bias |z| {z_null.max():.2f}, "
                   f"zero row identical {bit_equal}, runtime {elapsed:.1f}s")


def test_criterion_8_trial_estimators(verdict):
    world = TrialWorld((60,) * 8, binary_rule(0.15, -0.08, -0.1, seed=3), {"30": 0.3, "50": 0.5})
    truth = true_trial_effects(world, "30", "50")
    est = []
    for r in range(1000):
        t = simulate_trial(world, "30", "50", (4, 4), r)
        est.append([direct_effect(t, "30").point, direct_effect(t, "50").point,
                    indirect_effect(t, "30", "50").point, total_effect(t, "30", "50").point,
                    overall_effect(t, "30", "50").point])
    est = np.array(est)
    want = np.array([truth.direct_phi, truth.direct_psi, truth.indirect, truth.total, truth.overall])
    z = np.abs(est.mean(axis=0) - want) / (est.std(axis=0, ddof=1) / np.sqrt(len(est)))

    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(200):
        sizes = tuple(int(s) for s in rng.integers(2, 40, rng.integers(1, 5)))
        a, b, c = rng.uniform(-1, 1, 3)
        d = rng.uniform(-0.1, 0.1)
        f = {"p": rng.uniform(), "q": rng.uniform()}
        conv = all_conventions(TrialWorld(sizes, linear_rule(a, b, c, interaction=d, spread=0.5), f),
                               "p", "q")
        bern, unc = conv["bernoulli"].as_dict(), conv["unconditional"].as_dict()
        worst = max(worst, *(abs(bern[k] - unc[k]) for k in bern if not math.isnan(unc[k])))
        additive = all_conventions(TrialWorld(sizes, linear_rule(a, b, c, spread=0.5), f), "p", "q")
        worst = max(worst, abs(additive["bernoulli"].overall - additive["conditional"].overall))
    verdict(8, z.max() < 3 and worst < 1e-12,
            f"max estimator |z| {z.max():.2f}, max mixed-vs-Bernoulli gap {worst:.2g}")

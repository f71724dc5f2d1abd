"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with ``pytest -s tests/test_acceptance.py`` to see them).

Criteria covered:
  1  coefficient recovery (noiseless exact, 2%-noise RMSE, runtime)
  2  market consistency of every fitted model
  3  pricing solver vs grid oracle on small instances
  4  multiple-pricing dominance and benchmark improvement
  5  qualitative price-shape ordering (SCS > SC > IS variance)
  6  clustering indices vs brute force; model selection on 3 Gaussians
  7  adaptive segmentation recovers archetypes (both merge strategies)
  8  constraint feasibility of emitted pricing solutions
  9  QP solver vs active-set enumeration; Lloyd monotonicity
"""

import time

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from tariffkit.clustering import LloydKMeans, davies_bouldin, select_model, silhouette
from tariffkit.demand import check_market_consistency, fit_demand_model, history_from_readings
from tariffkit.optim import QpProblem, grid_oracle, maximize_pricing, solve_qp
from tariffkit.pricing import (benchmark, build_problem, evaluate_profit,
                               solve_multiple, solve_uniform)
from tariffkit.segmentation import SegmentationConfig, run_cycle
from tariffkit.synthgen import (ArchetypeSpec, default_archetypes,
                                default_cost_shape, generate_dynamic_tariff,
                                generate_population, generate_readings)

from .oracles import brute_davies_bouldin, brute_silhouette, qp_enum_oracle
from .test_optim import random_pricing_nlp


def report(number: int, name: str, ok: bool, detail: str = "") -> None:
    print(f"\nACCEPTANCE {number} {name}: {'PASS' if ok else 'FAIL'} {detail}")


@pytest.fixture(scope="module")
def recovery_fits(archetypes, noiseless_archetypes):
    """Criterion-1 artifacts: noiseless and 2%-noise fits at H=24, D=72."""
    tariffs = {s.name: generate_dynamic_tariff(s.name, days=72, seed=101)
               for s in archetypes}
    out = {"noiseless": {}, "noisy": {}, "runtimes": [], "models": []}

    truth0, customers0 = generate_population(noiseless_archetypes, 50, seed=102)
    rs0 = generate_readings(truth0, tariffs)
    for name in truth0.models:
        members = [c for c in customers0 if truth0.labels[c] == name]
        hist = history_from_readings(rs0, tariffs[name], members)
        start = time.monotonic()
        fit = fit_demand_model(hist, forgetting=1.0, group=name)
        out["runtimes"].append(time.monotonic() - start)
        truth_model = truth0.models[name]
        err = max(np.abs(fit.alpha - truth_model.alpha).max(),
                  np.abs(fit.beta - truth_model.beta).max())
        out["noiseless"][name] = err
        out["models"].append(fit)

    truth1, customers1 = generate_population(archetypes, 1000, seed=103)
    rs1 = generate_readings(truth1, tariffs)
    for name in truth1.models:
        members = [c for c in customers1 if truth1.labels[c] == name]
        hist = history_from_readings(rs1, tariffs[name], members)
        start = time.monotonic()
        fit = fit_demand_model(hist, forgetting=1.0, group=name)
        out["runtimes"].append(time.monotonic() - start)
        truth_model = truth1.models[name]
        vec_fit = np.concatenate([fit.alpha, fit.beta.ravel()])
        vec_true = np.concatenate([truth_model.alpha, truth_model.beta.ravel()])
        rmse = float(np.sqrt(((vec_fit - vec_true) ** 2).mean()))
        magnitude = float(np.sqrt((vec_true ** 2).mean()))
        out["noisy"][name] = rmse / magnitude
        out["models"].append(fit)
    return out


@pytest.fixture(scope="module")
def fixture_problem(archetypes):
    """The shipped IS/SC/SCS population priced at the reference settings."""
    truth, customers = generate_population(archetypes, 1000, seed=104)
    tariffs = {s.name: generate_dynamic_tariff(s.name, days=72, seed=105)
               for s in archetypes}
    readings = generate_readings(truth, tariffs)
    models = []
    for name in ("IS", "SC", "SCS"):
        members = [c for c in customers if truth.labels[c] == name]
        hist = history_from_readings(readings, tariffs[name], members)
        models.append(fit_demand_model(hist, forgetting=1.0, group=name))
    cost = default_cost_shape()
    problem = build_problem(models, cost, p_min="cost", p_max=25.0, flat_price=10.0)
    return problem, models, cost


def test_criterion_1_coefficient_recovery(recovery_fits):
    worst_exact = max(recovery_fits["noiseless"].values())
    worst_rmse = max(recovery_fits["noisy"].values())
    worst_time = max(recovery_fits["runtimes"])
    ok = worst_exact <= 1e-6 and worst_rmse <= 0.05 and worst_time <= 60.0
    report(1, "coefficient recovery", ok,
           f"(noiseless max err {worst_exact:.2e}, noisy rmse "
           f"{worst_rmse:.3%}, slowest fit {worst_time:.1f}s)")
    assert worst_exact <= 1e-6
    assert worst_rmse <= 0.05
    assert worst_time <= 60.0


def test_criterion_2_market_consistency(recovery_fits, fixture_problem):
    _, pipeline_models, _ = fixture_problem
    models = recovery_fits["models"] + pipeline_models
    violations = 0
    for i, model in enumerate(models):
        rep = check_market_consistency(model, pairs=1000, seed=200 + i, tol=1e-9)
        violations += len(rep.violations)
    ok = violations == 0
    report(2, "market consistency", ok,
           f"({len(models)} fitted models x 1000 price pairs, "
           f"{violations} violations)")
    assert violations == 0


def test_criterion_3_pricing_oracle_equivalence():
    start = time.monotonic()
    rng = np.random.default_rng(300)
    worst = 0.0
    for trial in range(50):
        with_cap = trial % 2 == 0
        with_fp = trial % 4 < 2
        p = random_pricing_nlp(rng, h=2, with_fp=with_fp, with_cap=with_cap)
        sol = maximize_pricing(p, starts=32, seed=trial)
        grid = grid_oracle(p, 0.01)
        gap = (grid.objective - sol.objective) / max(1.0, abs(grid.objective))
        worst = max(worst, gap)
    elapsed = time.monotonic() - start
    ok = worst <= 1e-3 and elapsed <= 300.0
    report(3, "pricing oracle equivalence", ok,
           f"(50 instances, worst relative gap {worst:.2e}, {elapsed:.0f}s)")
    assert worst <= 1e-3
    assert elapsed <= 300.0


def test_criterion_4_dominance_and_benchmark(fixture_problem):
    rng = np.random.default_rng(400)
    h = 6
    failures = 0
    for trial in range(20):
        g = int(rng.integers(2, 4))
        models = []
        for gi in range(g):
            beta = rng.uniform(0, 0.2, (h, h))
            np.fill_diagonal(beta, 0.0)
            np.fill_diagonal(beta, -(beta.sum(axis=0) + rng.uniform(0.3, 1.2, h)))
            alpha = rng.uniform(15, 40, h) - beta @ np.full(h, 10.0)
            from tariffkit.demand import DemandModel
            models.append(DemandModel(group=f"g{gi}", horizon=h, alpha=alpha,
                                      beta=beta))
        cost = rng.uniform(4, 8, h)
        problem = build_problem(models, cost, p_min="cost", p_max=25.0,
                                flat_price=10.0)
        uni = solve_uniform(problem, seed=trial, starts=8)
        multi = solve_multiple(problem, seed=trial, starts=8,
                               extra_starts=[uni.prices])
        uni_profit = evaluate_profit(uni.prices, models, cost)
        if multi.profit < uni_profit - 1e-6:
            failures += 1

    problem, _, _ = fixture_problem
    rep = benchmark(problem, runs=10, seed=401, starts=8)
    ok = failures == 0 and rep.mean_improvement > 0
    report(4, "multiple-pricing dominance", ok,
           f"(20 random instances, {failures} dominance failures; fixture "
           f"mean improvement {rep.mean_improvement:.2%} over 10 runs)")
    assert failures == 0
    assert rep.mean_improvement > 0
    assert all(i >= -1e-6 for i in rep.improvements)


def test_criterion_5_price_shape_ordering(fixture_problem):
    problem, models, _ = fixture_problem
    sol = solve_multiple(problem, seed=500, starts=16)
    variances = {m.group: float(sol.prices[i].var())
                 for i, m in enumerate(models)}
    ok = variances["SCS"] > variances["SC"] > variances["IS"]
    report(5, "price-shape ordering", ok,
           "(hourly price variance " +
           " > ".join(f"{k}={variances[k]:.2f}" for k in ("SCS", "SC", "IS")) + ")")
    assert variances["SCS"] > variances["SC"] > variances["IS"]


def test_criterion_6_clustering_correctness():
    rng = np.random.default_rng(600)
    worst_gap = 0.0
    for _ in range(100):
        n = int(rng.integers(10, 40))
        k = int(rng.integers(2, 5))
        x = rng.uniform(size=(n, int(rng.integers(2, 5))))
        labels = rng.integers(0, k, size=n)
        labels[:k] = np.arange(k)
        worst_gap = max(worst_gap,
                        abs(silhouette(x, labels) - brute_silhouette(x, labels)),
                        abs(davies_bouldin(x, labels) - brute_davies_bouldin(x, labels)))

    hits = 0
    for trial in range(100):
        trial_rng = np.random.default_rng(6000 + trial)
        centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        x = np.vstack([trial_rng.normal(c, 1.0, size=(25, 2)) for c in centers])
        truth = np.repeat(np.arange(3), 25)
        winner = select_model(x, (2, 8), seed=trial)
        if winner.k == 3 and adjusted_rand_score(truth, winner.assignments) >= 0.95:
            hits += 1
    ok = worst_gap <= 1e-12 and hits >= 95
    report(6, "clustering correctness", ok,
           f"(index gap {worst_gap:.1e} over 100 datasets; k=3 recovered in "
           f"{hits}/100 trials)")
    assert worst_gap <= 1e-12
    assert hits >= 95


def test_criterion_7_segmentation_recovery(archetypes):
    truth, customers = generate_population(archetypes, n_per_type=200, seed=700)
    assignment = {c: ("TA" if i % 2 == 0 else "TB")
                  for i, c in enumerate(customers)}
    tariffs = {"TA": generate_dynamic_tariff("TA", days=60, seed=701),
               "TB": generate_dynamic_tariff("TB", days=60, seed=701)}
    readings = generate_readings(truth, tariffs, seed=702,
                                 tariff_assignment=assignment)
    labels_true = [truth.labels[c] for c in customers]
    aris = {}
    for strategy in ("centroid", "model"):
        cfg = SegmentationConfig(k_range=(2, 6), g_final=3, merge_strategy=strategy,
                                 attribute_mode="monthly-average", seed=703,
                                 forgetting=1.0)
        result = run_cycle(readings, tariffs, cfg, initial_groups=assignment)
        aris[strategy] = adjusted_rand_score(
            labels_true, [result.membership[c] for c in customers])
    ok = all(a >= 0.9 for a in aris.values())
    report(7, "segmentation recovery", ok,
           f"(ARI centroid {aris['centroid']:.3f}, model {aris['model']:.3f})")
    assert aris["centroid"] >= 0.9
    assert aris["model"] >= 0.9


def test_criterion_8_constraint_feasibility(fixture_problem):
    problem, models, cost = fixture_problem
    capped = build_problem(models, cost, p_min="cost", p_max=25.0,
                           flat_price=10.0, revenue_cap=3_000_000.0)
    solutions = [
        solve_multiple(problem, seed=800, starts=8),
        solve_uniform(problem, seed=800, starts=8),
        solve_multiple(capped, seed=801, starts=8),
        solve_uniform(capped, seed=801, starts=8),
    ]
    worst_bound = worst_fp = worst_cap = 0.0
    for sol, prob in zip(solutions, (problem, problem, capped, capped)):
        worst_bound = max(worst_bound,
                          float((prob.p_min - sol.prices).max()),
                          float((sol.prices - prob.p_max).max()))
        worst_fp = max(worst_fp, float(np.abs(sol.prices.mean(axis=1)
                                              - prob.flat_price).max()))
        if prob.revenue_cap is not None:
            worst_cap = max(worst_cap, sol.revenue - prob.revenue_cap)
    ok = worst_bound <= 1e-8 and worst_fp <= 1e-8 and worst_cap <= 1e-6
    report(8, "constraint feasibility", ok,
           f"(bound excess {worst_bound:.1e}, FP gap {worst_fp:.1e}, "
           f"cap excess {worst_cap:.1e}; violations also raise in-library)")
    assert worst_bound <= 1e-8
    assert worst_fp <= 1e-8
    assert worst_cap <= 1e-6


def test_criterion_9_solver_unit_acceptance():
    rng = np.random.default_rng(900)
    worst = 0.0
    for trial in range(200):
        n = int(rng.integers(2, 7))
        m_mat = rng.normal(size=(n, n))
        quad = m_mat @ m_mat.T + 0.3 * np.eye(n)
        lin = 2 * rng.normal(size=n)
        xbar = rng.normal(size=n)
        m = int(rng.integers(1, 7))
        a = rng.normal(size=(m, n))
        b = a @ xbar + rng.uniform(0.05, 1.0, m)
        kw = {}
        if trial % 3 == 0:
            a_eq = rng.normal(size=(1, n))
            kw = dict(a_eq=a_eq, b_eq=a_eq @ xbar)
        problem = QpProblem(quad=quad, lin=lin, a_in=a, b_in=b, **kw)
        sol = solve_qp(problem)
        value, _ = qp_enum_oracle(problem)
        worst = max(worst, abs(sol.objective - value) / max(1.0, abs(value)),
                    sol.kkt_residual)

    # Lloyd monotonicity is asserted inside every k-means iteration; verify
    # the recorded path on a fresh fit as a spot check of that mechanism
    x = np.random.default_rng(901).normal(size=(80, 5))
    est = LloydKMeans(n_clusters=5, seed=0).fit(x)
    path = np.array(est.objective_path_)
    monotone = bool(np.all(np.diff(path) <= 1e-12 * np.maximum(path[:-1], 1.0)))
    ok = worst <= 1e-6 and monotone
    report(9, "solver unit acceptance", ok,
           f"(200 QPs, worst deviation {worst:.1e}; Lloyd path monotone: {monotone})")
    assert worst <= 1e-6
    assert monotone

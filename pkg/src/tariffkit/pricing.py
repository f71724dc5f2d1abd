"""Retailer profit maximization over per-group tariffs.

Builds the joint pricing problem from per-group demand models, a wholesale
cost vector, price bounds, an optional revenue cap, and an optional required
average price per group, then solves the multiple-pricing and uniform-pricing
variants. Without a revenue cap the groups decouple and are solved
independently; the cap couples them into one joint problem. All money is in
cents, energy in kWh, prices in cents/kWh.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import as_float_array
from .demand import DemandModel, aggregate_models
from .errors import InfeasibleError, SolverError
from .optim import NlpProblem, Solution, maximize_pricing

FORMAT_VERSION = 1
FP_TOL = 1e-8
CAP_TOL = 1e-6
BOUND_TOL = 1e-8


@dataclass
class PricingProblem:
    """Validated inputs of the profit maximization."""

    models: list[DemandModel]
    cost: np.ndarray
    p_min: np.ndarray
    p_max: np.ndarray
    revenue_cap: float | None = None
    flat_price: float | None = None

    def __post_init__(self):
        if not self.models:
            raise ValueError("at least one demand model is required")
        h = self.models[0].horizon
        for m in self.models:
            if m.horizon != h:
                raise ValueError("all models must share the same horizon")
        g = len(self.models)
        self.cost = as_float_array(self.cost, "cost", ndim=1)
        if self.cost.shape != (h,):
            raise ValueError(f"cost must have length {h}")
        if np.any(self.cost < 0):
            raise ValueError("cost must be >= 0")
        self.p_min = as_float_array(self.p_min, "p_min", ndim=2)
        self.p_max = as_float_array(self.p_max, "p_max", ndim=2)
        if self.p_min.shape != (g, h) or self.p_max.shape != (g, h):
            raise ValueError(f"bound matrices must be {g} x {h}")
        if np.any(self.p_min > self.p_max):
            raise ValueError("p_min exceeds p_max somewhere")
        if np.any(self.p_min <= 0):
            raise ValueError("prices must stay positive; p_min must be > 0")
        if self.flat_price is not None:
            fp = float(self.flat_price)
            lo = self.p_min.mean(axis=1)
            hi = self.p_max.mean(axis=1)
            for gi in range(g):
                if not lo[gi] - FP_TOL <= fp <= hi[gi] + FP_TOL:
                    raise InfeasibleError(
                        f"average price {fp} is outside group {gi}'s attainable "
                        f"mean range [{lo[gi]:.4f}, {hi[gi]:.4f}]")
        if self.revenue_cap is not None and self.revenue_cap <= 0:
            raise ValueError("revenue cap must be positive")

    @property
    def n_groups(self) -> int:
        return len(self.models)

    @property
    def horizon(self) -> int:
        return self.models[0].horizon


@dataclass
class PricingSolution:
    """Prices, realized demand, and profit for one solved variant."""

    prices: np.ndarray
    per_group_demand: np.ndarray
    profit: float
    revenue: float
    status: str
    variant: str
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "variant": self.variant,
            "prices": self.prices.tolist(),
            "per_group_demand": self.per_group_demand.tolist(),
            "profit": float(self.profit),
            "revenue": float(self.revenue),
            "status": self.status,
            "diagnostics": self.diagnostics,
        }


def build_problem(models: list[DemandModel], cost, p_min="cost", p_max=25.0,
                  flat_price: float | None = None,
                  revenue_cap: float | None = None) -> PricingProblem:
    """Assemble and validate a PricingProblem.

    ``p_min``/``p_max`` accept a scalar, the string ``"cost"`` (per-hour
    wholesale cost), a length-H vector, or a full G x H matrix.
    """
    cost = as_float_array(cost, "cost", ndim=1)
    g = len(models)
    h = cost.shape[0]

    def expand(spec, name):
        if isinstance(spec, str):
            if spec != "cost":
                raise ValueError(f"{name}: unknown specifier {spec!r}")
            return np.tile(cost, (g, 1))
        arr = np.asarray(spec, dtype=float)
        if arr.ndim == 0:
            return np.full((g, h), float(arr))
        if arr.shape == (h,):
            return np.tile(arr, (g, 1))
        if arr.shape == (g, h):
            return arr.copy()
        raise ValueError(f"{name}: cannot broadcast shape {arr.shape} to ({g}, {h})")

    return PricingProblem(models=list(models), cost=cost,
                          p_min=expand(p_min, "p_min"), p_max=expand(p_max, "p_max"),
                          revenue_cap=revenue_cap, flat_price=flat_price)


def evaluate_profit(prices, models: list[DemandModel], cost) -> float:
    """Profit sum_g sum_h (p[g,h] - c[h]) * R_h^g at the given prices."""
    prices = as_float_array(prices, "prices", ndim=2)
    cost = as_float_array(cost, "cost", ndim=1)
    if prices.shape != (len(models), cost.shape[0]):
        raise ValueError(f"prices must be {len(models)} x {cost.shape[0]}")
    total = 0.0
    for gi, m in enumerate(models):
        demand = m.predict(prices[gi])
        total += float((prices[gi] - cost) @ demand)
    return total


def evaluate_revenue(prices, models: list[DemandModel]) -> float:
    prices = as_float_array(prices, "prices", ndim=2)
    return float(sum(prices[gi] @ m.predict(prices[gi])
                     for gi, m in enumerate(models)))


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------


def _group_nlp(models, cost, p_min, p_max, flat_price, revenue_cap) -> NlpProblem:
    """Joint NLP over the concatenated per-group price blocks."""
    g = len(models)
    h = cost.shape[0]
    n = g * h
    quad = np.zeros((n, n))
    q_lin = np.zeros(n)
    lin = np.zeros(n)
    const = 0.0
    for gi, m in enumerate(models):
        sl = slice(gi * h, (gi + 1) * h)
        quad[sl, sl] = m.beta
        lin[sl.start:sl.stop] = m.alpha - m.beta.T @ cost
        q_lin[sl.start:sl.stop] = m.alpha
        const -= float(cost @ m.alpha)
    kw = dict(quad=quad, lin=lin, const=const,
              lb=p_min.ravel(), ub=p_max.ravel())
    if flat_price is not None:
        a_eq = np.zeros((g, n))
        for gi in range(g):
            a_eq[gi, gi * h:(gi + 1) * h] = 1.0 / h
        kw["a_eq"] = a_eq
        kw["b_eq"] = np.full(g, float(flat_price))
    if revenue_cap is not None:
        kw["q_quad"] = quad.copy()
        kw["q_lin"] = q_lin
        kw["q_rhs"] = float(revenue_cap)
    return NlpProblem(**kw)


def _check_feasible(p: PricingProblem, prices: np.ndarray, revenue: float) -> None:
    if np.any(prices < p.p_min - BOUND_TOL) or np.any(prices > p.p_max + BOUND_TOL):
        raise SolverError("solver returned prices outside the bounds")
    if p.flat_price is not None:
        gap = np.abs(prices.mean(axis=1) - p.flat_price).max()
        if gap > FP_TOL:
            raise SolverError(f"average-price constraint violated by {gap:.2e}")
    if p.revenue_cap is not None and revenue > p.revenue_cap + CAP_TOL:
        raise SolverError(f"revenue cap exceeded by {revenue - p.revenue_cap:.2e}")


def _finalize(p: PricingProblem, models, prices: np.ndarray, status: str,
              variant: str, diagnostics: dict) -> PricingSolution:
    demand = np.vstack([m.predict(prices[gi]) for gi, m in enumerate(models)])
    profit = evaluate_profit(prices, models, p.cost)
    revenue = evaluate_revenue(prices, models)
    _check_feasible(p, prices, revenue)
    if demand.min() < -1e-9:
        diagnostics = dict(diagnostics)
        diagnostics["negative_demand_hours"] = int((demand < -1e-9).sum())
        warnings.warn(
            f"{variant} pricing drives predicted demand negative at "
            f"{diagnostics['negative_demand_hours']} (group, hour) cells")
    return PricingSolution(prices=prices, per_group_demand=demand, profit=profit,
                           revenue=revenue, status=status, variant=variant,
                           diagnostics=diagnostics)


def solve_multiple(p: PricingProblem, seed: int = 0, starts: int = 32,
                   extra_starts=None) -> PricingSolution:
    """One price vector per group.

    Groups couple only through the revenue cap: with a cap set the joint
    problem is solved, otherwise each group is optimized independently with a
    derived sub-seed. ``extra_starts`` (iterable of G x H matrices) seeds the
    local search, e.g. with a known-feasible uniform solution.
    """
    g, h = p.n_groups, p.horizon
    extras = [as_float_array(e, "extra start", ndim=2) for e in (extra_starts or [])]
    if p.revenue_cap is not None:
        nlp = _group_nlp(p.models, p.cost, p.p_min, p.p_max, p.flat_price,
                         p.revenue_cap)
        sol = maximize_pricing(nlp, starts=starts,
                               seed=int(np.random.SeedSequence([seed, 0]).generate_state(1)[0]),
                               extra_starts=[e.ravel() for e in extras] or None)
        prices = sol.point.reshape(g, h)
        diag = {"status": sol.status, "kkt_residual": sol.kkt_residual,
                "iterations": sol.iterations, "starts_used": sol.starts_used}
        return _finalize(p, p.models, prices, sol.status, "multiple", diag)

    prices = np.zeros((g, h))
    statuses = []
    diag: dict = {"groups": []}
    for gi, model in enumerate(p.models):
        nlp = _group_nlp([model], p.cost, p.p_min[gi:gi + 1], p.p_max[gi:gi + 1],
                         p.flat_price, None)
        child = int(np.random.SeedSequence([seed, gi]).generate_state(1)[0])
        sol = maximize_pricing(nlp, starts=starts, seed=child,
                               extra_starts=[e[gi] for e in extras] or None)
        prices[gi] = sol.point
        statuses.append(sol.status)
        diag["groups"].append({"group": model.group, "status": sol.status,
                               "kkt_residual": sol.kkt_residual,
                               "iterations": sol.iterations})
    status = "optimal" if all(s == "optimal" for s in statuses) else "local-optimal"
    return _finalize(p, p.models, prices, status, "multiple", diag)


def solve_uniform(p: PricingProblem, seed: int = 0, starts: int = 32) -> PricingSolution:
    """One shared price vector, optimized against the aggregate demand model.

    Bounds are the per-hour intersection of the group bounds; the flat-price
    and revenue-cap constraints carry over unchanged.
    """
    agg = aggregate_models(p.models) if len(p.models) > 1 else p.models[0]
    p_min = p.p_min.max(axis=0)
    p_max = p.p_max.min(axis=0)
    if np.any(p_min > p_max):
        raise InfeasibleError("group bounds have empty intersection for uniform pricing")
    cap = p.revenue_cap
    nlp = _group_nlp([agg], p.cost, p_min[None, :], p_max[None, :], p.flat_price, cap)
    child = int(np.random.SeedSequence([seed, 0]).generate_state(1)[0])
    sol = maximize_pricing(nlp, starts=starts, seed=child)
    prices = np.tile(sol.point, (p.n_groups, 1))
    diag = {"status": sol.status, "kkt_residual": sol.kkt_residual,
            "iterations": sol.iterations, "starts_used": sol.starts_used}
    return _finalize(p, p.models, prices, sol.status, "uniform", diag)


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------


@dataclass
class BenchmarkReport:
    runs: int
    seed: int
    profits_multiple: list[float]
    profits_uniform: list[float]
    improvements: list[float]
    mean_improvement: float
    configuration: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "runs": self.runs,
            "seed": self.seed,
            "profits_multiple": self.profits_multiple,
            "profits_uniform": self.profits_uniform,
            "improvements": self.improvements,
            "mean_improvement": self.mean_improvement,
            "configuration": self.configuration,
        }


def benchmark(p: PricingProblem, runs: int, cost_generator=None, seed: int = 0,
              starts: int = 32, cost_floor: bool = True) -> BenchmarkReport:
    """Re-solve both variants under ``runs`` simulated wholesale-cost draws.

    ``cost_generator(run_index, rng)`` returns a length-H cost vector; the
    default perturbs the shipped cost shape with 10% lognormal noise. With
    ``cost_floor`` the per-hour minimum price follows the drawn cost. The
    multiple solve is warm-started from the uniform solution, so its profit
    can never fall below uniform; that dominance is asserted per run.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if cost_generator is None:
        from .synthgen import default_cost_shape, generate_costs

        shape = default_cost_shape()
        if shape.shape[0] != p.horizon:
            raise ValueError("default cost shape does not match the horizon; "
                             "pass an explicit cost_generator")

        def cost_generator(run, rng):
            return generate_costs(1, shape, noise_sd=0.10,
                                  seed=int(rng.integers(2 ** 63)))[0]

    profits_m: list[float] = []
    profits_u: list[float] = []
    improvements: list[float] = []
    for run in range(runs):
        rng = np.random.default_rng([seed, run])
        cost = as_float_array(cost_generator(run, rng), "cost", ndim=1)
        p_min = np.tile(cost, (p.n_groups, 1)) if cost_floor else p.p_min
        run_problem = PricingProblem(models=p.models, cost=cost, p_min=p_min,
                                     p_max=p.p_max, revenue_cap=p.revenue_cap,
                                     flat_price=p.flat_price)
        child = int(np.random.SeedSequence([seed, run, 1]).generate_state(1)[0])
        uni = solve_uniform(run_problem, seed=child, starts=starts)
        multi = solve_multiple(run_problem, seed=child, starts=starts,
                               extra_starts=[uni.prices])
        if multi.profit < uni.profit - 1e-6 * max(1.0, abs(uni.profit)):
            raise SolverError(
                f"run {run}: multiple profit {multi.profit} fell below "
                f"uniform profit {uni.profit}")
        profits_m.append(multi.profit)
        profits_u.append(uni.profit)
        improvements.append((multi.profit - uni.profit) / abs(uni.profit)
                            if uni.profit != 0 else 0.0)
    return BenchmarkReport(
        runs=runs, seed=seed, profits_multiple=profits_m, profits_uniform=profits_u,
        improvements=improvements,
        mean_improvement=float(np.mean(improvements)),
        configuration={"cost_floor": cost_floor, "starts": starts,
                       "flat_price": p.flat_price, "revenue_cap": p.revenue_cap})


def write_solution_csv(solution: PricingSolution, cost, path,
                       group_names: list[str] | None = None) -> None:
    """Companion CSV for plotting: hour,group,price_cents,demand_kwh,cost_cents."""
    cost = as_float_array(cost, "cost", ndim=1)
    g, h = solution.prices.shape
    names = group_names or [str(i) for i in range(g)]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["hour", "group", "price_cents", "demand_kwh", "cost_cents"])
        for gi in range(g):
            for hh in range(h):
                writer.writerow([hh, names[gi],
                                 repr(float(solution.prices[gi, hh])),
                                 repr(float(solution.per_group_demand[gi, hh])),
                                 repr(float(cost[hh]))])

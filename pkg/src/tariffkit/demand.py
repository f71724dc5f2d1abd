"""Per-group linear price-demand models with market-consistency constraints.

The demand of group g at hour h is affine in the day's price vector:
``R_h(p) = alpha[h] + sum_l beta[h, l] * p[l]``. Self-price coefficients
(diagonal of beta) are non-positive, cross-price coefficients non-negative,
and every column sum of beta is non-positive, which makes total demand
non-increasing whenever prices rise. Fitting minimizes an exponentially
weighted (forgetting factor) sum of squared residuals subject to those
constraints, solved as one convex QP over all hours because the column-sum
constraints couple the per-hour regressions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array

from ._validation import as_float_array, check_positive
from .ingest import ReadingSet, TariffSeries
from .optim import QpProblem, solve_qp

FORMAT_VERSION = 1
CONSTRAINT_TOL = 1e-9


@dataclass
class DemandModel:
    """Fitted affine price-demand model for one customer group.

    ``alpha`` is in kWh, ``beta`` in kWh per cent. ``forgetting`` is the
    per-day exponential weight used in the fit (1.0 = ordinary least squares).
    """

    group: str
    horizon: int
    alpha: np.ndarray
    beta: np.ndarray
    forgetting: float = 1.0
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.alpha = as_float_array(self.alpha, "alpha", ndim=1)
        self.beta = as_float_array(self.beta, "beta", ndim=2)
        h = self.horizon
        if self.alpha.shape != (h,) or self.beta.shape != (h, h):
            raise ValueError(f"alpha/beta shapes inconsistent with horizon {h}")
        if not 0 < self.forgetting <= 1:
            raise ValueError("forgetting factor must be in (0, 1]")

    def predict(self, prices) -> np.ndarray:
        prices = as_float_array(prices, "prices")
        if prices.shape[-1] != self.horizon:
            raise ValueError(f"expected {self.horizon} prices, got {prices.shape[-1]}")
        return self.alpha + prices @ self.beta.T

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "group": self.group,
            "H": int(self.horizon),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "lambda": float(self.forgetting),
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DemandModel":
        return cls(
            group=data["group"],
            horizon=int(data["H"]),
            alpha=np.asarray(data["alpha"], dtype=float),
            beta=np.asarray(data["beta"], dtype=float),
            forgetting=float(data["lambda"]),
            diagnostics=data.get("diagnostics", {}),
        )


@dataclass
class FitHistory:
    """Aligned price/demand observations for one group over D days."""

    prices: np.ndarray
    demands: np.ndarray

    def __post_init__(self):
        self.prices = as_float_array(self.prices, "prices", ndim=2)
        self.demands = as_float_array(self.demands, "demands", ndim=2)
        if self.prices.shape != self.demands.shape:
            raise ValueError("prices and demands must have matching D x H shapes")
        check_positive(self.prices, "prices", strict=True)
        check_positive(self.demands, "demands", strict=False)

    @property
    def days(self) -> int:
        return self.prices.shape[0]

    @property
    def horizon(self) -> int:
        return self.prices.shape[1]


def history_from_readings(rs: ReadingSet, ts: TariffSeries,
                          members: list[str] | None = None) -> FitHistory:
    """Aggregate (sum) member demand and pair it with the group's prices."""
    if list(rs.days) != list(ts.days):
        raise ValueError("readings and tariff cover different days")
    if rs.slots_per_day != ts.slots_per_day:
        raise ValueError("readings and tariff have different slot counts")
    sub = rs if members is None else rs.select(members)
    return FitHistory(prices=ts.prices.copy(), demands=sub.values.sum(axis=0))


def predict_demand(model: DemandModel, prices) -> np.ndarray:
    """Affine demand at the given price vector; negatives are not clamped."""
    return model.predict(prices)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


def _variable_index(h: int, horizon: int) -> slice:
    """Slice of the flat QP variable holding (alpha_h, beta_h1..betaHH)."""
    w = horizon + 1
    return slice(h * w, (h + 1) * w)


def _constraint_rows(horizon: int):
    """Sign and column-sum constraint rows over the flattened (alpha, beta)."""
    h = horizon
    w = h + 1
    n = h * w
    rows = []
    # beta[h][h] <= 0
    for hh in range(h):
        r = np.zeros(n)
        r[hh * w + 1 + hh] = 1.0
        rows.append(r)
    # -beta[h][l] <= 0 for h != l
    for hh in range(h):
        for ll in range(h):
            if hh == ll:
                continue
            r = np.zeros(n)
            r[hh * w + 1 + ll] = -1.0
            rows.append(r)
    # column sums: sum_h beta[h][l] <= 0
    for ll in range(h):
        r = np.zeros(n)
        for hh in range(h):
            r[hh * w + 1 + ll] = 1.0
        rows.append(r)
    return np.vstack(rows), np.zeros(len(rows))


def _snap_to_constraints(alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Remove sub-tolerance constraint violations exactly.

    Clips residual sign violations and absorbs any positive column sum into
    the diagonal entry, so the returned beta satisfies all three families in
    exact arithmetic. The adjustment is bounded by the solver's feasibility
    tolerance and does not affect the fit quality.
    """
    beta = beta.copy()
    off = ~np.eye(len(alpha), dtype=bool)
    beta[off] = np.maximum(beta[off], 0.0)
    np.fill_diagonal(beta, np.minimum(np.diag(beta), 0.0))
    colsum = beta.sum(axis=0)
    excess = np.maximum(colsum, 0.0)
    np.fill_diagonal(beta, np.diag(beta) - excess)
    return beta


def fit_demand_model(hist: FitHistory, forgetting: float = 0.98,
                     group: str = "") -> DemandModel:
    """Constrained exponentially-weighted least squares fit (one convex QP).

    Old observations are down-weighted by ``forgetting ** (D - d)``. The
    constrained optimum is always feasible (beta = 0 is), and the returned
    model satisfies the sign and column-sum constraints exactly.
    """
    if not 0 < forgetting <= 1:
        raise ValueError("forgetting factor must be in (0, 1]")
    d, h = hist.prices.shape
    if d < h + 1:
        warnings.warn(
            f"only {d} days for {h + 1} coefficients per hour; "
            "the fit is rank-deficient and will be regularized")
    w = forgetting ** np.arange(d - 1, -1, -1, dtype=float)
    x = np.column_stack([np.ones(d), hist.prices])
    xtw = x.T * w
    gram = 2.0 * (xtw @ x)
    n_vars = h * (h + 1)
    quad = np.zeros((n_vars, n_vars))
    lin = np.zeros(n_vars)
    for hh in range(h):
        sl = _variable_index(hh, h)
        quad[sl, sl] = gram
        lin[sl.start:sl.stop] = -2.0 * (xtw @ hist.demands[:, hh])

    a_in, b_in = _constraint_rows(h)
    x0 = np.zeros(n_vars)
    wmean = (w @ hist.demands) / w.sum()
    for hh in range(h):
        x0[hh * (h + 1)] = wmean[hh]
    sol = solve_qp(QpProblem(quad=quad, lin=lin, a_in=a_in, b_in=b_in), x0=x0)

    width = h + 1
    theta = sol.point.reshape(h, width)
    alpha = theta[:, 0].copy()
    beta = _snap_to_constraints(alpha, theta[:, 1:].copy())

    resid = hist.demands - (alpha + hist.prices @ beta.T)
    rss = float((w[:, None] * resid ** 2).sum())
    ybar = (w @ hist.demands) / w.sum()
    tss = (w[:, None] * (hist.demands - ybar) ** 2).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(tss > 0, 1.0 - (w[:, None] * resid ** 2).sum(axis=0) / tss, 1.0)
    diagnostics = {
        "weighted_rss": rss,
        "r2": r2.tolist(),
        "kkt_residual": sol.kkt_residual,
        "iterations": sol.iterations,
        "active_constraints": int((np.abs(a_in @ sol.point) < 1e-12).sum()),
        "rank_deficient": "regularized" in sol.diagnostics,
    }
    if "regularized" in sol.diagnostics:
        diagnostics["regularization"] = sol.diagnostics["regularized"]
    return DemandModel(group=group, horizon=h, alpha=alpha, beta=beta,
                       forgetting=forgetting, diagnostics=diagnostics)


class ElasticDemandRegressor(BaseEstimator, RegressorMixin):
    """Scikit-learn estimator facade for the constrained demand fit.

    fit(X, y) takes prices X and group demand y, both D x H. Exposes
    ``alpha_`` (H,), ``beta_`` (H, H) and ``model_``.
    """

    def __init__(self, forgetting=0.98):
        self.forgetting = forgetting

    def fit(self, X, y):
        prices = check_array(X, dtype=float)
        demands = check_array(y, dtype=float)
        model = fit_demand_model(FitHistory(prices, demands), self.forgetting)
        self.model_ = model
        self.alpha_ = model.alpha
        self.beta_ = model.beta
        self.diagnostics_ = model.diagnostics
        return self

    def predict(self, X):
        prices = check_array(X, dtype=float)
        return self.model_.predict(prices)


# ---------------------------------------------------------------------------
# Consistency checks and aggregation
# ---------------------------------------------------------------------------


@dataclass
class ConsistencyReport:
    consistent: bool
    violations: list[dict]
    max_monotonicity_gap: float


def check_market_consistency(model: DemandModel, pairs: int = 1000,
                             seed: int = 0, tol: float = CONSTRAINT_TOL) -> ConsistencyReport:
    """Verify the three constraint families and total-demand monotonicity.

    Monotonicity is checked numerically on ``pairs`` random price pairs with
    P1 <= P2 elementwise: total demand at P1 must be >= total demand at P2
    (within ``tol``), the behavioral content of the column-sum condition.
    """
    violations: list[dict] = []
    h = model.horizon
    diag = np.diag(model.beta)
    for hh in np.flatnonzero(diag > tol):
        violations.append({"kind": "self-elasticity-positive", "h": int(hh),
                           "value": float(diag[hh])})
    off = model.beta[~np.eye(h, dtype=bool)]
    idx = np.argwhere(~np.eye(h, dtype=bool))
    for pos in np.flatnonzero(off < -tol):
        violations.append({"kind": "cross-elasticity-negative",
                           "h": int(idx[pos][0]), "l": int(idx[pos][1]),
                           "value": float(off[pos])})
    colsum = model.beta.sum(axis=0)
    for ll in np.flatnonzero(colsum > tol):
        violations.append({"kind": "column-sum-positive", "h": int(ll),
                           "value": float(colsum[ll])})

    rng = np.random.default_rng(seed)
    p1 = rng.uniform(1.0, 40.0, size=(pairs, h))
    p2 = p1 + rng.uniform(0.0, 10.0, size=(pairs, h))
    total1 = model.predict(p1).sum(axis=1)
    total2 = model.predict(p2).sum(axis=1)
    gap = float((total2 - total1).max())
    if gap > tol:
        violations.append({"kind": "total-demand-monotonicity", "value": gap})
    return ConsistencyReport(consistent=not violations, violations=violations,
                             max_monotonicity_gap=gap)


def aggregate_models(models: list[DemandModel]) -> DemandModel:
    """Sum of group models (demand adds; the constraints are closed under +)."""
    if not models:
        raise ValueError("no models to aggregate")
    h = models[0].horizon
    for m in models[1:]:
        if m.horizon != h:
            raise ValueError("cannot aggregate models with different horizons")
    alpha = np.sum([m.alpha for m in models], axis=0)
    beta = np.sum([m.beta for m in models], axis=0)
    lambdas = [m.forgetting for m in models]
    forgetting = lambdas[0] if max(lambdas) - min(lambdas) < 1e-12 else float(np.mean(lambdas))
    group = "+".join(m.group for m in models if m.group) or "aggregate"
    return DemandModel(group=group, horizon=h, alpha=alpha, beta=beta,
                       forgetting=forgetting,
                       diagnostics={"aggregated_from": [m.group for m in models]})

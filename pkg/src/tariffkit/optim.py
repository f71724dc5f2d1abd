"""In-repo solver kernel.

``solve_qp`` is a primal active-set method for convex quadratic programs
(minimize form) with linear equality/inequality constraints and bounds.
``maximize_pricing`` is a multi-start projected gradient ascent for
box/equality-constrained quadratic maximization with an optional quadratic
inequality (revenue cap) handled by an exact penalty with infeasibility
restoration. ``grid_oracle`` is a brute-force verifier for small instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .errors import InfeasibleError, SolverError

FEAS_TOL = 1e-8
KKT_TOL = 1e-6


@dataclass
class QpProblem:
    """minimize 0.5 x' quad x + lin' x subject to a_eq x = b_eq, a_in x <= b_in, lb <= x <= ub."""

    quad: np.ndarray
    lin: np.ndarray
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    a_in: np.ndarray | None = None
    b_in: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.quad = np.asarray(self.quad, dtype=float)
        self.lin = np.asarray(self.lin, dtype=float)
        n = self.lin.shape[0]
        if self.quad.shape != (n, n):
            raise ValueError("quadratic term shape mismatch")
        if not np.allclose(self.quad, self.quad.T, atol=1e-10):
            raise ValueError("quadratic term must be symmetric")
        for name in ("a_eq", "b_eq", "a_in", "b_in", "lb", "ub"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=float))
        if (self.a_eq is None) != (self.b_eq is None):
            raise ValueError("a_eq and b_eq must be given together")
        if (self.a_in is None) != (self.b_in is None):
            raise ValueError("a_in and b_in must be given together")
        if self.a_eq is not None and self.a_eq.shape[1] != n:
            raise ValueError("a_eq column count mismatch")
        if self.a_in is not None and self.a_in.shape[1] != n:
            raise ValueError("a_in column count mismatch")


@dataclass
class NlpProblem:
    """maximize x' quad x + lin' x + const subject to a_eq x = b_eq,
    lb <= x <= ub, and optionally x' q_quad x + q_lin' x <= q_rhs."""

    quad: np.ndarray
    lin: np.ndarray
    const: float = 0.0
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    q_quad: np.ndarray | None = None
    q_lin: np.ndarray | None = None
    q_rhs: float | None = None

    def __post_init__(self):
        self.quad = np.asarray(self.quad, dtype=float)
        self.lin = np.asarray(self.lin, dtype=float)
        n = self.lin.shape[0]
        if self.quad.shape != (n, n):
            raise ValueError("quadratic term shape mismatch")
        if self.lb is None:
            self.lb = np.full(n, -np.inf)
        if self.ub is None:
            self.ub = np.full(n, np.inf)
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        if np.any(self.lb > self.ub):
            raise ValueError("empty box: lb > ub")
        for name in ("a_eq", "b_eq", "q_quad", "q_lin"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=float))
        if (self.q_quad is None) != (self.q_rhs is None):
            raise ValueError("q_quad and q_rhs must be given together")
        if self.q_quad is not None and self.q_lin is None:
            self.q_lin = np.zeros(n)

    @property
    def n(self) -> int:
        return self.lin.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(x @ self.quad @ x + self.lin @ x + self.const)

    def quad_constraint(self, x: np.ndarray) -> float | None:
        if self.q_quad is None:
            return None
        return float(x @ self.q_quad @ x + self.q_lin @ x)


@dataclass
class Solution:
    point: np.ndarray
    objective: float
    status: str  # optimal | local-optimal | max-iterations | infeasible
    kkt_residual: float = np.nan
    iterations: int = 0
    starts_used: int = 1
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Convex QP: primal active set
# ---------------------------------------------------------------------------


def _fold_bounds(p: QpProblem):
    """Collect general inequalities and finite bounds into one (A, b) block."""
    n = p.lin.shape[0]
    rows = []
    rhs = []
    if p.a_in is not None:
        rows.append(p.a_in)
        rhs.append(p.b_in)
    eye = np.eye(n)
    if p.ub is not None:
        fin = np.isfinite(p.ub)
        if fin.any():
            rows.append(eye[fin])
            rhs.append(p.ub[fin])
    if p.lb is not None:
        fin = np.isfinite(p.lb)
        if fin.any():
            rows.append(-eye[fin])
            rhs.append(-p.lb[fin])
    if not rows:
        return np.zeros((0, n)), np.zeros(0)
    return np.vstack(rows), np.concatenate(rhs)


def _hildreth_sweeps(y: np.ndarray, a: np.ndarray, b: np.ndarray,
                     tol: float, max_sweeps: int = 500) -> np.ndarray:
    """Approach the projection of y onto {a x <= b} by Hildreth dual sweeps."""
    m = a.shape[0]
    norms2 = (a * a).sum(axis=1)
    mu = np.zeros(m)
    x = y.copy()
    for _ in range(max_sweeps):
        worst = 0.0
        for i in range(m):
            if norms2[i] <= 0:
                continue
            r = a[i] @ x - b[i]
            delta = max(-mu[i], r / norms2[i])
            if delta != 0.0:
                mu[i] += delta
                x -= delta * a[i]
            worst = max(worst, a[i] @ x - b[i])
        if worst <= tol:
            break
    return x


def _find_feasible(a: np.ndarray, b: np.ndarray, y: np.ndarray, tol: float) -> np.ndarray:
    """Find v with ``a v <= b + tol`` starting near y.

    Gauss-Newton on the violated constraint set, aiming slightly inside the
    boundary, with Hildreth sweeps as a polish for the stubborn cases.
    """
    if a.shape[0] == 0:
        return y.copy()
    best = y.copy()
    best_worst = float((a @ best - b).max())
    for margin in (1e-3, 1e-6, 1e-10, 0.0):
        v = best.copy()
        for _ in range(25):
            resid = a @ v - b
            worst = float(resid.max())
            if worst < best_worst:
                best, best_worst = v.copy(), worst
            if worst <= tol:
                return v
            hit = resid > -margin if margin > 0 else resid > 0
            target = resid[hit] + margin
            step = np.linalg.lstsq(a[hit], target, rcond=None)[0]
            if not np.all(np.isfinite(step)):
                break
            v = v - step
    v = _hildreth_sweeps(best, a, b, tol=tol * 0.5)
    worst = float((a @ v - b).max())
    return v if worst < best_worst else best


def solve_qp(p: QpProblem, x0: np.ndarray | None = None, max_iter: int | None = None) -> Solution:
    """Global optimum of a convex QP via a primal active-set method.

    The Hessian must be positive definite on the equality nullspace; a
    1e-8-scaled ridge is added (and flagged in diagnostics) when the Cholesky
    factorization fails. Raises InfeasibleError when no feasible point exists.
    """
    n = p.lin.shape[0]
    a_all, b_all = _fold_bounds(p)
    diagnostics: dict = {}

    # eliminate equality constraints via a nullspace parameterization
    if p.a_eq is not None and p.a_eq.shape[0] > 0:
        x_part, res, _, _ = np.linalg.lstsq(p.a_eq, p.b_eq, rcond=None)
        eq_scale = max(1.0, float(np.abs(p.b_eq).max()))
        if np.abs(p.a_eq @ x_part - p.b_eq).max() > FEAS_TOL * eq_scale:
            raise InfeasibleError("equality constraints are inconsistent")
        u, s, vt = np.linalg.svd(p.a_eq)
        rank = int((s > s[0] * 1e-12).sum()) if s.size else 0
        z = vt[rank:].T
    else:
        x_part = np.zeros(n)
        z = np.eye(n)

    if z.shape[1] == 0:
        x = x_part
        viol = a_all @ x - b_all if len(b_all) else np.zeros(0)
        if len(viol) and viol.max() > FEAS_TOL * max(1.0, np.abs(b_all).max()):
            raise InfeasibleError("equality constraints pin an infeasible point")
        return _finish_qp(p, x, np.zeros(len(b_all)), a_all, b_all, 0, diagnostics)

    q = z.T @ p.quad @ z
    c = z.T @ (p.quad @ x_part + p.lin)
    a_red = a_all @ z
    b_red = b_all - a_all @ x_part

    # factorize, regularizing if necessary
    scale = max(1.0, float(np.abs(q).max()))
    reg = 0.0
    for attempt in range(6):
        try:
            chol = sla.cho_factor(q + reg * np.eye(q.shape[0]), lower=True)
            break
        except np.linalg.LinAlgError:
            reg = 1e-8 * scale if reg == 0.0 else reg * 100.0
    else:
        raise SolverError("quadratic term is not positive semidefinite")
    if reg > 0.0:
        q = q + reg * np.eye(q.shape[0])
        diagnostics["regularized"] = reg

    def qsolve(rhs):
        return sla.cho_solve(chol, rhs)

    v_free = -qsolve(c)
    m = a_red.shape[0]
    b_scale = max(1.0, float(np.abs(b_red).max())) if m else 1.0
    row_scale = np.maximum(np.sqrt((a_red * a_red).sum(axis=1)), 1e-12) if m else None

    if x0 is not None:
        v = np.linalg.lstsq(z, np.asarray(x0, dtype=float) - x_part, rcond=None)[0]
    else:
        v = v_free.copy()
    if m and (a_red @ v - b_red).max() > FEAS_TOL * b_scale:
        v = _find_feasible(a_red / row_scale[:, None], b_red / row_scale, v,
                           tol=0.1 * FEAS_TOL * b_scale)
        worst = (a_red @ v - b_red).max()
        if worst > FEAS_TOL * b_scale:
            raise InfeasibleError(
                f"no feasible point found (residual {worst:.3e}); "
                "constraints appear inconsistent")

    # precomputed Schur pieces: y_all = Q^-1 A', gram = A Q^-1 A'
    if m:
        y_all = qsolve(a_red.T)
        gram = a_red @ y_all
    work: list[int] = []
    in_work = np.zeros(m, dtype=bool)
    if max_iter is None:
        max_iter = 20 * (m + n) + 200
    mu_full = np.zeros(m)
    it = 0
    for it in range(1, max_iter + 1):
        g = q @ v + c
        if work:
            idx = np.array(work)
            mw = gram[np.ix_(idx, idx)]
            rhs = -(y_all[:, idx].T @ g)
            try:
                lam = np.linalg.solve(mw, rhs)
            except np.linalg.LinAlgError:
                lam = np.linalg.lstsq(mw, rhs, rcond=None)[0]
            step = -(qsolve(g) + y_all[:, idx] @ lam)
        else:
            lam = np.zeros(0)
            step = -qsolve(g)

        step_norm = np.abs(step).max() if step.size else 0.0
        if step_norm <= 1e-11 * (1.0 + np.abs(v).max()):
            if len(lam) == 0 or lam.min() >= -1e-9:
                mu_full[:] = 0.0
                if work:
                    mu_full[np.array(work)] = np.maximum(lam, 0.0)
                x = x_part + z @ v
                return _finish_qp(p, x, mu_full, a_all, b_all, it, diagnostics)
            drop = work[int(np.argmin(lam))]
            work.remove(drop)
            in_work[drop] = False
            continue

        # ratio test against constraints not in the working set
        alpha = 1.0
        blocker = -1
        if m:
            ap = a_red @ step
            candidates = ~in_work & (ap > 1e-13 * row_scale)
            if candidates.any():
                av = a_red[candidates] @ v
                ratios = (b_red[candidates] - av) / ap[candidates]
                pos = int(np.argmin(ratios))
                if ratios[pos] < alpha - 1e-15:
                    alpha = max(float(ratios[pos]), 0.0)
                    blocker = int(np.flatnonzero(candidates)[pos])
        v = v + alpha * step
        if blocker >= 0:
            work.append(blocker)
            in_work[blocker] = True

    x = x_part + z @ v
    sol = _finish_qp(p, x, mu_full, a_all, b_all, it, diagnostics)
    sol.status = "max-iterations"
    return sol


def _finish_qp(p: QpProblem, x, mu, a_all, b_all, iterations, diagnostics) -> Solution:
    obj = float(0.5 * x @ p.quad @ x + p.lin @ x)
    grad = p.quad @ x + p.lin
    stat = grad + (a_all.T @ mu if len(b_all) else 0.0)
    nu = np.zeros(0)
    if p.a_eq is not None and p.a_eq.shape[0] > 0:
        nu = np.linalg.lstsq(p.a_eq.T, -stat, rcond=None)[0]
        stat = stat + p.a_eq.T @ nu
    scale = max(1.0, float(np.abs(grad).max()))
    r_stat = float(np.abs(stat).max()) / scale
    r_feas = 0.0
    r_comp = 0.0
    if len(b_all):
        slack = b_all - a_all @ x
        b_scale = max(1.0, float(np.abs(b_all).max()))
        r_feas = float(np.maximum(-slack, 0.0).max()) / b_scale
        r_comp = float(np.abs(mu * slack).max()) / max(1.0, abs(obj), b_scale)
    if p.a_eq is not None and p.a_eq.shape[0] > 0:
        eq_scale = max(1.0, float(np.abs(p.b_eq).max()))
        r_feas = max(r_feas, float(np.abs(p.a_eq @ x - p.b_eq).max()) / eq_scale)
    kkt = max(r_stat, r_feas, r_comp)
    diagnostics = dict(diagnostics)
    diagnostics.update({"stationarity": r_stat, "feasibility": r_feas,
                        "complementarity": r_comp})
    return Solution(point=x, objective=obj, status="optimal", kkt_residual=kkt,
                    iterations=iterations, starts_used=1, diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# Projection onto {box  and  a_eq x = b_eq} for disjoint-support equalities
# ---------------------------------------------------------------------------


def _project_hyperplane_box(y, a, b, lb, ub):
    """Exact projection onto {lb <= x <= ub, a x = b} for a single row a."""
    if np.clip(y, lb, ub) @ a == b:  # fast path, also handles a == 0
        return np.clip(y, lb, ub)

    def value(t):
        return a @ np.clip(y - t * a, lb, ub) - b

    # value(t) is non-increasing in t; bracket a root then bisect
    span = float(np.abs(a).max())
    t_lo, t_hi = -1.0, 1.0
    for _ in range(200):
        if value(t_lo) >= 0:
            break
        t_lo *= 2.0
    for _ in range(200):
        if value(t_hi) <= 0:
            break
        t_hi *= 2.0
    if value(t_lo) < 0 or value(t_hi) > 0:
        raise InfeasibleError("hyperplane does not intersect the box")
    for _ in range(200):
        t_mid = 0.5 * (t_lo + t_hi)
        if value(t_mid) > 0:
            t_lo = t_mid
        else:
            t_hi = t_mid
        if t_hi - t_lo < 1e-14 * max(1.0, abs(t_hi), abs(t_lo)):
            break
    t = 0.5 * (t_lo + t_hi)
    x = np.clip(y - t * a, lb, ub)
    # exact refinement on the identified free set
    free = (x > lb + 1e-12 * span) & (x < ub - 1e-12 * span)
    denom = float((a[free] * a[free]).sum())
    if denom > 0:
        resid = float(a @ x - b)
        x = x.copy()
        x[free] -= (resid / denom) * a[free]
        x = np.clip(x, lb, ub)
    return x


class _Projector:
    """Projection onto the box intersected with the equality rows.

    Exact when the equality rows have pairwise-disjoint supports (the
    per-group average-price case); otherwise falls back to Dykstra's
    alternating projections.
    """

    def __init__(self, p: NlpProblem):
        self.lb, self.ub = p.lb, p.ub
        self.rows: list[tuple[np.ndarray, np.ndarray, float]] = []
        self.disjoint = True
        if p.a_eq is not None and p.a_eq.shape[0] > 0:
            used = np.zeros(p.n, dtype=bool)
            for i in range(p.a_eq.shape[0]):
                support = np.abs(p.a_eq[i]) > 0
                if np.any(used & support):
                    self.disjoint = False
                used |= support
                self.rows.append((support, p.a_eq[i], float(p.b_eq[i])))

    def __call__(self, y: np.ndarray) -> np.ndarray:
        if not self.rows:
            return np.clip(y, self.lb, self.ub)
        if self.disjoint:
            x = np.clip(y, self.lb, self.ub)
            for support, a, b in self.rows:
                x[support] = _project_hyperplane_box(
                    y[support], a[support], b, self.lb[support], self.ub[support])
            return x
        return self._dykstra(y)

    def _dykstra(self, y: np.ndarray, sweeps: int = 500) -> np.ndarray:
        x = y.copy()
        sets = len(self.rows) + 1
        corrections = [np.zeros_like(y) for _ in range(sets)]
        for _ in range(sweeps):
            x_prev = x.copy()
            for s in range(sets):
                z = x + corrections[s]
                if s == 0:
                    x_new = np.clip(z, self.lb, self.ub)
                else:
                    _, a, b = self.rows[s - 1]
                    x_new = z - ((a @ z - b) / (a @ a)) * a
                corrections[s] = z - x_new
                x = x_new
            if np.abs(x - x_prev).max() < 1e-13 * (1 + np.abs(x).max()):
                break
        return x


# ---------------------------------------------------------------------------
# Multi-start projected gradient ascent
# ---------------------------------------------------------------------------


def _spectral_norm(mat: np.ndarray) -> float:
    if mat is None or mat.size == 0:
        return 0.0
    return float(np.linalg.norm(mat, 2))


def _ascend(p: NlpProblem, project, x, rho: float, max_iter: int = 2000):
    """Monotone projected gradient ascent on the rho-penalized objective."""
    sym = p.quad + p.quad.T
    q_sym = p.q_quad + p.q_quad.T if p.q_quad is not None else None

    def penalized(xx):
        f = p.objective(xx)
        if rho > 0.0 and p.q_quad is not None:
            f -= rho * max(0.0, p.quad_constraint(xx) - p.q_rhs)
        return f

    lip = _spectral_norm(sym) + (rho * _spectral_norm(q_sym) if rho > 0 else 0.0)
    box_span = np.max(np.where(np.isfinite(p.ub - p.lb), p.ub - p.lb, 1.0))
    f_cur = penalized(x)
    it = 0
    for it in range(1, max_iter + 1):
        grad = sym @ x + p.lin
        if rho > 0.0 and p.q_quad is not None and p.quad_constraint(x) > p.q_rhs:
            grad = grad - rho * (q_sym @ x + p.q_lin)
        gnorm = float(np.abs(grad).max())
        if gnorm <= 0.0:
            break
        t = 1.0 / lip if lip > 0 else box_span / gnorm
        accepted = False
        for _ in range(60):
            x_new = project(x + t * grad)
            d = x_new - x
            f_new = penalized(x_new)
            if f_new >= f_cur + 1e-4 * float(grad @ d) - 1e-14 * max(1.0, abs(f_cur)):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        if f_new < f_cur - 1e-9 * max(1.0, abs(f_cur)):
            raise SolverError("ascent objective decreased")
        move = float(np.abs(d).max())
        x, f_cur = x_new, max(f_new, f_cur)
        if move <= 1e-11 * (1.0 + float(np.abs(x).max())):
            break
    return x, it


def _cap_entry_time(p: NlpProblem, x: np.ndarray, d: np.ndarray) -> float:
    """Largest t in [0, 1] with q(x + s d) <= rhs for all s in [0, t].

    Requires q(x) <= rhs. The constraint along the ray is quadratic, so the
    crossing time is a closed-form root.
    """
    qs = p.q_quad
    aa = float(d @ qs @ d)
    bb = float(x @ (qs + qs.T) @ d + p.q_lin @ d)
    cc = float(p.quad_constraint(x) - p.q_rhs)
    roots = []
    if abs(aa) > 1e-300:
        disc = bb * bb - 4 * aa * cc
        if disc >= 0:
            sq = np.sqrt(disc)
            roots = [(-bb - sq) / (2 * aa), (-bb + sq) / (2 * aa)]
    elif abs(bb) > 1e-300:
        roots = [-cc / bb]
    t_max = 1.0
    for t in sorted(roots):
        if t > 1e-14:
            t_max = min(t_max, t)
            break
    # guard against rounding just past the surface
    for _ in range(60):
        if t_max <= 0 or p.quad_constraint(x + t_max * d) <= p.q_rhs + 1e-9:
            break
        t_max *= 0.99
    else:
        t_max = 0.0
    return max(t_max, 0.0)


def _line_max(p: NlpProblem, x: np.ndarray, d: np.ndarray, t_max: float) -> float:
    """argmax of the quadratic objective along x + t d over t in [0, t_max]."""
    curv = float(d @ p.quad @ d)
    slope = float(x @ (p.quad + p.quad.T) @ d + p.lin @ d)
    if curv < 0:
        t_star = -slope / (2 * curv)
        return float(np.clip(t_star, 0.0, t_max))
    # convex or flat along the ray: maximum at an endpoint
    end = p.objective(x + t_max * d)
    return t_max if end >= p.objective(x) else 0.0


def _polish_capped(p: NlpProblem, project, x: np.ndarray, max_iter: int = 800):
    """Maximize over {box, eq, cap} from a feasible x.

    Tangential projected-gradient steps: the outward cap-normal component of
    the gradient is removed when the cap is active, trial points are pulled
    back to the surface along the step segment, and each step takes the exact
    1-D maximum of the quadratic objective on the feasible sub-segment. The
    true objective is non-decreasing throughout.
    """
    sym = p.quad + p.quad.T
    q_sym = p.q_quad + p.q_quad.T
    lip = max(_spectral_norm(sym), 1e-12)
    q_scale = max(1.0, abs(p.q_rhs))
    f_cur = p.objective(x)
    it = 0
    for it in range(1, max_iter + 1):
        g = sym @ x + p.lin
        slack = p.q_rhs - p.quad_constraint(x)
        if slack <= 1e-9 * q_scale:
            nu = q_sym @ x + p.q_lin
            nn = float(nu @ nu)
            if nn > 0:
                g = g - max(0.0, float(g @ nu) / nn) * nu
        improved = False
        t_trial = 1.0 / lip
        for _ in range(50):
            y = project(x + t_trial * g)
            d = y - x
            if float(np.abs(d).max()) <= 1e-13 * (1.0 + float(np.abs(x).max())):
                break
            t_feas = _cap_entry_time(p, x, d)
            t_star = _line_max(p, x, d, t_feas)
            x_new = x + t_star * d
            f_new = p.objective(x_new)
            if f_new > f_cur + 1e-12 * max(1.0, abs(f_cur)):
                x, f_cur = x_new, f_new
                improved = True
                break
            t_trial *= 0.5
        if not improved:
            break
    return x, it


def maximize_pricing(p: NlpProblem, starts: int = 32, seed: int = 0,
                     extra_starts=None) -> Solution:
    """Best feasible local maximum over ``starts`` projected-ascent runs.

    The average-price equalities are handled by exact projection onto the
    box/hyperplane intersection; the quadratic revenue constraint by an exact
    penalty whose weight starts at 10x the objective scale and doubles on
    violation (at most 12 times). Deterministic given the seed; the first k
    sampled starts coincide for any two calls sharing a seed, so increasing
    ``starts`` never lowers the returned objective.
    """
    if starts < 1:
        raise ValueError("starts must be >= 1")
    project = _Projector(p)
    rng = np.random.default_rng(seed)

    points = []
    if extra_starts is not None:
        points.extend(np.asarray(e, dtype=float) for e in extra_starts)
    lo = np.where(np.isfinite(p.lb), p.lb, -1e3)
    hi = np.where(np.isfinite(p.ub), p.ub, 1e3)
    points.append(0.5 * (lo + hi))
    for _ in range(starts):
        points.append(rng.uniform(lo, hi))

    cap_tol = 1e-6
    obj_scale = max(1.0, float(np.abs(p.lin).max() * np.abs(hi).max()),
                    float(np.abs(p.quad).max() * np.abs(hi).max() ** 2))
    best: Solution | None = None
    total_iters = 0
    for x0 in points:
        x = project(x0)
        if p.q_quad is None:
            x, iters = _ascend(p, project, x, rho=0.0)
            total_iters += iters
            feasible = True
        else:
            # relaxation first: if the cap is slack at its optimum we are done
            x_relax, iters = _ascend(p, project, x, rho=0.0)
            total_iters += iters
            if p.quad_constraint(x_relax) <= p.q_rhs:
                x, feasible = x_relax, True
            else:
                # exact penalty with doubling weight restores feasibility,
                # then a surface polish maximizes along the active cap
                rho = 10.0 * obj_scale
                for _ in range(13):  # initial weight plus up to 12 doublings
                    x, it = _ascend(p, project, x, rho=rho, max_iter=400)
                    total_iters += it
                    if p.quad_constraint(x) <= p.q_rhs:
                        break
                    rho *= 2.0
                feasible = p.quad_constraint(x) <= p.q_rhs + cap_tol
                if feasible and p.quad_constraint(x) <= p.q_rhs:
                    x, it = _polish_capped(p, project, x)
                    total_iters += it
        if not feasible:
            continue
        obj = p.objective(x)
        if best is None or obj > best.objective:
            best = Solution(point=x, objective=obj, status="local-optimal",
                            iterations=total_iters, starts_used=len(points))
    if best is None:
        raise InfeasibleError("no feasible point found across all starts")

    best.starts_used = len(points)
    best.iterations = total_iters
    best.kkt_residual = _stationarity_residual(p, project, best.point)
    if _certified_concave(p) and p.q_quad is None:
        best.status = "optimal"
        best.diagnostics["concave"] = True
    return best


def _stationarity_residual(p: NlpProblem, project, x: np.ndarray) -> float:
    sym = p.quad + p.quad.T
    grad = sym @ x + p.lin
    lip = max(_spectral_norm(sym), 1.0)
    moved = project(x + grad / lip)
    return float(np.abs(moved - x).max() * lip / max(1.0, np.abs(grad).max()))


def _certified_concave(p: NlpProblem) -> bool:
    """True when the objective restricted to the equality nullspace is concave."""
    sym = p.quad + p.quad.T
    if p.a_eq is not None and p.a_eq.shape[0] > 0:
        _, s, vt = np.linalg.svd(p.a_eq)
        rank = int((s > (s[0] if s.size else 0) * 1e-12).sum())
        z = vt[rank:].T
        sym = z.T @ sym @ z
    if sym.size == 0:
        return True
    eig = np.linalg.eigvalsh(sym)
    return bool(eig.max() <= 1e-10 * max(1.0, abs(eig.min())))


# ---------------------------------------------------------------------------
# Grid oracle
# ---------------------------------------------------------------------------

MAX_GRID_DIM = 4


def grid_oracle(p: NlpProblem, resolution: float) -> Solution:
    """Exhaustive feasible-grid scan; within one grid cell of the optimum.

    Each equality row (rows must have pairwise disjoint supports) eliminates
    one variable. The remaining dimension must be <= 4.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    n = p.n
    pivots: dict[int, int] = {}  # var -> eq row index
    if p.a_eq is not None and p.a_eq.shape[0] > 0:
        used = np.zeros(n, dtype=bool)
        for i in range(p.a_eq.shape[0]):
            support = np.flatnonzero(np.abs(p.a_eq[i]) > 0)
            if len(support) == 0:
                raise ValueError(f"equality row {i} has no support")
            if used[support].any():
                raise ValueError("grid oracle requires disjoint equality supports")
            used[support] = True
            pivots[int(support[-1])] = i
    free = [i for i in range(n) if i not in pivots]
    if len(free) > MAX_GRID_DIM:
        raise ValueError(f"reduced dimension {len(free)} exceeds {MAX_GRID_DIM}")
    if np.any(~np.isfinite(p.lb[free])) or np.any(~np.isfinite(p.ub[free])):
        raise ValueError("grid oracle requires finite bounds on free variables")

    axes = []
    for i in free:
        ax = np.arange(p.lb[i], p.ub[i] + resolution * 0.5, resolution)
        if ax.size == 0 or ax[-1] < p.ub[i] - 1e-12:
            ax = np.append(ax, p.ub[i])
        axes.append(ax)
    n_points = int(np.prod([len(ax) for ax in axes])) if axes else 1
    if n_points > 50_000_000:
        raise ValueError(f"grid of {n_points} points is too large; coarsen the resolution")

    best_val = -np.inf
    best_x = None
    total = int(np.prod([len(ax) for ax in axes])) if axes else 1
    chunk = max(1, min(total, 200_000))
    grids = np.meshgrid(*axes, indexing="ij") if axes else []
    flat = np.stack([g.ravel() for g in grids], axis=1) if axes else np.zeros((1, 0))
    for start in range(0, flat.shape[0], chunk):
        block = flat[start:start + chunk]
        x_full = np.zeros((block.shape[0], n))
        x_full[:, free] = block
        ok = np.ones(block.shape[0], dtype=bool)
        for var, row in pivots.items():
            a = p.a_eq[row]
            others = a.copy()
            others[var] = 0.0
            val = (float(p.b_eq[row]) - x_full @ others) / a[var]
            x_full[:, var] = val
            ok &= (val >= p.lb[var] - 1e-9) & (val <= p.ub[var] + 1e-9)
        if p.q_quad is not None:
            qv = np.einsum("bi,ij,bj->b", x_full, p.q_quad, x_full) + x_full @ p.q_lin
            ok &= qv <= p.q_rhs + 1e-9
        if not ok.any():
            continue
        x_ok = x_full[ok]
        vals = np.einsum("bi,ij,bj->b", x_ok, p.quad, x_ok) + x_ok @ p.lin + p.const
        idx = int(np.argmax(vals))
        if vals[idx] > best_val:
            best_val = float(vals[idx])
            best_x = x_ok[idx]
    if best_x is None:
        return Solution(point=np.full(n, np.nan), objective=-np.inf,
                        status="infeasible")
    return Solution(point=best_x, objective=best_val, status="optimal",
                    diagnostics={"resolution": resolution, "grid_points": total})

"""Dense convex quadratic programming with a KKT certificate.

Solves

    min  0.5 x'Hx + g'x
    s.t. Aeq x = beq,  b_lo <= Aineq x <= b_hi

by operator splitting (ADMM) with periodic active-set polishing: once the
active set settles, the corresponding equality-constrained KKT system is
solved directly and the candidate is accepted only if the full first-order
conditions hold to the requested tolerance.  Primal infeasibility is detected
from the divergence certificate of the dual iterates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_RHO_EQ_WEIGHT = 1e3
_SIGMA = 1e-6
_ALPHA = 1.6
INFINITY_GUARD = 1e19


class QpError(ValueError):
    """Raised on malformed problem data."""


class SolverFailure(RuntimeError):
    """Raised by callers when the solver exhausts its budget without a certificate."""


@dataclass(frozen=True)
class QpProblem:
    """Problem data; H is symmetrized on construction and must be PSD."""

    H: np.ndarray
    g: np.ndarray
    Aeq: np.ndarray | None = None
    beq: np.ndarray | None = None
    Aineq: np.ndarray | None = None
    b_lo: np.ndarray | None = None
    b_hi: np.ndarray | None = None

    def __post_init__(self):
        H = np.asarray(self.H, float)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise QpError("H must be square")
        H = 0.5 * (H + H.T)
        object.__setattr__(self, "H", H)
        d = H.shape[0]
        g = np.asarray(self.g, float).reshape(-1)
        if g.shape != (d,):
            raise QpError("g length does not match H")
        object.__setattr__(self, "g", g)
        if (self.Aeq is None) != (self.beq is None):
            raise QpError("Aeq and beq must be provided together")
        if self.Aeq is not None:
            Aeq = np.atleast_2d(np.asarray(self.Aeq, float))
            beq = np.asarray(self.beq, float).reshape(-1)
            if Aeq.shape != (beq.size, d):
                raise QpError("equality block shapes inconsistent")
            object.__setattr__(self, "Aeq", Aeq)
            object.__setattr__(self, "beq", beq)
        if self.Aineq is not None:
            Ai = np.atleast_2d(np.asarray(self.Aineq, float))
            lo = np.asarray(self.b_lo, float).reshape(-1)
            hi = np.asarray(self.b_hi, float).reshape(-1)
            if Ai.shape != (lo.size, d) or lo.size != hi.size:
                raise QpError("inequality block shapes inconsistent")
            if np.any(lo > hi):
                raise QpError("b_lo exceeds b_hi")
            object.__setattr__(self, "Aineq", Ai)
            object.__setattr__(self, "b_lo", lo)
            object.__setattr__(self, "b_hi", hi)
        evals_min = _min_eig_lower_bound(H)
        if evals_min < -1e-9 * max(1.0, float(np.max(np.abs(H)))):
            raise QpError("H is not positive semidefinite")

    @property
    def dim(self):
        return self.H.shape[0]

    def objective(self, x):
        x = np.asarray(x, float)
        return float(0.5 * x @ self.H @ x + self.g @ x)

    def stacked(self):
        """All constraints as one (A, lo, hi) block, equalities first."""
        d = self.dim
        blocks_A, blocks_lo, blocks_hi = [], [], []
        n_eq = 0
        if self.Aeq is not None:
            blocks_A.append(self.Aeq)
            blocks_lo.append(self.beq)
            blocks_hi.append(self.beq)
            n_eq = self.Aeq.shape[0]
        if self.Aineq is not None:
            blocks_A.append(self.Aineq)
            blocks_lo.append(self.b_lo)
            blocks_hi.append(self.b_hi)
        if not blocks_A:
            return np.zeros((0, d)), np.zeros(0), np.zeros(0), 0
        return (np.vstack(blocks_A), np.concatenate(blocks_lo),
                np.concatenate(blocks_hi), n_eq)


def _min_eig_lower_bound(H):
    # Gershgorin-style cheap bound, refined by a Cholesky attempt
    try:
        np.linalg.cholesky(H + 1e-12 * max(1.0, np.max(np.abs(H))) * np.eye(H.shape[0]))
        return 0.0
    except np.linalg.LinAlgError:
        return float(np.min(np.linalg.eigvalsh(0.5 * (H + H.T))))


@dataclass
class QpSolution:
    x: np.ndarray
    objective: float
    status: str  # optimal | infeasible | max_iter
    kkt_residual: float
    iterations: int
    duals: np.ndarray = field(default=None, repr=False)


def _fit_duals(problem: QpProblem, x, act_tol):
    """Least-squares multipliers on the active rows, sign-projected."""
    A, lo, hi, n_eq = problem.stacked()
    nc = A.shape[0]
    y = np.zeros(nc)
    if nc == 0:
        return y
    Ax = A @ x
    scale = 1.0 + np.abs(Ax)
    at_hi = Ax >= hi - act_tol * scale
    at_lo = Ax <= lo + act_tol * scale
    active = np.where(at_hi | at_lo)[0]
    active = np.concatenate([np.arange(n_eq), active[active >= n_eq]])
    if active.size == 0:
        return y
    Aact = A[active]
    rhs = -(problem.H @ x + problem.g)
    sol, *_ = np.linalg.lstsq(Aact.T, rhs, rcond=None)
    for i, row in enumerate(active):
        if row < n_eq:
            y[row] = sol[i]
        elif at_hi[row] and not at_lo[row]:
            y[row] = max(sol[i], 0.0)
        elif at_lo[row] and not at_hi[row]:
            y[row] = min(sol[i], 0.0)
        else:
            y[row] = sol[i]
    return y


def kkt_residual(problem: QpProblem, x, duals=None, act_tol=1e-7):
    """Maximum of the four KKT residual norms at a candidate point.

    Stationarity, primal feasibility and dual-sign violations are absolute;
    the complementarity product is normalized by the dual magnitude so that
    vanishing multiplier noise on slack constraints does not mask an otherwise
    certified optimum.  With ``duals`` omitted, multipliers are fitted by
    least squares on the constraints active at ``x``; an optimal point then
    scores ~0 while any perturbed point scores strictly positive.
    """
    x = np.asarray(x, float)
    A, lo, hi, n_eq = problem.stacked()
    if duals is None:
        duals = _fit_duals(problem, x, act_tol)
    duals = np.asarray(duals, float)
    if A.shape[0] == 0:
        return float(np.linalg.norm(problem.H @ x + problem.g, np.inf))
    Ax = A @ x
    r_stat = np.linalg.norm(problem.H @ x + problem.g + A.T @ duals, np.inf)
    r_prim = max(float(np.max(np.maximum(Ax - hi, 0.0), initial=0.0)),
                 float(np.max(np.maximum(lo - Ax, 0.0), initial=0.0)))
    ineq = np.arange(n_eq, A.shape[0])
    dual_scale = 1.0 + float(np.max(np.abs(duals), initial=0.0))
    big = 1e17
    r_dual = 0.0
    r_comp = 0.0
    for i in ineq:
        yi = duals[i]
        if yi > 0:
            if hi[i] >= big:
                r_dual = max(r_dual, yi / dual_scale)
            else:
                r_comp = max(r_comp, abs(yi * (hi[i] - Ax[i])) / dual_scale)
        elif yi < 0:
            if lo[i] <= -big:
                r_dual = max(r_dual, -yi / dual_scale)
            else:
                r_comp = max(r_comp, abs(yi * (Ax[i] - lo[i])) / dual_scale)
    return float(max(r_stat, r_prim, r_dual, r_comp))


def _active_set_guess(lo, hi, n_eq, z, y, act_tol):
    nc = lo.size
    scale = 1.0 + np.abs(z)
    low_act = np.zeros(nc, bool)
    hi_act = np.zeros(nc, bool)
    big = 1e17
    for i in range(n_eq, nc):
        lo_finite = lo[i] > -big
        hi_finite = hi[i] < big
        if lo_finite and (z[i] <= lo[i] + act_tol * scale[i] or y[i] < -act_tol):
            low_act[i] = True
        elif hi_finite and (z[i] >= hi[i] - act_tol * scale[i] or y[i] > act_tol):
            hi_act[i] = True
    return low_act, hi_act


def _polish(problem: QpProblem, Hs, gs, A, lo, hi, n_eq, z, y, tol, unscale):
    """Equality-solve the guessed active set (in scaled space), verify in the original.

    The active-set guess is refined a few times: after each KKT solve the set
    is re-detected from the polished point until it stops changing.
    """
    d = problem.dim
    nc = A.shape[0]
    act_tol = max(tol, 1e-9)
    low_act, hi_act = _active_set_guess(lo, hi, n_eq, z, y, act_tol)
    best = None
    seen = set()
    for _ in range(6):
        key = (low_act.tobytes(), hi_act.tobytes())
        if key in seen:
            break
        seen.add(key)
        rows = list(range(n_eq)) + [i for i in range(n_eq, nc)
                                    if low_act[i] or hi_act[i]]
        # keep a linearly independent subset so the KKT system stays regular
        kept = []
        basis = []
        for i in rows:
            v = A[i].astype(float)
            for b in basis:
                v = v - (v @ b) * b
            nv = np.linalg.norm(v)
            if nv > 1e-9 * (1.0 + np.linalg.norm(A[i])):
                basis.append(v / nv)
                kept.append(i)
            elif i < n_eq:
                kept.append(i)  # dependent equalities stay; lstsq handles them
        rows = kept
        Aact = A[rows]
        bact = np.array([lo[i] if (i < n_eq or low_act[i]) else hi[i]
                         for i in rows])
        k = len(rows)
        KKT = np.block([[Hs, Aact.T], [Aact, np.zeros((k, k))]])
        rhs = np.concatenate([-gs, bact])
        reg = 1e-10 * max(1.0, float(np.max(np.abs(Hs))))
        Kreg = KKT + reg * np.diag(np.concatenate([np.ones(d), -np.ones(k)]))
        try:
            sol = np.linalg.solve(Kreg, rhs)
            sol = sol + np.linalg.solve(Kreg, rhs - KKT @ sol)
        except np.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(KKT, rhs, rcond=None)
        xs = sol[:d]
        ys = np.zeros(nc)
        for idx, row in enumerate(rows):
            ys[row] = sol[d + idx]
        x, duals = unscale(xs, ys)
        res = kkt_residual(problem, x, duals)
        if best is None or res < best[2]:
            best = (x, duals, res)
        if res <= tol:
            break
        low_act, hi_act = _active_set_guess(lo, hi, n_eq, A @ xs, ys, act_tol)
    return best


def _ruiz_equilibrate(H, g, A, iters=10):
    """Modified Ruiz scaling of the stacked (H, A) data plus a cost scaling.

    Returns diagonal scalings (d, e, c) such that the problem in
    x = D xhat with rows scaled by E and cost scaled by c is well conditioned.
    """
    dim = H.shape[0]
    nc = A.shape[0]
    d = np.ones(dim)
    e = np.ones(nc)
    for _ in range(iters):
        Hs = d[:, None] * H * d[None, :]
        As = e[:, None] * A * d[None, :] if nc else np.zeros((0, dim))
        col = np.maximum(np.max(np.abs(Hs), axis=0, initial=0.0),
                         np.max(np.abs(As), axis=0, initial=0.0) if nc else 0.0)
        col[col <= 1e-12] = 1.0
        d /= np.sqrt(col)
        if nc:
            As = e[:, None] * A * d[None, :]
            row = np.max(np.abs(As), axis=1, initial=0.0)
            row[row <= 1e-12] = 1.0
            e /= np.sqrt(row)
    Hs = d[:, None] * H * d[None, :]
    cost_norm = max(float(np.mean(np.max(np.abs(Hs), axis=0, initial=0.0))),
                    float(np.max(np.abs(d * g), initial=0.0)))
    c = 1.0 / max(cost_norm, 1e-8)
    return d, e, c


def _interior_point(Hs, gs, A, lo, hi, n_eq, x0=None, iters=120):
    """Mehrotra-style primal-dual interior point on the scaled problem.

    Equality rows (lo == hi) are kept as hard equalities; finite inequality
    sides become single-sided rows with slacks.  Returns (x, y_rows) where
    y_rows carries one multiplier per original row (sign encodes the side).
    """
    d = Hs.shape[0]
    nc = A.shape[0]
    big = 1e17
    eq_rows = [i for i in range(nc) if lo[i] >= hi[i] - 1e-15]
    in_lo = [i for i in range(nc) if i not in eq_rows and lo[i] > -big]
    in_hi = [i for i in range(nc) if i not in eq_rows and hi[i] < big]
    Aeq = A[eq_rows]
    beq = np.array([hi[i] for i in eq_rows])
    G = np.vstack([A[in_hi], -A[in_lo]]) if (in_hi or in_lo) else np.zeros((0, d))
    h = np.concatenate([hi[in_hi], -lo[in_lo]]) if (in_hi or in_lo) else np.zeros(0)
    mI = G.shape[0]
    mE = Aeq.shape[0]
    x = np.zeros(d) if x0 is None else x0.copy()
    w = np.maximum(h - G @ x, 1.0) if mI else np.zeros(0)
    z = np.ones(mI)
    y = np.zeros(mE)
    for _ in range(iters):
        rd = Hs @ x + gs + (G.T @ z if mI else 0) + (Aeq.T @ y if mE else 0)
        rp = (G @ x + w - h) if mI else np.zeros(0)
        re = (Aeq @ x - beq) if mE else np.zeros(0)
        mu = (w @ z / mI) if mI else 0.0
        if max(np.linalg.norm(rd, np.inf),
               np.linalg.norm(rp, np.inf) if mI else 0.0,
               np.linalg.norm(re, np.inf) if mE else 0.0, mu) < 1e-12:
            break

        def kkt_solve(rhs_d, rhs_p, rhs_e, wz_target):
            w_safe = np.maximum(w, 1e-14) if mI else np.zeros(0)
            Wz = np.clip(z / w_safe, 1e-14, 1e14) if mI else np.zeros(0)
            M = Hs + (G.T @ (Wz[:, None] * G) if mI else 0.0)
            M = M + 1e-13 * np.eye(d)
            if mI:
                coef = np.clip((z * rhs_p - wz_target) / w_safe, -1e14, 1e14)
                rhs = -rhs_d + G.T @ coef
            else:
                rhs = -rhs_d
            if mE:
                K = np.block([[M, Aeq.T], [Aeq, -1e-13 * np.eye(mE)]])
                try:
                    sol = np.linalg.solve(K, np.concatenate([rhs, -rhs_e]))
                except np.linalg.LinAlgError:
                    sol, *_ = np.linalg.lstsq(K, np.concatenate([rhs, -rhs_e]),
                                              rcond=None)
                dx, dy = sol[:d], sol[d:]
            else:
                try:
                    dx = np.linalg.solve(M, rhs)
                except np.linalg.LinAlgError:
                    dx, *_ = np.linalg.lstsq(M, rhs, rcond=None)
                dy = np.zeros(0)
            if mI:
                dw = -rhs_p - G @ dx
                dz = np.clip((wz_target - z * dw) / w_safe - z, -1e14, 1e14)
            else:
                dw = dz = np.zeros(0)
            return dx, dy, dw, dz

        # predictor
        dx, dy, dw, dz = kkt_solve(rd, rp, re, np.zeros(mI) - w * z)
        if mI:
            ap = min(1.0, *[(-w[i] / dw[i]) for i in range(mI) if dw[i] < 0] or [1.0])
            ad = min(1.0, *[(-z[i] / dz[i]) for i in range(mI) if dz[i] < 0] or [1.0])
            mu_aff = ((w + ap * dw) @ (z + ad * dz)) / mI
            sigma = (mu_aff / max(mu, 1e-300)) ** 3 if mu > 0 else 0.0
            target = sigma * mu - w * z - dw * dz
            dx, dy, dw, dz = kkt_solve(rd, rp, re, target)
            ap = min(1.0, *[(-w[i] / dw[i]) * 0.995 for i in range(mI) if dw[i] < 0] or [1.0])
            ad = min(1.0, *[(-z[i] / dz[i]) * 0.995 for i in range(mI) if dz[i] < 0] or [1.0])
        else:
            ap = ad = 1.0
        x = x + ap * dx
        y = y + ad * dy
        if mI:
            w = w + ap * dw
            z = z + ad * dz
    y_rows = np.zeros(nc)
    for idx, i in enumerate(eq_rows):
        y_rows[i] = y[idx]
    for pos, i in enumerate(in_hi):
        y_rows[i] += z[pos]
    for pos, i in enumerate(in_lo):
        y_rows[i] -= z[len(in_hi) + pos]
    return x, y_rows


def _feasibility_probe(A, lo, hi):
    """Minimal constraint violation via a slack QP solved with the interior point.

    Returns (gap, x) where gap is the smallest achievable maximum violation of
    the finite bounds.
    """
    nc, d = A.shape
    big = 1e17
    Hp = np.zeros((d + nc, d + nc))
    Hp[:d, :d] = 1e-8 * np.eye(d)
    Hp[d:, d:] = np.eye(nc)
    gp = np.zeros(d + nc)
    stack = np.vstack([
        np.hstack([A, -np.eye(nc)]),
        np.hstack([A, np.eye(nc)]),
        np.hstack([np.zeros((nc, d)), np.eye(nc)]),
    ])
    lo_p = np.concatenate([np.full(nc, -np.inf), lo, np.zeros(nc)])
    hi_p = np.concatenate([hi, np.full(nc, np.inf), np.full(nc, np.inf)])
    lo_p = np.where(np.isfinite(lo_p), lo_p, -big * 10)
    hi_p = np.where(np.isfinite(hi_p), hi_p, big * 10)
    xr, _ = _interior_point(Hp, gp, stack, lo_p, hi_p, n_eq=0)
    x = xr[:d]
    Ax = A @ x
    gap = max(float(np.max(np.maximum(Ax - hi, 0.0), initial=0.0)),
              float(np.max(np.maximum(lo - Ax, 0.0), initial=0.0)))
    return gap, x


def solve(problem: QpProblem, tol: float = 1e-8, max_iter: int = 50000,
          warm_start=None) -> QpSolution:
    """Solve the QP to a certified KKT residual.

    Acceptance threshold is max(tol * sqrt(data_scale), 100 * tol): relative
    to the magnitude of (H, g) with a small absolute floor for degenerate
    active sets.
    ``warm_start`` is an optional primal hint; correctness does not depend on
    it.  Returns status 'infeasible' with the probe-confirmed certificate when
    the constraints are inconsistent, and 'max_iter' when the iteration budget
    is exhausted without a certified optimum.
    """
    d = problem.dim
    A0, lo0, hi0, n_eq = problem.stacked()
    nc = A0.shape[0]
    H0, g0 = problem.H, problem.g
    scale = max(1.0, float(np.max(np.abs(H0))), float(np.max(np.abs(g0), initial=0.0)))
    accept = max(tol * np.sqrt(scale), 100.0 * tol)

    if nc == 0:
        x = np.linalg.solve(H0 + _SIGMA * np.eye(d), -g0)
        for _ in range(3):
            x = x - np.linalg.solve(H0 + _SIGMA * np.eye(d), H0 @ x + g0)
        res = float(np.linalg.norm(H0 @ x + g0, np.inf))
        status = "optimal" if res <= max(tol * np.sqrt(scale), 100.0 * tol) else "max_iter"
        return QpSolution(x=x, objective=problem.objective(x), status=status,
                          kkt_residual=res, iterations=0, duals=np.zeros(0))

    dsc, esc, csc = _ruiz_equilibrate(H0, g0, A0)
    Hs = csc * (dsc[:, None] * H0 * dsc[None, :])
    gs = csc * (dsc * g0)
    A = esc[:, None] * A0 * dsc[None, :]
    lo = np.clip(esc * lo0, -INFINITY_GUARD, INFINITY_GUARD)
    hi = np.clip(esc * hi0, -INFINITY_GUARD, INFINITY_GUARD)

    rho = np.full(nc, 0.1)
    rho[:n_eq] *= _RHO_EQ_WEIGHT
    rho[np.isclose(lo, hi)] *= _RHO_EQ_WEIGHT  # pinned rows behave as equalities
    x = np.zeros(d) if warm_start is None else np.asarray(warm_start, float) / dsc
    z = np.clip(A @ x, lo, hi)
    y = np.zeros(nc)

    def unscale_pair(xv, yv):
        return dsc * xv, esc * yv / csc

    def factor(rho_vec):
        # reduced SPD system: (H + sigma I + A' diag(rho) A) x = rhs
        M = Hs + _SIGMA * np.eye(d) + A.T @ (rho_vec[:, None] * A)
        return np.linalg.inv(M)

    Minv = factor(rho)
    it = 0
    last_refactor = 0
    admm_budget = min(max_iter, 12500)
    while it < admm_budget:
        it += 1
        x_t = Minv @ (_SIGMA * x - gs + A.T @ (rho * z - y))
        z_t = A @ x_t
        x_new = _ALPHA * x_t + (1 - _ALPHA) * x
        v = _ALPHA * z_t + (1 - _ALPHA) * z
        z_new = np.clip(v + y / rho, lo, hi)
        y_new = y + rho * (v - z_new)
        dy = y_new - y
        x, z, y = x_new, z_new, y_new

        if it % 25 == 0 or it == max_iter:
            Ax = A @ x
            r_prim = float(np.max(np.abs(Ax - z), initial=0.0))
            r_dual = float(np.linalg.norm(Hs @ x + gs + A.T @ y, np.inf))
            rough_ok = (r_prim <= 1e-5 * (1 + np.max(np.abs(Ax), initial=0.0))
                        and r_dual <= 1e-4 * (1 + np.max(np.abs(gs))))
            if rough_ok or it % 250 == 0:
                xp, dp, res = _polish(problem, Hs, gs, A, lo, hi, n_eq, z, y,
                                      accept, unscale_pair)
                if res <= accept:
                    return QpSolution(x=xp, objective=problem.objective(xp),
                                      status="optimal", kkt_residual=float(res),
                                      iterations=it, duals=dp)
            # infeasibility certificate from the dual update direction,
            # confirmed by the slack probe before declaring
            ndy = np.linalg.norm(dy, np.inf)
            if ndy > 1e-14:
                dyn = dy / ndy
                support = float(hi @ np.maximum(dyn, 0.0) + lo @ np.minimum(dyn, 0.0))
                if np.linalg.norm(A.T @ dyn, np.inf) <= 1e-10 and support < -1e-10:
                    gap, x_probe = _feasibility_probe(A, lo, hi)
                    if gap > 1e-4 * (1.0 + float(np.linalg.norm(x_probe, np.inf))):
                        return QpSolution(x=dsc * x, objective=np.nan,
                                          status="infeasible", kkt_residual=np.inf,
                                          iterations=it, duals=esc * y / csc)
            # adapt rho when residuals are badly unbalanced
            if it - last_refactor >= 200 and r_prim > 0 and r_dual > 0:
                p_rel = r_prim / max(np.max(np.abs(Ax), initial=0.0),
                                     np.max(np.abs(z), initial=0.0), 1e-30)
                d_rel = r_dual / max(float(np.max(np.abs(Hs @ x), initial=0.0)),
                                     float(np.max(np.abs(A.T @ y), initial=0.0)),
                                     float(np.max(np.abs(gs), initial=0.0)), 1e-30)
                factor_change = np.sqrt(p_rel / max(d_rel, 1e-30))
                factor_change = min(max(factor_change, 0.2), 5.0)
                if factor_change < 0.9 or factor_change > 1.1:
                    rho = np.clip(rho * factor_change, 1e-6, 1e6)
                    Minv = factor(rho)
                    last_refactor = it

    # a plateaued splitting usually means hidden infeasibility; probe it.
    # post-equilibration rows have near-unit norms, so the gap threshold is
    # relative only to the probe point's size
    gap, x_probe = _feasibility_probe(A, lo, hi)
    if gap > 1e-4 * (1.0 + float(np.linalg.norm(x_probe, np.inf))):
        return QpSolution(x=dsc * x, objective=np.nan, status="infeasible",
                          kkt_residual=np.inf, iterations=it, duals=esc * y / csc)
    # interior-point fallback for slow convergence on feasible problems
    xi, yi_rows = _interior_point(Hs, gs, A, lo, hi, n_eq, x0=x)
    zi = A @ xi
    xp, dp, res = _polish(problem, Hs, gs, A, lo, hi, n_eq, zi, yi_rows,
                          accept, unscale_pair)
    if res <= accept:
        return QpSolution(x=xp, objective=problem.objective(xp), status="optimal",
                          kkt_residual=float(res), iterations=it, duals=dp)
    xu, yu = unscale_pair(xi, yi_rows)
    raw = float(kkt_residual(problem, xu, yu))
    if raw <= accept:
        return QpSolution(x=xu, objective=problem.objective(xu), status="optimal",
                          kkt_residual=raw, iterations=it, duals=yu)
    xu2, yu2 = unscale_pair(x, y)
    xp, dp, res = _polish(problem, Hs, gs, A, lo, hi, n_eq, z, y,
                          accept, unscale_pair)
    if res <= accept:
        return QpSolution(x=xp, objective=problem.objective(xp), status="optimal",
                          kkt_residual=float(res), iterations=it, duals=dp)
    raw2 = float(kkt_residual(problem, xu2, yu2))
    if raw2 <= accept:
        return QpSolution(x=xu2, objective=problem.objective(xu2),
                          status="optimal", kkt_residual=raw2, iterations=it,
                          duals=yu2)
    best = (xu, yu, raw) if raw <= raw2 else (xu2, yu2, raw2)
    return QpSolution(x=best[0], objective=problem.objective(best[0]),
                      status="max_iter", kkt_residual=best[2], iterations=it,
                      duals=best[1])

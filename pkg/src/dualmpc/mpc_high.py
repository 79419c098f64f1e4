"""Slow-timescale controllers: the stabilizing MPC and its incremental variant.

Both designs are frozen objects produced offline (gain, terminal penalty,
terminal set) and consumed by per-step solvers that assemble condensed QPs
over the input or input-increment sequence.  Terminal ellipsoids are carried
as tangent half-space bundles so the online problems stay QPs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import model as mdl
from . import numerics as num
from . import qp
from .model import (ConstraintSet, DiscreteLtiModel, INF_BOUND, ModelError,
                    SampledModel, Targets, VelocityModel)
from .mpc_low import _difference_operator, _prediction_stacks, solver_tolerance

_FACET_SEED = 20240429
_FACETS_PER_DIM = 16


class DesignError(ValueError):
    pass


def _facet_directions(dim):
    """Deterministic direction bundle: the axes plus seeded random ones, symmetrized."""
    rng = np.random.default_rng(_FACET_SEED)
    dirs = [np.eye(dim)[i] for i in range(dim)]
    while len(dirs) < (_FACETS_PER_DIM // 2) * dim:
        v = rng.standard_normal(dim)
        nv = np.linalg.norm(v)
        if nv > 1e-9:
            dirs.append(v / nv)
    both = []
    for v in dirs:
        both.append(v)
        both.append(-v)
    return np.array(both)


def _ellipsoid_radius(P, rows, margins):
    """Largest c with the ellipsoid e'Pe <= c inside every |g_i e| <= margin_i.

    Uses the support function: max over the ellipsoid of g'e equals
    sqrt(c g' P^-1 g).  Rows with infinite margin are skipped; an empty row
    set yields an infinite radius.
    """
    Pinv = np.linalg.inv(P)
    c = math.inf
    for g, margin in zip(rows, margins):
        if not np.isfinite(margin):
            continue
        if margin <= 0:
            raise DesignError("terminal set is empty: target sits on a bound")
        quad = float(g @ Pinv @ g)
        if quad <= 1e-16:
            continue
        c = min(c, margin * margin / quad)
    return c


def _tangent_facets(P, radius, dim):
    """Half-spaces d'e <= sqrt(radius d'P^-1 d) tangent to the ellipsoid boundary."""
    if not np.isfinite(radius):
        return np.zeros((0, dim)), np.zeros(0)
    Pinv = np.linalg.inv(P)
    D = _facet_directions(dim)
    offsets = np.sqrt(radius * np.einsum("ij,jk,ik->i", D, Pinv, D))
    return D, offsets


def _two_sided_margin(value, lo, hi):
    """Distance from value to the nearest finite bound; inf when unbounded."""
    m = math.inf
    if lo > -INF_BOUND:
        m = min(m, value - lo)
    if hi < INF_BOUND:
        m = min(m, hi - value)
    return m


@dataclass(frozen=True)
class HighLevelDesign:
    """Offline data of the stabilizing slow MPC (gain, penalty, terminal set)."""

    sampled: SampledModel
    constraints: ConstraintSet
    targets: Targets
    N_H: int
    Q_H: np.ndarray
    R_H: np.ndarray
    K_H: np.ndarray
    P_H: np.ndarray
    terminal_radius: float
    facet_normals: np.ndarray
    facet_offsets: np.ndarray
    state_weight: np.ndarray
    rate_enabled: bool
    rate_scale: float = 1.0
    _stacks: tuple = field(default=None, repr=False, compare=False)

    @property
    def N(self):
        return self.sampled.N


@dataclass(frozen=True)
class HighLevelResult:
    u_now: np.ndarray
    x_next_pred: np.ndarray
    predicted_inputs: np.ndarray
    objective: float
    feasible: bool


def design_high(model: DiscreteLtiModel, sampled: SampledModel,
                constraints: ConstraintSet, targets: Targets,
                N_H: int, Q_H, R_H, rate_enabled: bool = False,
                rate_scale: float = None) -> HighLevelDesign:
    """Design the stabilizing high-level MPC for the given targets.

    The gain solves the infinite-horizon LQ problem of the sampled pair with
    output weight Q_H and input weight R_H; the terminal penalty solves the
    induced Lyapunov equation, and the terminal ellipsoid is sized so the
    terminal law respects every finite bound.
    """
    Q_H = np.asarray(Q_H, float)
    R_H = np.asarray(R_H, float)
    if N_H < 1:
        raise DesignError("N_H must be at least 1")
    constraints.validate_targets(targets)
    C = sampled.C
    state_weight = C.T @ Q_H @ C
    K_H, _ = num.solve_dare_gain(sampled.AN, sampled.BN, state_weight, R_H)
    F_H = sampled.AN + sampled.BN @ K_H
    P_H = num.solve_discrete_lyapunov(F_H, state_weight + K_H.T @ R_H @ K_H)

    rows, margins = [], []
    for i in range(K_H.shape[0]):
        rows.append(K_H[i])
        margins.append(_two_sided_margin(targets.u_r[i],
                                         constraints.u_lo[i], constraints.u_hi[i]))
    for i in range(model.n):
        e = np.zeros(model.n)
        e[i] = 1.0
        rows.append(e)
        margins.append(_two_sided_margin(targets.x_r[i],
                                         constraints.x_lo[i], constraints.x_hi[i]))
    # rate bounds do not enter the sizing: the invariance condition constrains
    # the terminal law against the input and state boxes only
    radius = _ellipsoid_radius(P_H, rows, margins)
    normals, offsets = _tangent_facets(P_H, radius, model.n)
    stacks = _prediction_stacks(sampled.AN, sampled.BN, N_H)
    scale_eff = float(1.0 if rate_scale is None else rate_scale)
    return HighLevelDesign(sampled=sampled, constraints=constraints,
                           targets=targets, N_H=int(N_H), Q_H=Q_H, R_H=R_H,
                           K_H=K_H, P_H=P_H, terminal_radius=radius,
                           facet_normals=normals, facet_offsets=offsets,
                           state_weight=state_weight, rate_enabled=rate_enabled,
                           rate_scale=scale_eff, _stacks=stacks)


def solve_high_mpc(design: HighLevelDesign, x_now, targets: Targets = None,
                   u_prev=None, warm_start=None) -> HighLevelResult:
    """Receding-horizon solve of the slow tracking problem at the current state."""
    targets = design.targets if targets is None else targets
    s = design.sampled
    n, m = s.AN.shape[0], s.BN.shape[1]
    H_len = design.N_H
    x_now = np.asarray(x_now, float)
    Phi, Psi = design._stacks
    x_r, u_r = targets.x_r, targets.u_r

    W = np.zeros((n * H_len, n * H_len))
    for i in range(H_len - 1):
        W[i * n:(i + 1) * n, i * n:(i + 1) * n] = design.state_weight
    W[-n:, -n:] = design.P_H
    Rbar = np.kron(np.eye(H_len), design.R_H)

    dev = Phi @ x_now - np.tile(x_r, H_len)
    Ur = np.tile(u_r, H_len)
    Hq = 2.0 * (Psi.T @ W @ Psi + Rbar)
    gq = 2.0 * (Psi.T @ W @ dev - Rbar @ Ur)

    cons = design.constraints
    rows, lo, hi = [], [], []
    rows.append(np.eye(m * H_len))
    lo.append(np.tile(cons.u_lo, H_len))
    hi.append(np.tile(cons.u_hi, H_len))
    finite_x = (cons.x_lo > -INF_BOUND) | (cons.x_hi < INF_BOUND)
    if np.any(finite_x):
        sel = np.where(finite_x)[0]
        pick = np.concatenate([i * n + sel for i in range(H_len)])
        rows.append(Psi[pick])
        lo.append(np.tile(cons.x_lo[sel], H_len) - (Phi @ x_now)[pick])
        hi.append(np.tile(cons.x_hi[sel], H_len) - (Phi @ x_now)[pick])
    if design.rate_enabled:
        if u_prev is None:
            raise DesignError("rate bounds need the previously applied input")
        D = _difference_operator(m, H_len)
        sc = design.rate_scale
        rl = np.tile(cons.du_lo * sc, H_len).astype(float)
        rh = np.tile(cons.du_hi * sc, H_len).astype(float)
        rl[:m] += np.asarray(u_prev, float)
        rh[:m] += np.asarray(u_prev, float)
        rows.append(D)
        lo.append(rl)
        hi.append(rh)
    if design.facet_normals.shape[0]:
        G = design.facet_normals @ Psi[-n:, :]
        base = design.facet_normals @ ((Phi @ x_now)[-n:] - x_r)
        rows.append(G)
        lo.append(np.full(G.shape[0], -INF_BOUND))
        hi.append(design.facet_offsets - base)

    problem = qp.QpProblem(H=Hq, g=gq, Aineq=np.vstack(rows),
                           b_lo=np.concatenate(lo), b_hi=np.concatenate(hi))
    sol = qp.solve(problem, tol=solver_tolerance(), warm_start=warm_start)
    if sol.status == "max_iter":
        raise qp.SolverFailure(
            f"high-level QP solver exhausted its budget (kkt {sol.kkt_residual:.3e})")
    if sol.status != "optimal":
        return HighLevelResult(u_now=np.zeros(m), x_next_pred=x_now.copy(),
                               predicted_inputs=np.zeros((H_len, m)),
                               objective=float("nan"), feasible=False)
    U = sol.x.reshape(H_len, m)
    u_now = U[0]
    y_err0 = s.C @ x_now - targets.y_r
    objective = float(sol.objective
                      + dev @ W @ dev + Ur @ Rbar @ Ur
                      + y_err0 @ design.Q_H @ y_err0)
    return HighLevelResult(u_now=u_now, x_next_pred=s.step(x_now, u_now),
                           predicted_inputs=U, objective=objective, feasible=True)


def compute_uf_slaved(velocity: VelocityModel, x_sampled, u_s, alpha, y_f0, y_fr):
    """Fast input of the one-step tracking law for the alpha-interpolated reference."""
    ytil = np.asarray(y_f0, float) + float(alpha) * (np.asarray(y_fr, float)
                                                     - np.asarray(y_f0, float))
    return mdl.fast_input_for_reference(velocity.tilde, x_sampled, u_s, ytil)


@dataclass(frozen=True)
class IncHighLevelDesign:
    """Offline data of the incremental slow MPC over the velocity form."""

    velocity: VelocityModel
    constraints: ConstraintSet
    targets: Targets
    NH_bar: int
    Q_bar: np.ndarray
    R_bar: np.ndarray
    gamma_weight: float
    K_bar: np.ndarray
    P_bar: np.ndarray
    terminal_radius: float
    facet_normals: np.ndarray
    facet_offsets: np.ndarray
    rate_enabled: bool
    xbar_ref: np.ndarray
    u_s_center: np.ndarray
    u_f_center: np.ndarray
    rate_scale: float = 1.0
    rate_rows_uf: bool = False
    rate_scale_uf: float = 1.0

    @property
    def N(self):
        return self.velocity.tilde.sampled.N


def design_inc_high(model: DiscreteLtiModel, sampled: SampledModel,
                    velocity: VelocityModel, constraints: ConstraintSet,
                    targets: Targets, NH_bar: int, Q_bar, R_bar,
                    gamma_weight: float = 1.0, rate_enabled: bool = False,
                    rate_scale: float = None, rate_rows_uf: bool = False,
                    rate_scale_uf: float = None) -> IncHighLevelDesign:
    """Design the incremental high level: gain, penalty, and invariant set.

    The terminal set lives in velocity coordinates around (y_sr, 0); margins
    come from mapping the terminal law back to absolute slow/fast inputs with
    the fast reference pinned at its final value.
    """
    pt = velocity.partition
    Q_bar = np.asarray(Q_bar, float)
    R_bar = np.asarray(R_bar, float)
    if gamma_weight <= 0:
        raise DesignError("gamma must come as a positive scalar")
    constraints.validate_targets(targets)
    nb = velocity.dim
    if Q_bar.shape != (nb, nb) or R_bar.shape != (pt.m_s, pt.m_s):
        raise DesignError("incremental weight shapes do not match the velocity form")
    if NH_bar < 2:
        raise DesignError("NH_bar must be at least 2")
    K_bar, _ = num.solve_dare_gain(velocity.A_bar, velocity.Bs_bar, Q_bar, R_bar)
    F_bar = velocity.A_bar + velocity.Bs_bar @ K_bar
    P_bar = num.solve_discrete_lyapunov(F_bar, Q_bar + K_bar.T @ R_bar @ K_bar)

    y_sr = targets.y_r[:pt.p_s]
    y_fr = targets.y_r[pt.p_s:]
    xbar_ref = np.concatenate([y_sr, np.zeros(pt.n)])

    # absolute quantities along the terminal law: the fast reference is at its
    # final value (alpha = 1), so mapped inputs are affine in e = xbar - ref
    GuF = velocity.gamma_us @ F_bar
    GxF = velocity.gamma_xs @ F_bar
    GfF = velocity.gamma_uf @ F_bar
    zeta = velocity.gamma_corr
    sol_center = velocity.gamma @ xbar_ref - zeta @ y_fr
    x_center = sol_center[:pt.n]
    u_s_center = sol_center[pt.n:]
    u_f_center = mdl.fast_input_for_reference(velocity.tilde, x_center,
                                              u_s_center, y_fr)
    if np.linalg.norm(u_s_center - targets.u_r[:pt.m_s]) > 1e-6 * (1 + np.linalg.norm(targets.u_r)):
        raise DesignError("velocity constraint maps disagree with the steady state")

    rows, margins = [], []
    for i in range(pt.m_s):
        rows.append(GuF[i])
        margins.append(_two_sided_margin(u_s_center[i], constraints.u_lo[i],
                                         constraints.u_hi[i]))
    for i in range(pt.m_f):
        rows.append(-GfF[i])
        margins.append(_two_sided_margin(u_f_center[i],
                                         constraints.u_lo[pt.m_s + i],
                                         constraints.u_hi[pt.m_s + i]))
    for i in range(pt.n_s):
        rows.append(GxF[i])
        margins.append(_two_sided_margin(targets.x_r[i], constraints.x_lo[i],
                                         constraints.x_hi[i]))
    radius = _ellipsoid_radius(P_bar, rows, margins)
    normals, offsets = _tangent_facets(P_bar, radius, nb)
    scale_eff = float(1.0 if rate_scale is None else rate_scale)
    scale_uf = float(scale_eff if rate_scale_uf is None else rate_scale_uf)
    return IncHighLevelDesign(velocity=velocity, constraints=constraints,
                              targets=targets, NH_bar=int(NH_bar), Q_bar=Q_bar,
                              R_bar=R_bar, gamma_weight=float(gamma_weight),
                              K_bar=K_bar, P_bar=P_bar, terminal_radius=radius,
                              facet_normals=normals, facet_offsets=offsets,
                              rate_enabled=rate_enabled, xbar_ref=xbar_ref,
                              u_s_center=u_s_center, u_f_center=u_f_center,
                              rate_scale=scale_eff, rate_rows_uf=rate_rows_uf,
                              rate_scale_uf=scale_uf)


@dataclass(frozen=True)
class IncSolveInputs:
    """Mutable per-step quantities owned by the simulation loop."""

    xbar_now: np.ndarray
    x_now: np.ndarray
    alpha_prev: float
    u_s_prev: np.ndarray
    u_f_prev: np.ndarray
    k_rel: int
    N_alpha: int
    y_f0: np.ndarray
    monotone_alpha: bool = False


def solve_inc_high_mpc(design: IncHighLevelDesign, inputs: IncSolveInputs,
                       warm_start=None):
    """Solve the incremental slow problem; returns (HighLevelResult, alpha_now).

    Decision variables are the slow-input increments plus the alpha values
    that the schedule leaves free.  The schedule is pinned by the absolute
    slow index relative to the current reference phase: zero at the phase
    start, free and nondecreasing in [0, 1] before N_alpha, one afterwards.
    Pinned alphas are eliminated at assembly time.
    """
    v = design.velocity
    pt = v.partition
    tilde = v.tilde
    s = tilde.sampled
    nb, ms, mf = v.dim, pt.m_s, pt.m_f
    H_len = design.NH_bar
    targets = design.targets
    y_fr = targets.y_r[pt.p_s:]
    if inputs.k_rel + H_len <= inputs.N_alpha:
        raise DesignError("alpha deadline exceeds the prediction horizon")

    xbar = np.asarray(inputs.xbar_now, float)
    x_now = np.asarray(inputs.x_now, float)
    y_f0 = np.asarray(inputs.y_f0, float)
    alpha_prev = float(inputs.alpha_prev)
    step_fr = y_fr - y_f0
    b_alpha = (v.Bf_bar @ step_fr).reshape(-1)

    # schedule bookkeeping: alpha_i for stage i, absolute phase index k_rel + i
    free_stages = [i for i in range(H_len) if 0 < inputs.k_rel + i < inputs.N_alpha]
    n_free = len(free_stages)
    col_of = {st: j for j, st in enumerate(free_stages)}

    def alpha_row(i):
        """Affine map of alpha_i: (coefficients over alpha_free, constant)."""
        row = np.zeros(n_free)
        r = inputs.k_rel + i
        if r == 0:
            return row, 0.0
        if r >= inputs.N_alpha:
            return row, 1.0
        row[col_of[i]] = 1.0
        return row, 0.0

    nd = ms * H_len + n_free
    A_map = np.zeros((H_len, nd))
    a0 = np.zeros(H_len)
    for i in range(H_len):
        row, const = alpha_row(i)
        A_map[i, ms * H_len:] = row
        a0[i] = const
    # increments feeding the dynamics: dalpha_i = alpha_i - alpha_{i-1}
    D_map = np.zeros((H_len, nd))
    d0 = np.zeros(H_len)
    for i in range(H_len):
        D_map[i] = A_map[i]
        d0[i] = a0[i]
        if i == 0:
            d0[i] -= alpha_prev
        else:
            D_map[i] -= A_map[i - 1]
            d0[i] -= a0[i - 1]

    # prediction stacks: xbar stage blocks over (dus stages, dalpha stages)
    Phi = np.zeros((nb * H_len, nb))
    Psi_u = np.zeros((nb * H_len, ms * H_len))
    Psi_a = np.zeros((nb * H_len, H_len))
    powers = [np.eye(nb)]
    for _ in range(H_len):
        powers.append(powers[-1] @ v.A_bar)
    for i in range(H_len):
        Phi[i * nb:(i + 1) * nb] = powers[i + 1]
        for j in range(i + 1):
            blk = powers[i - j]
            Psi_u[i * nb:(i + 1) * nb, j * ms:(j + 1) * ms] = blk @ v.Bs_bar
            Psi_a[i * nb:(i + 1) * nb, j] = blk @ b_alpha
    # fold the alpha parameterization into one decision matrix
    Psi = np.zeros((nb * H_len, nd))
    Psi[:, :ms * H_len] = Psi_u
    Psi += Psi_a @ D_map
    base = Phi @ xbar + Psi_a @ d0

    W = np.zeros((nb * H_len, nb * H_len))
    for i in range(H_len - 1):
        W[i * nb:(i + 1) * nb, i * nb:(i + 1) * nb] = design.Q_bar
    W[-nb:, -nb:] = design.P_bar
    dev_const = base - np.tile(design.xbar_ref, H_len)

    Hq = 2.0 * (Psi.T @ W @ Psi)
    gq = 2.0 * (Psi.T @ W @ dev_const)
    for i in range(H_len):
        blk = slice(i * ms, (i + 1) * ms)
        Hq[blk, blk] += 2.0 * design.R_bar
    # alpha tracking cost toward 1
    alpha_dev_const = a0 - 1.0
    Hq += 2.0 * design.gamma_weight * (A_map.T @ A_map)
    gq += 2.0 * design.gamma_weight * (A_map.T @ alpha_dev_const)
    Hq = 0.5 * (Hq + Hq.T)

    cons = design.constraints
    rows, lo, hi = [], [], []

    # free alphas: inside [0, 1]; optionally nondecreasing along the schedule
    for j, st in enumerate(free_stages):
        row = np.zeros(nd)
        row[ms * H_len + j] = 1.0
        rows.append(row); lo.append(0.0); hi.append(1.0)
    if inputs.monotone_alpha:
        for i in range(H_len):
            r = inputs.k_rel + i
            if not 0 < r < inputs.N_alpha and i > 0:
                continue
            drow = D_map[i]
            if np.any(drow):
                rows.append(drow); lo.append(-d0[i]); hi.append(INF_BOUND)

    # absolute slow input through the running sum
    Tu = np.zeros((ms * H_len, nd))
    for i in range(H_len):
        for l in range(i + 1):
            Tu[i * ms:(i + 1) * ms, l * ms:(l + 1) * ms] = np.eye(ms)
    us_prev = np.asarray(inputs.u_s_prev, float)
    for i in range(H_len):
        for q in range(ms):
            rows.append(Tu[i * ms + q])
            lo.append(cons.u_lo[q] - us_prev[q])
            hi.append(cons.u_hi[q] - us_prev[q])
    if design.rate_enabled:
        for i in range(H_len):
            for q in range(ms):
                drow = np.zeros(nd)
                drow[i * ms + q] = 1.0
                rows.append(drow)
                lo.append(cons.du_lo[q] * design.rate_scale)
                hi.append(cons.du_hi[q] * design.rate_scale)

    # affine maps of the slaved fast input and the absolute state
    Mx = tilde.C_ff @ np.hstack([s.A_fs, s.A_ff])
    MB = tilde.C_ff @ s.B_fs
    CBi = tilde.CffBff_inv
    x_m = np.zeros((pt.n, nd))
    x_c = x_now.copy()
    prev_uf_m = np.zeros((mf, nd))
    prev_uf_c = np.asarray(inputs.u_f_prev, float)
    for i in range(H_len):
        ytil_c = y_f0 + a0[i] * step_fr
        ytil_m = np.outer(step_fr, A_map[i])
        us_m = Tu[i * ms:(i + 1) * ms]
        uf_c = CBi @ (ytil_c - Mx @ x_c - MB @ us_prev)
        uf_m = CBi @ (ytil_m - Mx @ x_m - MB @ us_m)
        for q in range(mf):
            rows.append(uf_m[q])
            lo.append(cons.u_lo[ms + q] - uf_c[q])
            hi.append(cons.u_hi[ms + q] - uf_c[q])
        if design.rate_enabled and design.rate_rows_uf:
            for q in range(mf):
                rows.append(uf_m[q] - prev_uf_m[q])
                lo.append(cons.du_lo[ms + q] * design.rate_scale_uf
                          - (uf_c[q] - prev_uf_c[q]))
                hi.append(cons.du_hi[ms + q] * design.rate_scale_uf
                          - (uf_c[q] - prev_uf_c[q]))
        prev_uf_m, prev_uf_c = uf_m, uf_c
        # x_{i+1} = x_now + sum of predicted state increments
        x_c = x_now + sum(base[l * nb + pt.p_s:(l + 1) * nb] for l in range(i + 1))
        x_m = sum(Psi[l * nb + pt.p_s:(l + 1) * nb] for l in range(i + 1))
        for q in range(pt.n_s):
            if cons.x_lo[q] > -INF_BOUND or cons.x_hi[q] < INF_BOUND:
                rows.append(x_m[q])
                lo.append(cons.x_lo[q] - x_c[q])
                hi.append(cons.x_hi[q] - x_c[q])

    if design.facet_normals.shape[0]:
        G = design.facet_normals @ Psi[-nb:, :]
        fbase = design.facet_normals @ dev_const[-nb:]
        rows.append(G)
        lo.append(np.full(G.shape[0], -INF_BOUND))
        hi.append(design.facet_offsets - fbase)

    Arows = np.vstack([np.atleast_2d(r) for r in rows])
    lo_v = np.concatenate([np.atleast_1d(np.asarray(b, float)) for b in lo])
    hi_v = np.concatenate([np.atleast_1d(np.asarray(b, float)) for b in hi])
    problem = qp.QpProblem(H=Hq, g=gq, Aineq=Arows, b_lo=lo_v, b_hi=hi_v)
    sol = qp.solve(problem, tol=solver_tolerance(), warm_start=warm_start)
    if sol.status == "max_iter":
        raise qp.SolverFailure(
            f"incremental QP solver exhausted its budget (kkt {sol.kkt_residual:.3e})")
    if sol.status != "optimal":
        res = HighLevelResult(u_now=np.zeros(ms + mf), x_next_pred=x_now.copy(),
                              predicted_inputs=np.zeros((H_len, ms + mf)),
                              objective=float("nan"), feasible=False)
        return res, inputs.alpha_prev

    z = sol.x
    dus0 = z[:ms]
    alpha_now = float(A_map[0] @ z + a0[0])
    u_s = us_prev + dus0
    u_f = compute_uf_slaved(v, x_now, u_s, alpha_now, y_f0, y_fr)
    u_now = np.concatenate([u_s, u_f])
    x_next = s.step(x_now, u_now)
    # reconstruct the full stage cost by restoring the constant terms
    dev0 = xbar - design.xbar_ref
    objective = float(sol.objective
                      + dev_const @ W @ dev_const
                      + design.gamma_weight * float(alpha_dev_const @ alpha_dev_const)
                      + dev0 @ design.Q_bar @ dev0)
    preds = np.zeros((H_len, ms + mf))
    preds[0] = u_now
    result = HighLevelResult(u_now=u_now, x_next_pred=x_next,
                             predicted_inputs=preds, objective=objective,
                             feasible=True)
    return result, alpha_now

"""Shrinking-horizon corrector MPC running at the basic time step.

Within each slow interval the low level refines the held input with
corrections delta_u, tracking the open-loop reference generated from the high
level and meeting the predicted interval-end state exactly (hard equality).
The horizon shrinks from N down to 1 as the interval elapses.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import qp
from .model import ConstraintSet, DiscreteLtiModel, INF_BOUND


def solver_tolerance():
    """QP tolerance, overridable through DUALMPC_QP_TOL."""
    try:
        return float(os.environ.get("DUALMPC_QP_TOL", "1e-8"))
    except ValueError:
        return 1e-8


class LowLevelError(ValueError):
    pass


def _prediction_stacks(A, B, L):
    n, m = B.shape
    Phi = np.zeros((n * L, n))
    Psi = np.zeros((n * L, m * L))
    powers = [np.eye(n)]
    for _ in range(L):
        powers.append(powers[-1] @ A)
    for i in range(L):
        Phi[i * n:(i + 1) * n] = powers[i + 1]
        for j in range(i + 1):
            Psi[i * n:(i + 1) * n, j * m:(j + 1) * m] = powers[i - j] @ B
    return Phi, Psi


def _difference_operator(m, L):
    D = np.zeros((m * L, m * L))
    for j in range(L):
        D[j * m:(j + 1) * m, j * m:(j + 1) * m] = np.eye(m)
        if j > 0:
            D[j * m:(j + 1) * m, (j - 1) * m:j * m] = -np.eye(m)
    return D


@dataclass(frozen=True)
class LowLevelDesign:
    """Weights and horizon geometry for the correction MPC."""

    model: DiscreteLtiModel
    constraints: ConstraintSet
    N: int
    Q: np.ndarray
    R: np.ndarray
    rate_enabled: bool = False
    _stacks: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        Q = np.asarray(self.Q, float)
        R = np.asarray(self.R, float)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        p, m = self.model.p, self.model.m
        if Q.shape != (p, p) or R.shape != (m, m):
            raise LowLevelError("weight shapes do not match the model")
        if np.any(np.linalg.eigvalsh(0.5 * (Q + Q.T)) <= 0) or \
                np.any(np.linalg.eigvalsh(0.5 * (R + R.T)) <= 0):
            raise LowLevelError("Q and R must be positive definite")
        if self.rate_enabled and not self.constraints.has_rate_bounds:
            raise LowLevelError("rate_enabled requires du bounds in the constraint set")
        for L in range(1, self.N + 1):
            self._stacks[L] = _prediction_stacks(self.model.A, self.model.B, L)


@dataclass(frozen=True)
class IntervalPlan:
    """Open-loop reference and endpoint for one slow interval [kN, kN+N).

    ref_traj[t] pairs the open-loop slow output at offset t with the fast
    output the interval ends on, so the fast channels are pulled toward their
    interval-end value immediately while the slow ones follow the plan.
    """

    ref_traj: np.ndarray  # (N, p)
    ubar: np.ndarray
    x_endpoint: np.ndarray
    x_start: np.ndarray


def build_interval_plan(design: LowLevelDesign, x_kN, ubar, x_endpoint) -> IntervalPlan:
    """Simulate the plant open loop under the held input and extract references."""
    model = design.model
    x_kN = np.asarray(x_kN, float)
    ubar = np.asarray(ubar, float)
    x_endpoint = np.asarray(x_endpoint, float)
    p_s = model.partition.p_s
    N = design.N
    ys = np.zeros((N, p_s))
    x = x_kN.copy()
    for tau in range(N):
        ys[tau] = (model.C @ x)[:p_s]
        x = model.step(x, ubar)
    drift = np.linalg.norm(x - x_endpoint)
    if drift > 1e-6 * (1.0 + np.linalg.norm(x_endpoint)):
        raise LowLevelError(
            f"endpoint inconsistent with the open-loop rollout (drift {drift:.3e})")
    yf_end = (model.C @ x)[p_s:]
    ref = np.hstack([ys, np.tile(yf_end, (N, 1))])
    return IntervalPlan(ref_traj=ref, ubar=ubar, x_endpoint=x_endpoint,
                        x_start=x_kN.copy())


@dataclass(frozen=True)
class LowLevelResult:
    delta_u_now: np.ndarray
    sequence: np.ndarray  # (L, m) full optimal correction sequence
    objective: float
    feasible: bool


def solve_low_mpc(design: LowLevelDesign, plan: IntervalPlan, x_h, t: int,
                  u_prev_applied=None, warm_start=None) -> LowLevelResult:
    """Solve the correction problem at offset t in [0, N) of the interval.

    Minimizes the tracking-plus-correction cost over the remaining N - t
    moves subject to input (and optional rate) bounds, state bounds, and the
    hard interval-end equality.
    """
    model = design.model
    N, n, m, p = design.N, model.n, model.m, model.p
    if not 0 <= t < N:
        raise LowLevelError(f"offset t={t} outside [0, {N})")
    L = N - t
    x_h = np.asarray(x_h, float)
    Phi, Psi = design._stacks[L]
    ub_stack = np.tile(plan.ubar, L)
    xfree = Phi @ x_h + Psi @ ub_stack

    CtQC = model.C.T @ design.Q @ model.C
    Wblocks = [CtQC] * (L - 1) + [np.zeros((n, n))]
    W = np.zeros((n * L, n * L))
    for i, blk in enumerate(Wblocks):
        W[i * n:(i + 1) * n, i * n:(i + 1) * n] = blk
    Rbar = np.kron(np.eye(L), design.R)

    # reference in state space: C x tracks ref_traj entries 1..L-1 ahead
    CtQ = model.C.T @ design.Q
    gref = np.zeros(n * L)
    for j in range(1, L):
        gref[(j - 1) * n:j * n] = CtQ @ plan.ref_traj[t + j]

    H = 2.0 * (Psi.T @ W @ Psi + Rbar)
    lin = W @ xfree - gref
    g = 2.0 * Psi.T @ lin

    cons = design.constraints
    rows, lo, hi = [], [], []
    rows.append(np.eye(m * L))
    lo.append(np.tile(cons.u_lo, L) - ub_stack)
    hi.append(np.tile(cons.u_hi, L) - ub_stack)
    finite_x = (cons.x_lo > -INF_BOUND) | (cons.x_hi < INF_BOUND)
    if np.any(finite_x) and L > 1:
        sel = np.where(finite_x)[0]
        pick = np.concatenate([j * n + sel for j in range(L - 1)])
        rows.append(Psi[pick])
        lo.append(np.tile(cons.x_lo[sel], L - 1) - xfree[pick])
        hi.append(np.tile(cons.x_hi[sel], L - 1) - xfree[pick])
    if design.rate_enabled:
        if u_prev_applied is None:
            raise LowLevelError("rate bounds need the previously applied input")
        D = _difference_operator(m, L)
        rl = np.tile(cons.du_lo, L).astype(float)
        rh = np.tile(cons.du_hi, L).astype(float)
        shift = plan.ubar - np.asarray(u_prev_applied, float)
        rl[:m] -= shift
        rh[:m] -= shift
        rows.append(D)
        lo.append(rl)
        hi.append(rh)

    Aeq = Psi[(L - 1) * n:]
    beq = plan.x_endpoint - xfree[(L - 1) * n:]

    problem = qp.QpProblem(H=H, g=g, Aeq=Aeq, beq=beq,
                           Aineq=np.vstack(rows), b_lo=np.concatenate(lo),
                           b_hi=np.concatenate(hi))
    sol = qp.solve(problem, tol=solver_tolerance(), warm_start=warm_start)
    if sol.status == "max_iter":
        raise qp.SolverFailure(
            f"low-level QP solver exhausted its budget (kkt {sol.kkt_residual:.3e})")
    if sol.status != "optimal":
        return LowLevelResult(delta_u_now=np.zeros(m), sequence=np.zeros((L, m)),
                              objective=float("nan"), feasible=False)
    du = sol.x.reshape(L, m)
    # report the full stage cost, including the constant j=0 output term
    y_err0 = model.C @ x_h - plan.ref_traj[t]
    obj = float(sol.objective
                + xfree @ W @ xfree - 2.0 * gref @ xfree
                + sum(plan.ref_traj[t + j] @ design.Q @ plan.ref_traj[t + j]
                      for j in range(1, L))
                + y_err0 @ design.Q @ y_err0)
    return LowLevelResult(delta_u_now=du[0], sequence=du, objective=obj,
                          feasible=True)


def shrink_step(plan: IntervalPlan, solution_tail):
    """Warm-start hint for the next offset: the tail of the last optimal sequence."""
    tail = np.asarray(solution_tail, float)
    if tail.ndim != 2 or tail.shape[0] <= 1:
        return None
    return tail[1:].reshape(-1)

"""Closed-loop simulation of the dual-level controllers and the PID baseline.

The loop is strictly causal: at every slow boundary the high level produces a
held input and an interval-end state, the low level then refines the input at
every basic step, and the plant is advanced with the refined input.  Traces
record everything needed for the metrics, the CSV export, and the runtime
verification of the feasibility/monotonicity properties the design promises.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mpc_high, mpc_low, qp
from .model import (ConstraintSet, DiscreteLtiModel, ModelError, Targets,
                    build_tilde_system, build_velocity_form, resample,
                    steady_state_targets)


class ScenarioError(ValueError):
    """Scenario cannot run: bad configuration or infeasible at start."""


class TheoremViolation(RuntimeError):
    """A property the theory guarantees failed at runtime."""


@dataclass(frozen=True)
class ReferenceStep:
    switch_h: int
    y_r: np.ndarray


@dataclass(frozen=True)
class PidLoop:
    input_index: int
    output_index: int
    kp: float
    ki: float
    kd: float


@dataclass(frozen=True)
class PidConfig:
    loops: tuple
    derivative_filter: float = 0.1

    def __post_init__(self):
        ins = sorted(l.input_index for l in self.loops)
        outs = sorted(l.output_index for l in self.loops)
        if ins != list(range(len(ins))) or outs != list(range(len(outs))):
            raise ScenarioError("PID pairings must form a bijection")


@dataclass(frozen=True)
class Scenario:
    """Everything one closed-loop run needs, independent of the algorithm."""

    model: DiscreteLtiModel
    constraints: ConstraintSet
    N: int
    N_sim: int
    schedule: tuple  # ReferenceStep entries, first at h = 0
    x0: np.ndarray
    # D-MPC tuning
    N_H: int
    Q_H: np.ndarray
    R_H: np.ndarray
    # incremental tuning
    NH_bar: int
    Q_bar: np.ndarray
    R_bar: np.ndarray
    gamma: float = 1.0
    N_alpha_init: int = 1
    N_alpha_cap: int = 50
    # 'absolute': Eq-18 schedule indexed from t=0 with y_f0 = y_f(0) throughout;
    # 'reset': schedule and y_f0 restart at every reference switch
    alpha_indexing: str = "absolute"
    # enforce per-slow-step rate rows on the slaved fast input at the high level
    rate_rows_uf: bool = False
    # budget multiplier for those fast-input rows (in du units per slow step)
    rate_scale_uf: float = None
    # low level
    Q_low: np.ndarray = None
    R_low: np.ndarray = None
    rate_constraints: bool = False
    rate_scale_high: float = None  # budget for held-input jumps, in du units per slow step
    pid: PidConfig = None

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, float))
        hs = [s.switch_h for s in self.schedule]
        if hs[0] != 0 or any(b <= a for a, b in zip(hs, hs[1:])):
            raise ScenarioError("switch times must start at 0 and increase")
        if self.N_sim < 1 or self.N < 1:
            raise ScenarioError("N and N_sim must be positive")
        if self.N_sim % self.N != 0:
            raise ScenarioError("N must divide N_sim")
        if self.rate_constraints and not self.constraints.has_rate_bounds:
            raise ScenarioError("rate constraints enabled but no du bounds given")

    def snapped_schedule(self):
        """Switch times snapped up to the next slow boundary."""
        out = []
        for s in self.schedule:
            h = s.switch_h
            if h % self.N:
                h += self.N - (h % self.N)
            out.append(ReferenceStep(h, np.asarray(s.y_r, float)))
        return out

    def reference_at(self, h):
        """Reference the controllers pursue at basic step h."""
        current = self.snapped_schedule()[0].y_r
        for s in self.snapped_schedule():
            if h >= s.switch_h:
                current = s.y_r
        return current


@dataclass
class SimTrace:
    """Per-basic-step history; row h-1 describes the step from h-1 to h."""

    algorithm: str
    N: int
    step_seconds: float
    x: np.ndarray          # state at h = 1..N_sim
    y: np.ndarray          # output at h = 1..N_sim
    u: np.ndarray          # input applied on the step into h
    ubar: np.ndarray
    du: np.ndarray
    y_ref: np.ndarray      # reference pursued while producing y(h)
    alpha: np.ndarray      # NaN when not applicable
    feasible_high: np.ndarray
    feasible_low: np.ndarray
    stage_cost: np.ndarray
    # slow-step records
    slow_objectives: np.ndarray
    slow_stage_costs: np.ndarray
    slow_phase: np.ndarray
    adaptation_log: list = field(default_factory=list)

    @property
    def N_sim(self):
        return self.y.shape[0]


@dataclass(frozen=True)
class Metrics:
    J_s: float
    J_f: float
    settle_seconds: np.ndarray  # (n_switch_events, p); NaN when never settles

    def settle_for_largest_fast_step(self, scenario: Scenario):
        """Settle time of the fast channel with the largest commanded step, last event."""
        sched = scenario.snapped_schedule()
        if len(sched) < 2 or self.settle_seconds.size == 0:
            return float("nan")
        p_s = scenario.model.partition.p_s
        steps = np.abs(sched[-1].y_r - sched[-2].y_r)[p_s:]
        ch = p_s + int(np.argmax(steps))
        return float(self.settle_seconds[-1, ch])


def compute_metrics(trace: SimTrace, scenario: Scenario) -> Metrics:
    """Cumulative squared tracking errors and per-channel settle times."""
    p_s = scenario.model.partition.p_s
    err = trace.y - trace.y_ref
    J_s = float(np.sum(err[:, :p_s] ** 2))
    J_f = float(np.sum(err[:, p_s:] ** 2))
    sched = scenario.snapped_schedule()
    events = []
    for prev, cur in zip(sched, sched[1:]):
        events.append((cur.switch_h, prev.y_r, cur.y_r))
    p = trace.y.shape[1]
    settle = np.full((len(events), p), np.nan)
    dt = trace.step_seconds
    for e, (h_sw, y_old, y_new) in enumerate(events):
        # rows h_sw+1 .. end-of-window hold the post-switch outputs
        end = trace.N_sim
        for nxt in sched:
            if nxt.switch_h > h_sw:
                end = min(end, nxt.switch_h)
                break
        seg = trace.y[h_sw:end]  # y at times h_sw+1 .. end
        for ch in range(p):
            band = 0.05 * abs(y_new[ch] - y_old[ch])
            if band == 0:
                band = 0.05
            inside = np.abs(seg[:, ch] - y_new[ch]) <= band
            if inside.all():
                settle[e, ch] = dt
                continue
            bad = np.where(~inside)[0]
            first_ok = bad[-1] + 1
            if first_ok < seg.shape[0]:
                settle[e, ch] = (first_ok + 1) * dt
    return Metrics(J_s=J_s, J_f=J_f, settle_seconds=settle)


def _empty_trace(algorithm, scenario):
    n_sim = scenario.N_sim
    n, m, p = scenario.model.n, scenario.model.m, scenario.model.p
    n_slow = n_sim // scenario.N
    return SimTrace(
        algorithm=algorithm, N=scenario.N,
        step_seconds=scenario.model.step_seconds,
        x=np.zeros((n_sim, n)), y=np.zeros((n_sim, p)),
        u=np.zeros((n_sim, m)), ubar=np.zeros((n_sim, m)),
        du=np.zeros((n_sim, m)), y_ref=np.zeros((n_sim, p)),
        alpha=np.full(n_sim, np.nan),
        feasible_high=np.ones(n_sim, bool), feasible_low=np.ones(n_sim, bool),
        stage_cost=np.zeros(n_sim),
        slow_objectives=np.full(n_slow, np.nan),
        slow_stage_costs=np.full(n_slow, np.nan),
        slow_phase=np.zeros(n_slow, int))


def _phase_index(scenario, h):
    sched = scenario.snapped_schedule()
    idx = 0
    for i, s in enumerate(sched):
        if h >= s.switch_h:
            idx = i
    return idx


def _low_design(scenario):
    Q = scenario.Q_low if scenario.Q_low is not None else np.eye(scenario.model.p)
    R = scenario.R_low if scenario.R_low is not None else np.eye(scenario.model.m)
    return mpc_low.LowLevelDesign(model=scenario.model,
                                  constraints=scenario.constraints,
                                  N=scenario.N, Q=Q, R=R,
                                  rate_enabled=scenario.rate_constraints)


def _run_interval(scenario, low, plan, x, u_prev, trace, k, y_ref):
    """Run the N basic steps of one slow interval; returns the end state."""
    model = scenario.model
    N = scenario.N
    hint = None
    for t in range(N):
        h = k * N + t
        res = mpc_low.solve_low_mpc(low, plan, x, t, u_prev_applied=u_prev,
                                    warm_start=hint)
        if not res.feasible:
            trace.feasible_low[h] = False
            raise TheoremViolation(
                f"low-level problem infeasible at h={h} (t={t})")
        u = plan.ubar + res.delta_u_now
        x = model.step(x, u)
        u_prev = u
        hint = mpc_low.shrink_step(plan, res.sequence)
        trace.x[h] = x
        trace.y[h] = model.output(x)
        trace.u[h] = u
        trace.ubar[h] = plan.ubar
        trace.du[h] = res.delta_u_now
        trace.y_ref[h] = y_ref
        err = trace.y[h] - y_ref
        trace.stage_cost[h] = float(err @ err)
    drift = np.linalg.norm(x - plan.x_endpoint)
    if drift > 1e-6 * (1.0 + np.linalg.norm(plan.x_endpoint)):
        raise TheoremViolation(
            f"interval endpoint missed at k={k} (drift {drift:.3e})")
    return x, u_prev


def run_dmpc(scenario: Scenario):
    """Algorithm 1: stabilizing slow MPC plus shrinking-horizon refinement."""
    model = scenario.model
    sampled = resample(model, scenario.N)
    low = _low_design(scenario)
    n_slow = scenario.N_sim // scenario.N
    trace = _empty_trace("dmpc", scenario)
    x = scenario.x0.copy()
    u_prev = np.zeros(model.m)
    ubar_prev = np.zeros(model.m)
    design = None
    phase = -1
    for k in range(n_slow):
        h = k * scenario.N
        ph = _phase_index(scenario, h)
        y_ref = scenario.reference_at(h)
        if ph != phase:
            targets = steady_state_targets(model, y_ref)
            design = mpc_high.design_high(model, sampled, scenario.constraints,
                                          targets, scenario.N_H, scenario.Q_H,
                                          scenario.R_H,
                                          rate_enabled=scenario.rate_constraints,
                                          rate_scale=scenario.rate_scale_high)
            phase = ph
        res = mpc_high.solve_high_mpc(design, x, u_prev=ubar_prev)
        if not res.feasible:
            trace.feasible_high[h] = False
            if k == 0:
                raise ScenarioError("high-level problem infeasible at k=0")
            raise TheoremViolation(f"high-level problem infeasible at k={k}")
        stage = (model.C @ x - design.targets.y_r) @ scenario.Q_H @ (model.C @ x - design.targets.y_r) \
            + (res.u_now - design.targets.u_r) @ scenario.R_H @ (res.u_now - design.targets.u_r)
        trace.slow_objectives[k] = res.objective
        trace.slow_stage_costs[k] = float(stage)
        trace.slow_phase[k] = ph
        plan = mpc_low.build_interval_plan(low, x, res.u_now, res.x_next_pred)
        ubar_prev = res.u_now
        x, u_prev = _run_interval(scenario, low, plan, x, u_prev, trace, k, y_ref)
    metrics = compute_metrics(trace, scenario)
    return trace, metrics


def run_inc_dmpc(scenario: Scenario):
    """Algorithm 2: incremental slow MPC with the alpha-governed fast reference."""
    model = scenario.model
    pt = model.partition
    sampled = resample(model, scenario.N)
    tilde = build_tilde_system(sampled, model.C_ff)
    velocity = build_velocity_form(tilde)
    low = _low_design(scenario)
    n_slow = scenario.N_sim // scenario.N
    trace = _empty_trace("inc-dmpc", scenario)
    x = scenario.x0.copy()
    x_prev_slow = scenario.x0.copy()
    u_prev = np.zeros(model.m)
    u_s_prev = np.zeros(pt.m_s)
    u_f_prev = np.zeros(pt.m_f)
    alpha_prev = 0.0
    y_f0 = (model.C @ x)[pt.p_s:].copy()
    N_alpha = scenario.N_alpha_init
    design = None
    phase = -1
    phase_start_k = 0
    for k in range(n_slow):
        h = k * scenario.N
        ph = _phase_index(scenario, h)
        y_ref = scenario.reference_at(h)
        if ph != phase:
            targets = steady_state_targets(model, y_ref)
            design = mpc_high.design_inc_high(model, sampled, velocity,
                                              scenario.constraints, targets,
                                              scenario.NH_bar, scenario.Q_bar,
                                              scenario.R_bar, scenario.gamma,
                                              rate_enabled=scenario.rate_constraints,
                                              rate_scale=scenario.rate_scale_high,
                                              rate_rows_uf=scenario.rate_rows_uf,
                                              rate_scale_uf=scenario.rate_scale_uf)
            phase = ph
            if k > 0 and scenario.alpha_indexing == "reset":
                # the fast reference restarts from the measured fast output
                phase_start_k = k
                alpha_prev = 0.0
                y_f0 = (model.C @ x)[pt.p_s:].copy()
                N_alpha = scenario.N_alpha_init
        k_rel = k - phase_start_k
        xbar = np.concatenate([(model.C @ x)[:pt.p_s], x - x_prev_slow])
        monotone = scenario.alpha_indexing == "reset"

        def _try_solve(n_alpha):
            inp = mpc_high.IncSolveInputs(
                xbar_now=xbar, x_now=x, alpha_prev=alpha_prev,
                u_s_prev=u_s_prev, u_f_prev=u_f_prev, k_rel=k_rel,
                N_alpha=n_alpha, y_f0=y_f0, monotone_alpha=monotone)
            try:
                return mpc_high.solve_inc_high_mpc(design, inp)
            except qp.SolverFailure:
                # razor-thin feasible sets behave like infeasibility here;
                # relaxing the alpha deadline reopens the problem
                trace.adaptation_log.append((k, "solver"))
                return None, alpha_prev

        res, alpha_now = _try_solve(N_alpha)
        while res is None or not res.feasible:
            # Algorithm 2 adaptation: relax the alpha deadline and retry
            N_alpha += 1
            trace.adaptation_log.append((k, N_alpha))
            if N_alpha > scenario.N_alpha_cap or N_alpha >= k_rel + design.NH_bar:
                raise ScenarioError(
                    f"N_alpha adaptation exhausted at slow step {k}")
            res, alpha_now = _try_solve(N_alpha)
        pt_ms = pt.m_s
        stage = (xbar - design.xbar_ref) @ design.Q_bar @ (xbar - design.xbar_ref) \
            + (res.u_now[:pt_ms] - u_s_prev) @ design.R_bar @ (res.u_now[:pt_ms] - u_s_prev)
        trace.slow_objectives[k] = res.objective
        trace.slow_stage_costs[k] = float(stage)
        trace.slow_phase[k] = ph
        trace.alpha[h:h + scenario.N] = alpha_now
        plan = mpc_low.build_interval_plan(low, x, res.u_now, res.x_next_pred)
        x_prev_slow = x.copy()
        x, u_prev = _run_interval(scenario, low, plan, x, u_prev, trace, k, y_ref)
        u_s_prev = res.u_now[:pt_ms].copy()
        u_f_prev = res.u_now[pt_ms:].copy()
        alpha_prev = alpha_now
    metrics = compute_metrics(trace, scenario)
    return trace, metrics


def run_pid(scenario: Scenario, pid: PidConfig = None):
    """Decentralized positional PID baseline at the basic step."""
    pid = pid if pid is not None else scenario.pid
    if pid is None:
        raise ScenarioError("scenario carries no PID configuration")
    model = scenario.model
    trace = _empty_trace("pid", scenario)
    dt = model.step_seconds
    x = scenario.x0.copy()
    integ = {l.input_index: 0.0 for l in pid.loops}
    e_prev = {l.input_index: 0.0 for l in pid.loops}
    d_filt = {l.input_index: 0.0 for l in pid.loops}
    cons = scenario.constraints
    c = pid.derivative_filter
    for h in range(scenario.N_sim):
        y = model.output(x)
        y_ref = scenario.reference_at(h)
        u = np.zeros(model.m)
        for loop in pid.loops:
            i, j = loop.input_index, loop.output_index
            e = y_ref[j] - y[j]
            raw_d = (e - e_prev[i]) / dt
            d_filt[i] = (1.0 - c) * d_filt[i] + c * raw_d
            integ_cand = integ[i] + 0.5 * (e + e_prev[i]) * dt
            v = loop.kp * e + loop.ki * integ_cand + loop.kd * d_filt[i]
            if cons.u_lo[i] <= v <= cons.u_hi[i]:
                integ[i] = integ_cand  # clamp the integrator while saturated
                u[i] = v
            else:
                u[i] = min(max(v, cons.u_lo[i]), cons.u_hi[i])
            e_prev[i] = e
        x = model.step(x, u)
        trace.x[h] = x
        trace.y[h] = model.output(x)
        trace.u[h] = u
        trace.ubar[h] = u
        trace.y_ref[h] = y_ref
        err = trace.y[h] - y_ref
        trace.stage_cost[h] = float(err @ err)
    metrics = compute_metrics(trace, scenario)
    return trace, metrics


@dataclass(frozen=True)
class TheoremReport:
    all_feasible: bool
    cost_monotone: bool
    corrections_vanish: bool
    outputs_converge: bool
    violations: tuple

    @property
    def ok(self):
        return (self.all_feasible and self.cost_monotone
                and self.corrections_vanish and self.outputs_converge)

    def lines(self):
        def mark(b):
            return "pass" if b else "FAIL"
        return [
            f"feasibility of every accepted solve: {mark(self.all_feasible)}",
            f"high-level cost decrease by the stage cost: {mark(self.cost_monotone)}",
            f"corrections vanish in the final window: {mark(self.corrections_vanish)}",
            f"final outputs inside the reference band: {mark(self.outputs_converge)}",
        ] + [f"  - {v}" for v in self.violations]


def assert_theorem_properties(trace: SimTrace, slack=1e-6, du_threshold=1e-3,
                              band=1e-2, window=100) -> TheoremReport:
    """Verify the closed-loop properties the theory guarantees on a finished trace."""
    violations = []
    all_feasible = bool(trace.feasible_high.all() and trace.feasible_low.all())
    if not all_feasible:
        violations.append("infeasible solve recorded")
    cost_ok = True
    J = trace.slow_objectives
    stage = trace.slow_stage_costs
    for k in range(len(J) - 1):
        if trace.slow_phase[k + 1] != trace.slow_phase[k]:
            continue
        if np.isnan(J[k]) or np.isnan(J[k + 1]):
            continue
        if J[k + 1] - J[k] > -stage[k] + slack + 1e-9 * abs(J[k]):
            cost_ok = False
            violations.append(
                f"cost decrease violated at slow step {k}: "
                f"dJ={J[k + 1] - J[k]:.6e}, stage={stage[k]:.6e}")
    tail = trace.du[-window:]
    max_du = float(np.max(np.linalg.norm(tail, axis=1), initial=0.0))
    du_ok = max_du < du_threshold
    if not du_ok:
        violations.append(f"max ||du|| over final window = {max_du:.3e}")
    final_err = float(np.max(np.abs(trace.y[-1] - trace.y_ref[-1])))
    out_ok = final_err <= band
    if not out_ok:
        violations.append(f"final output error {final_err:.3e} above band {band}")
    return TheoremReport(all_feasible=all_feasible, cost_monotone=cost_ok,
                         corrections_vanish=du_ok, outputs_converge=out_ok,
                         violations=tuple(violations))

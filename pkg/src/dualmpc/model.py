"""System representations and model-derived constructions.

Covers the slow/fast partitioned plant, its N-period resampling, steady-state
target computation, the tilde system obtained by slaving the fast input to a
fast-output reference, and the velocity (increment) form with its constraint
maps.  All construction-time assumptions are validated eagerly so that a model
object in hand is one the control design is actually allowed to use.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as num
from .numerics import NumericsError

INF_BOUND = 1e18


class ModelError(ValueError):
    """Raised when a model or one of its standing assumptions is invalid."""


@dataclass(frozen=True)
class Partition:
    """Dimensions of the slow/fast split; slow indices always come first."""

    n_s: int
    n_f: int
    m_s: int
    m_f: int
    p_s: int
    p_f: int

    def __post_init__(self):
        for name in ("n_s", "n_f", "m_s", "m_f", "p_s", "p_f"):
            if getattr(self, name) < 0:
                raise ModelError(f"{name} must be nonnegative")
        if self.n == 0 or self.m == 0:
            raise ModelError("empty system")

    @property
    def n(self):
        return self.n_s + self.n_f

    @property
    def m(self):
        return self.m_s + self.m_f

    @property
    def p(self):
        return self.p_s + self.p_f


@dataclass(frozen=True)
class DiscreteLtiModel:
    """Discrete-time plant x(h+1) = A x + B u, y = C x with a slow/fast partition.

    Construction verifies the standing assumptions: eigenvalues of A inside the
    closed unit disk, square input/output channel counts (m = p, m_s = p_s),
    no invariant zero at 1, and block-diagonal C.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    partition: Partition
    step_seconds: float = 1.0

    def __post_init__(self):
        A = np.asarray(self.A, float)
        B = np.asarray(self.B, float)
        C = np.asarray(self.C, float)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        pt = self.partition
        if A.shape != (pt.n, pt.n):
            raise ModelError(f"A shape {A.shape} does not match partition n={pt.n}")
        if B.shape != (pt.n, pt.m):
            raise ModelError(f"B shape {B.shape} does not match partition")
        if C.shape != (pt.p, pt.n):
            raise ModelError(f"C shape {C.shape} does not match partition")
        if pt.m != pt.p or pt.m_s != pt.p_s:
            raise ModelError("channel counts must satisfy m = p and m_s = p_s")
        if np.any(C[:pt.p_s, pt.n_s:]) or np.any(C[pt.p_s:, :pt.n_s]):
            raise ModelError("C must be block diagonal over the slow/fast partition")
        radius = num.spectral_radius_bound(A)
        if radius > 1.0 + 1e-9:
            raise ModelError(
                f"assumption failed: spectral radius of A is {radius:.6f} > 1")
        if not num.check_no_unit_invariant_zero(A, B, C):
            raise ModelError("assumption failed: system has an invariant zero at 1")
        if self.step_seconds <= 0:
            raise ModelError("step_seconds must be positive")

    @property
    def n(self):
        return self.partition.n

    @property
    def m(self):
        return self.partition.m

    @property
    def p(self):
        return self.partition.p

    @property
    def C_ss(self):
        return self.C[:self.partition.p_s, :self.partition.n_s]

    @property
    def C_ff(self):
        return self.C[self.partition.p_s:, self.partition.n_s:]

    def step(self, x, u):
        return self.A @ x + self.B @ u

    def output(self, x):
        return self.C @ x


def from_continuous(Ac, Bc, C, partition, dt):
    """Build a DiscreteLtiModel by exact ZOH discretization of a continuous plant."""
    A, B = num.zoh_discretize(Ac, Bc, dt)
    return DiscreteLtiModel(A=A, B=B, C=np.asarray(C, float),
                            partition=partition, step_seconds=float(dt))


@dataclass(frozen=True)
class ConstraintSet:
    """Box bounds on inputs and states, plus optional per-basic-step rate bounds.

    Infinite bounds are encoded with +-INF_BOUND sentinels so QP assembly can
    stay uniform; helper predicates report which rows are actually finite.
    """

    u_lo: np.ndarray
    u_hi: np.ndarray
    x_lo: np.ndarray
    x_hi: np.ndarray
    du_lo: np.ndarray | None = None
    du_hi: np.ndarray | None = None

    def __post_init__(self):
        for name in ("u_lo", "u_hi", "x_lo", "x_hi", "du_lo", "du_hi"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.asarray(v, float))
        if np.any(self.u_lo > self.u_hi) or np.any(self.x_lo > self.x_hi):
            raise ModelError("lower bounds exceed upper bounds")
        if (self.du_lo is None) != (self.du_hi is None):
            raise ModelError("rate bounds must provide both sides")
        if self.du_lo is not None and np.any(self.du_lo > self.du_hi):
            raise ModelError("rate lower bounds exceed upper bounds")

    @staticmethod
    def unbounded(n, m):
        big = INF_BOUND
        return ConstraintSet(u_lo=-big * np.ones(m), u_hi=big * np.ones(m),
                             x_lo=-big * np.ones(n), x_hi=big * np.ones(n))

    @property
    def has_rate_bounds(self):
        return self.du_lo is not None

    def validate_targets(self, targets):
        """Check that the steady-state pair sits strictly inside the finite bounds."""
        u, x = targets.u_r, targets.x_r
        ok_u = np.all((u > self.u_lo) | (self.u_lo <= -INF_BOUND)) and \
            np.all((u < self.u_hi) | (self.u_hi >= INF_BOUND))
        ok_x = np.all((x > self.x_lo) | (self.x_lo <= -INF_BOUND)) and \
            np.all((x < self.x_hi) | (self.x_hi >= INF_BOUND))
        if not (ok_u and ok_x):
            raise ModelError("steady-state target lies on or outside the bounds")


@dataclass(frozen=True)
class Targets:
    """Steady-state triple consistent with the plant: x_r = A x_r + B u_r, y_r = C x_r."""

    y_r: np.ndarray
    x_r: np.ndarray
    u_r: np.ndarray


def steady_state_targets(model: DiscreteLtiModel, y_r) -> Targets:
    """Solve Phi (x_r, u_r) = (0, y_r) for the steady-state input and state."""
    y_r = np.asarray(y_r, float)
    n, m, p = model.n, model.m, model.p
    if y_r.shape != (p,):
        raise ModelError(f"reference must have length {p}")
    Phi = np.block([[np.eye(n) - model.A, -model.B],
                    [model.C, np.zeros((p, m))]])
    rhs = np.concatenate([np.zeros(n), y_r])
    try:
        sol = np.linalg.solve(Phi, rhs)
    except np.linalg.LinAlgError as e:
        raise ModelError("steady-state system singular") from e
    x_r, u_r = sol[:n], sol[n:]
    res1 = np.linalg.norm(model.A @ x_r + model.B @ u_r - x_r)
    res2 = np.linalg.norm(model.C @ x_r - y_r)
    if max(res1, res2) > 1e-9 * (1.0 + np.linalg.norm(y_r)):
        raise ModelError("steady-state residual above tolerance")
    return Targets(y_r=y_r, x_r=x_r, u_r=u_r)


@dataclass(frozen=True)
class SampledModel:
    """N-period resampling of the plant: A^[N] = A^N, B^[N] = sum A^(N-1-j) B."""

    AN: np.ndarray
    BN: np.ndarray
    N: int
    partition: Partition
    C: np.ndarray

    @property
    def A_ss(self):
        return self.AN[:self.partition.n_s, :self.partition.n_s]

    @property
    def A_sf(self):
        return self.AN[:self.partition.n_s, self.partition.n_s:]

    @property
    def A_fs(self):
        return self.AN[self.partition.n_s:, :self.partition.n_s]

    @property
    def A_ff(self):
        return self.AN[self.partition.n_s:, self.partition.n_s:]

    @property
    def B_ss(self):
        return self.BN[:self.partition.n_s, :self.partition.m_s]

    @property
    def B_sf(self):
        return self.BN[:self.partition.n_s, self.partition.m_s:]

    @property
    def B_fs(self):
        return self.BN[self.partition.n_s:, :self.partition.m_s]

    @property
    def B_ff(self):
        return self.BN[self.partition.n_s:, self.partition.m_s:]

    def step(self, x, u):
        return self.AN @ x + self.BN @ u


def _resample_pair(A, B, N):
    # B^[N] = sum_{j=0}^{N-1} A^(N-1-j) B accumulated as B^[k+1] = A B^[k] + B
    AN = np.linalg.matrix_power(A, N)
    BN = np.zeros_like(B)
    for _ in range(N):
        BN = A @ BN + B
    return AN, BN


def resample(model: DiscreteLtiModel, N: int) -> SampledModel:
    """Resample the plant with period N and verify stabilizability of the pair."""
    if N < 1:
        raise ModelError("N must be at least 1")
    AN, BN = _resample_pair(model.A, model.B, int(N))
    try:
        num.solve_dare_gain(AN, BN, np.eye(model.n), np.eye(model.m))
    except NumericsError as e:
        raise ModelError(
            f"assumption failed: sampled pair (A^[{N}], B^[{N}]) is not stabilizable") from e
    return SampledModel(AN=AN, BN=BN, N=int(N), partition=model.partition,
                        C=model.C.copy())


def compose_resample_law(model: DiscreteLtiModel, a: int, b: int, tol=1e-9):
    """Check that resampling by a then b equals resampling by a*b directly.

    Returns (holds, max_abs_difference) over both matrices.
    """
    if a < 1 or b < 1:
        raise ModelError("factors must be at least 1")
    A1, B1 = _resample_pair(model.A, model.B, a)
    A2, B2 = _resample_pair(A1, B1, b)
    Ad, Bd = _resample_pair(model.A, model.B, a * b)
    diff = max(np.max(np.abs(A2 - Ad)), np.max(np.abs(B2 - Bd)))
    return bool(diff <= tol), float(diff)


@dataclass(frozen=True)
class TildeSystem:
    """Sampled system with the fast input slaved to a fast-output reference.

    State map: x^[N](k+1) = A_tilde x^[N](k) + Bs_tilde u_s^[N](k)
    + Bf_tilde ytilde_fr(k), with y_s^[N] = Cs_tilde x^[N].
    """

    A_tilde: np.ndarray
    Bs_tilde: np.ndarray
    Bf_tilde: np.ndarray
    Cs_tilde: np.ndarray
    CffBff_inv: np.ndarray
    C_ff: np.ndarray
    sampled: SampledModel

    @property
    def partition(self):
        return self.sampled.partition


def build_tilde_system(sampled: SampledModel, Cff) -> TildeSystem:
    """Eliminate the fast input using the one-step fast-output tracking law."""
    pt = sampled.partition
    Cff = np.asarray(Cff, float)
    if Cff.shape != (pt.p_f, pt.n_f):
        raise ModelError("Cff shape does not match the fast block")
    CB = Cff @ sampled.B_ff
    if CB.shape[0] != CB.shape[1]:
        raise ModelError("C_ff B_ff^[N] must be square (m_f = p_f)")
    if num.rank_with_tolerance(CB, 1e-12) < CB.shape[0]:
        raise ModelError("assumption failed: C_ff B_ff^[N] is singular")
    CBi = np.linalg.solve(CB, np.eye(CB.shape[0]))
    Afs, Aff = sampled.A_fs, sampled.A_ff
    Bfs, Bff = sampled.B_fs, sampled.B_ff
    Ass, Asf = sampled.A_ss, sampled.A_sf
    Bss, Bsf = sampled.B_ss, sampled.B_sf
    A_tilde = np.block([
        [Ass - Bsf @ CBi @ Cff @ Afs, Asf - Bsf @ CBi @ Cff @ Aff],
        [Afs - Bff @ CBi @ Cff @ Afs, Aff - Bff @ CBi @ Cff @ Aff],
    ])
    Bs_tilde = np.vstack([Bss - Bsf @ CBi @ Cff @ Bfs,
                          Bfs - Bff @ CBi @ Cff @ Bfs])
    Bf_tilde = np.vstack([Bsf @ CBi, Bff @ CBi])
    Cs_tilde = np.hstack([sampled.C[:pt.p_s, :pt.n_s],
                          np.zeros((pt.p_s, pt.n_f))])
    radius = num.spectral_radius_bound(A_tilde)
    if radius > 1.0 + 1e-9:
        raise ModelError(
            f"assumption failed: spectral radius of the tilde system is {radius:.6f} > 1")
    return TildeSystem(A_tilde=A_tilde, Bs_tilde=Bs_tilde, Bf_tilde=Bf_tilde,
                       Cs_tilde=Cs_tilde, CffBff_inv=CBi, C_ff=Cff,
                       sampled=sampled)


def fast_input_for_reference(tilde: TildeSystem, x, u_s, ytil_fr):
    """Fast input that makes the next sampled fast output equal ytil_fr exactly."""
    pt = tilde.partition
    x = np.asarray(x, float)
    u_s = np.atleast_1d(np.asarray(u_s, float))
    ytil_fr = np.asarray(ytil_fr, float)
    s = tilde.sampled
    drift = tilde.C_ff @ (s.A_fs @ x[:pt.n_s] + s.A_ff @ x[pt.n_s:] + s.B_fs @ u_s)
    return tilde.CffBff_inv @ (ytil_fr - drift)


@dataclass(frozen=True)
class VelocityModel:
    """Increment-form model over xbar = (y_s, dx) with exact constraint maps.

    ``gamma`` inverts the block map from (x(k), u_s(k)) to xbar(k+1) up to the
    fast-reference feedthrough; ``gamma_corr`` = gamma @ Bf_bar carries that
    feedthrough so reconstruction stays exact for any alpha trajectory.
    """

    A_bar: np.ndarray
    Bs_bar: np.ndarray
    Bf_bar: np.ndarray
    C_bar: np.ndarray
    tilde: TildeSystem
    gamma: np.ndarray
    gamma_xs: np.ndarray
    gamma_us: np.ndarray
    gamma_uf: np.ndarray
    gamma_corr: np.ndarray
    CffBff_inv: np.ndarray

    @property
    def partition(self):
        return self.tilde.partition

    @property
    def dim(self):
        return self.A_bar.shape[0]


def build_velocity_form(tilde: TildeSystem) -> VelocityModel:
    """Assemble the velocity form and certify its stabilizability (PBH at +-1)."""
    pt = tilde.partition
    n, ps, ms = pt.n, pt.p_s, pt.m_s
    At, Bs, Bf, Cs = tilde.A_tilde, tilde.Bs_tilde, tilde.Bf_tilde, tilde.Cs_tilde
    A_bar = np.block([[np.eye(ps), Cs @ At],
                      [np.zeros((n, ps)), At]])
    Bs_bar = np.vstack([Cs @ Bs, Bs])
    Bf_bar = np.vstack([Cs @ Bf, Bf])
    C_bar = np.hstack([np.eye(ps), np.zeros((ps, n))])
    M = np.block([[Cs @ At, Cs @ Bs],
                  [At - np.eye(n), Bs]])
    if M.shape[0] != M.shape[1]:
        raise ModelError("velocity constraint map is not square (needs m_s = p_s)")
    try:
        gamma = np.linalg.solve(M, np.eye(M.shape[0]))
    except np.linalg.LinAlgError as e:
        raise ModelError("velocity constraint map is singular") from e
    resid = np.max(np.abs(gamma @ M - np.eye(M.shape[0])))
    if resid > 1e-10:
        raise ModelError(f"constraint-map inverse residual {resid:.3e} above tolerance")
    if not num.check_pbh_stabilizable_velocity(At, Bs, Cs):
        raise ModelError("assumption failed: velocity-form pair is not stabilizable")
    s = tilde.sampled
    gamma_xs = gamma[:pt.n_s]
    gamma_us = gamma[n:]
    stack = np.hstack([s.A_fs, s.A_ff, s.B_fs])
    gamma_uf = tilde.CffBff_inv @ tilde.C_ff @ stack @ gamma
    return VelocityModel(A_bar=A_bar, Bs_bar=Bs_bar, Bf_bar=Bf_bar, C_bar=C_bar,
                         tilde=tilde, gamma=gamma, gamma_xs=gamma_xs,
                         gamma_us=gamma_us, gamma_uf=gamma_uf,
                         gamma_corr=gamma @ Bf_bar,
                         CffBff_inv=tilde.CffBff_inv)


def reconstruct_from_velocity(vel: VelocityModel, xbar_next, ytil_fr):
    """Recover (x(k), u_s(k), u_f(k)) from xbar(k+1) and the fast reference.

    Exact inverse of the velocity dynamics: the feedthrough of ytilde_fr is
    subtracted before applying gamma, then the fast input follows from the
    one-step tracking law.
    """
    xbar_next = np.asarray(xbar_next, float)
    ytil_fr = np.asarray(ytil_fr, float)
    pt = vel.partition
    sol = vel.gamma @ xbar_next - vel.gamma_corr @ ytil_fr
    x = sol[:pt.n]
    u_s = sol[pt.n:]
    u_f = fast_input_for_reference(vel.tilde, x, u_s, ytil_fr)
    return x, u_s, u_f

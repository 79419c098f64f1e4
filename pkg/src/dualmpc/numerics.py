"""Dense linear-algebra and control-theoretic solvers shared by the whole package.

Everything here is a pure function of numpy arrays.  Stability is certified
through Lyapunov solutions rather than a general eigensolver, so the same
machinery that builds the controller designs also backs the runtime checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NumericsError(ValueError):
    """Raised when a numeric precondition fails (dimensions, stability, rank)."""


def _as_matrix(M, name="matrix"):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise NumericsError(f"{name} must be 2-D, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NumericsError(f"{name} contains non-finite entries")
    return M


def _require_square(M, name="matrix"):
    M = _as_matrix(M, name)
    if M.shape[0] != M.shape[1]:
        raise NumericsError(f"{name} must be square, got shape {M.shape}")
    return M


def symmetrize(M):
    M = _as_matrix(M)
    return 0.5 * (M + M.T)


def mat_exp(A, t=1.0):
    """Matrix exponential exp(A*t) by scaling-and-squaring of a truncated series.

    The argument is scaled until its infinity norm is below 0.5, a fixed-order
    Taylor series is summed (order 20, truncation far below 1e-12 relative at
    that norm), and the result is repeatedly squared.
    """
    A = _require_square(A, "A")
    M = A * float(t)
    nrm = np.linalg.norm(M, np.inf)
    s = 0
    if nrm > 0.5:
        s = int(np.ceil(np.log2(nrm / 0.5)))
        M = M / (2.0 ** s)
    n = M.shape[0]
    E = np.eye(n)
    term = np.eye(n)
    for k in range(1, 21):
        term = term @ M / k
        E = E + term
    for _ in range(s):
        E = E @ E
    return E


def zoh_discretize(Ac, Bc, dt):
    """Exact zero-order-hold discretization of dx/dt = Ac x + Bc u.

    Returns (A, B) as the top blocks of exp([[Ac, Bc], [0, 0]] * dt).
    """
    Ac = _require_square(Ac, "Ac")
    Bc = _as_matrix(Bc, "Bc")
    if Bc.shape[0] != Ac.shape[0]:
        raise NumericsError(f"Bc rows {Bc.shape[0]} != Ac size {Ac.shape[0]}")
    if dt <= 0:
        raise NumericsError("dt must be positive")
    n, m = Bc.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = Ac
    M[:n, n:] = Bc
    E = mat_exp(M, dt)
    return E[:n, :n], E[:n, n:]


def _lyap_raw(F, Q):
    """Solve F'PF - P + Q = 0 by Kronecker vectorization, without stability checks."""
    n = F.shape[0]
    K = np.eye(n * n) - np.kron(F.T, F.T)
    vec = np.linalg.solve(K, Q.reshape(n * n))
    return symmetrize(vec.reshape(n, n))


def _ldl_min_pivot(S):
    """Smallest pivot of a diagonally pivoted symmetric factorization of S.

    Greedy pivoted Cholesky on the largest remaining diagonal entry; the
    returned value is negative or tiny when S is not positive definite.
    """
    S = symmetrize(S).copy()
    active = list(range(S.shape[0]))
    min_pivot = np.inf
    while active:
        j = max(active, key=lambda i: S[i, i])
        d = S[j, j]
        min_pivot = min(min_pivot, d)
        if d <= 0:
            return min_pivot
        active.remove(j)
        rest = np.array(active, dtype=int)
        if rest.size:
            col = S[rest, j] / d
            S[np.ix_(rest, rest)] -= np.outer(col, S[rest, j])
    return min_pivot


def is_positive_definite(S, pivot_tol=1e-12):
    """Positive definiteness via pivoted symmetric factorization."""
    S = _require_square(S, "S")
    scale = max(1.0, float(np.max(np.abs(S))))
    return _ldl_min_pivot(S) > pivot_tol * scale


@dataclass(frozen=True)
class StabilityReport:
    """Outcome of a Schur-stability test.

    When ``is_schur`` the certificate P is symmetric positive definite and
    satisfies F'PF - P = -I within tolerance.
    """

    is_schur: bool
    certificate: np.ndarray | None = None


def is_schur_stable(F) -> StabilityReport:
    """Certify strict Schur stability of F through the Lyapunov equation F'PF - P = -I."""
    F = _require_square(F, "F")
    n = F.shape[0]
    I = np.eye(n)
    try:
        P = _lyap_raw(F, I)
    except np.linalg.LinAlgError:
        return StabilityReport(False)
    resid = np.linalg.norm(F.T @ P @ F - P + I, "fro")
    if not np.all(np.isfinite(P)) or resid > 1e-8 * (1.0 + np.linalg.norm(P, "fro")):
        return StabilityReport(False)
    if not is_positive_definite(P):
        return StabilityReport(False)
    return StabilityReport(True, P)


def solve_discrete_lyapunov(F, Q):
    """Solve F'PF - P + Q = 0 for Schur-stable F and symmetric PSD Q.

    The residual is checked against 1e-10 * (1 + ||Q||_F).
    """
    F = _require_square(F, "F")
    Q = _require_square(Q, "Q")
    if F.shape != Q.shape:
        raise NumericsError("F and Q must have the same shape")
    if not is_schur_stable(F).is_schur:
        raise NumericsError("F is not Schur stable; Lyapunov equation has no PSD solution")
    P = _lyap_raw(F, symmetrize(Q))
    resid = np.linalg.norm(F.T @ P @ F - P + Q, "fro")
    if resid > 1e-10 * (1.0 + np.linalg.norm(Q, "fro")):
        raise NumericsError(f"Lyapunov residual {resid:.3e} above tolerance")
    return P


def solve_dare_gain(A, B, Q, R, max_iter=10000, tol=1e-9):
    """Solve the discrete algebraic Riccati equation and the optimal feedback.

    Returns (K, P) with u = K x, K carrying the minus sign, and A + B K Schur
    stable.  A fixed-point Riccati recursion supplies a stabilizing iterate and
    Newton (Kleinman) steps polish the residual below ``tol``.
    """
    A = _require_square(A, "A")
    B = _as_matrix(B, "B")
    Q = symmetrize(_require_square(Q, "Q"))
    R = symmetrize(_require_square(R, "R"))
    n, m = B.shape
    if A.shape[0] != n or R.shape[0] != m:
        raise NumericsError("inconsistent DARE dimensions")
    if not is_positive_definite(R):
        raise NumericsError("R must be positive definite")

    def gain(P):
        return -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)

    def residual(P):
        K = gain(P)
        return np.linalg.norm(A.T @ P @ (A + B @ K) + Q - P, "fro")

    P = Q.copy()
    prev_step = np.inf
    stagnant = 0
    for _ in range(max_iter):
        K = gain(P)
        Pn = symmetrize(A.T @ P @ (A + B @ K) + Q)
        step = np.linalg.norm(Pn - P, "fro")
        P = Pn
        if step < 1e-12 * (1.0 + np.linalg.norm(P, "fro")):
            break
        if step > prev_step * (1.0 - 1e-12):
            stagnant += 1
            if stagnant > 50 and step > 1e-2 * (1.0 + np.linalg.norm(P, "fro")):
                raise NumericsError("DARE iteration stagnated; pair may not be stabilizable")
        else:
            stagnant = 0
        prev_step = step
    K = gain(P)
    if not is_schur_stable(A + B @ K).is_schur:
        raise NumericsError("DARE iteration did not produce a stabilizing gain")
    # Kleinman polish: each step solves a Lyapunov equation at the current gain.
    for _ in range(20):
        if residual(P) <= tol:
            break
        F = A + B @ K
        P = _lyap_raw(F, symmetrize(Q + K.T @ R @ K))
        K = gain(P)
    if residual(P) > tol:
        raise NumericsError(f"DARE residual {residual(P):.3e} above tolerance {tol:.1e}")
    return gain(P), symmetrize(P)


def spectral_radius_bound(A, squarings=40):
    """Upper estimate of the spectral radius via norm-rescaled repeated squaring.

    Computes ||A^(2^s)||_2 ** (1 / 2^s), which upper-bounds the spectral radius
    and converges to it; matrices are renormalized between squarings so the
    estimate never overflows.
    """
    A = _require_square(A, "A")
    if not np.any(A):
        return 0.0
    M = A.copy()
    log_est = 0.0
    weight = 1.0
    for _ in range(squarings):
        nm = np.linalg.norm(M, 2)
        if nm == 0.0:
            return 0.0
        weight *= 0.5
        log_est += weight * 2.0 * np.log(nm)
        M = (M / nm) @ (M / nm)
    log_est += weight * np.log(max(np.linalg.norm(M, 2), 1e-300))
    return float(np.exp(log_est))


def rank_with_tolerance(M, tol=1e-9):
    """Numerical rank via Householder QR with column pivoting.

    Counts diagonal magnitudes of R above tol times the largest one.
    """
    M = _as_matrix(M, "M")
    if tol <= 0:
        raise NumericsError("tol must be positive")
    R = M.copy()
    rows, cols = R.shape
    steps = min(rows, cols)
    diag = []
    col_norms = np.sum(R * R, axis=0)
    for k in range(steps):
        j = k + int(np.argmax(col_norms[k:]))
        if col_norms[j] <= 0:
            break
        R[:, [k, j]] = R[:, [j, k]]
        col_norms[[k, j]] = col_norms[[j, k]]
        x = R[k:, k]
        alpha = -np.sign(x[0]) * np.linalg.norm(x) if x[0] != 0 else -np.linalg.norm(x)
        if alpha == 0:
            diag.append(0.0)
            continue
        v = x.copy()
        v[0] -= alpha
        vn = np.linalg.norm(v)
        if vn > 0:
            v = v / vn
            R[k:, k:] -= 2.0 * np.outer(v, v @ R[k:, k:])
        diag.append(abs(R[k, k]))
        col_norms[k + 1:] = np.sum(R[k + 1:, k + 1:] ** 2, axis=0)
    if not diag:
        return 0
    largest = max(diag)
    if largest == 0.0:
        return 0
    return int(sum(d > tol * largest for d in diag))


def check_no_unit_invariant_zero(A, B, C, tol=1e-9):
    """Assumption check: the system (A, B, C) has no invariant zero at 1.

    Builds Phi = [[I - A, -B], [C, 0]] (square because m = p) and tests that
    |det Phi| exceeds a Hadamard-scaled tolerance.
    """
    A = _require_square(A, "A")
    B = _as_matrix(B, "B")
    C = _as_matrix(C, "C")
    n, m = B.shape
    p = C.shape[0]
    if m != p:
        raise NumericsError(f"square composite requires m == p, got m={m}, p={p}")
    Phi = np.block([[np.eye(n) - A, -B], [C, np.zeros((p, m))]])
    det = np.linalg.det(Phi)
    hadamard = float(np.prod(np.linalg.norm(Phi, axis=1)))
    return bool(abs(det) > tol * max(1.0, hadamard))


def check_pbh_stabilizable_velocity(A_tilde, Bs_tilde, Cs_tilde, tol=1e-9):
    """PBH stabilizability test for the velocity-form pair at lambda = 1 and -1.

    Both rank conditions must equal n + p_s, where n is the state dimension of
    the tilde system and p_s the slow output count.
    """
    A_tilde = _require_square(A_tilde, "A_tilde")
    Bs_tilde = _as_matrix(Bs_tilde, "Bs_tilde")
    Cs_tilde = _as_matrix(Cs_tilde, "Cs_tilde")
    n = A_tilde.shape[0]
    ps = Cs_tilde.shape[0]
    CA = Cs_tilde @ A_tilde
    CB = Cs_tilde @ Bs_tilde
    want = n + ps
    M1 = np.block([[CA.T, (A_tilde - np.eye(n)).T], [CB.T, Bs_tilde.T]])
    if rank_with_tolerance(M1, tol) != want:
        return False
    M2 = np.block([
        [2.0 * np.eye(ps), np.zeros((ps, n))],
        [CA.T, (A_tilde + np.eye(n)).T],
        [CB.T, Bs_tilde.T],
    ])
    return rank_with_tolerance(M2, tol) == want

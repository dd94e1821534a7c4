"""C-SVM and nu-SVM dual solvers over precomputed kernels.

Both solvers run sequential minimal optimization with maximal-violating-
pair working set selection, which is deterministic and provably
convergent for positive definite kernels. The nu variant keeps two
equality constraints (sum alpha_i y_i = 0 and sum alpha_i = nu), so its
working pairs are chosen within one class at a time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "SvmConfig",
    "SvmSolution",
    "SmoNonConvergenceError",
    "NuFeasibilityError",
    "solve_csvm",
    "solve_nusvm",
    "solve_svm",
    "kernel_quad_forms",
    "decision_values",
]

_REFRESH_EVERY = 16384  # periodic gradient recompute, caps fp drift


class SmoNonConvergenceError(RuntimeError):
    """Raised when SMO hits its iteration cap before reaching the KKT tolerance."""

    def __init__(self, violation: float, iterations: int):
        super().__init__(
            f"SMO did not converge after {iterations} iterations "
            f"(KKT violation {violation:.3e})"
        )
        self.violation = violation
        self.iterations = iterations


class NuFeasibilityError(ValueError):
    """Raised when nu exceeds what the class balance allows."""


@dataclass(frozen=True)
class SvmConfig:
    """Inner-solver settings.

    variant ``c`` uses the box 0 <= alpha <= c; variant ``nu`` uses
    0 <= alpha <= 1/m with sum(alpha) = nu. ``max_passes`` of None
    scales the iteration guard with the problem size.
    """

    variant: str = "c"
    c: float = 10.0
    nu: float = 0.2
    kkt_tolerance: float = 1e-6
    max_passes: int | None = None

    def __post_init__(self):
        if self.variant not in ("c", "nu"):
            raise ValueError(f"unknown SVM variant {self.variant!r}")
        if self.variant == "c" and not self.c > 0:
            raise ValueError("c must be strictly positive")
        if self.variant == "nu" and not 0 < self.nu <= 1:
            raise ValueError("nu must lie in (0, 1]")
        if not self.kkt_tolerance > 0:
            raise ValueError("kkt_tolerance must be positive")

    def iteration_guard(self, m: int) -> int:
        if self.max_passes is not None:
            return self.max_passes
        return max(200_000, 2000 * m)


@dataclass
class SvmSolution:
    """Dual solution: variables, bias, objective and bookkeeping.

    ``rho`` is the margin of the nu variant and None otherwise.
    """

    alpha: np.ndarray
    bias: float
    dual_objective: float
    support_indices: np.ndarray
    rho: float | None = None
    iterations: int = 0
    kkt_violation: float = 0.0


@njit(cache=True)
def _smo_csvm(K, y, alpha, c, tol, max_iter):
    m = K.shape[0]
    u = K @ (alpha * y)
    diag = np.empty(m)
    for k in range(m):
        diag[k] = K[k, k]
    viol = 0.0
    for it in range(1, max_iter + 1):
        if it % _REFRESH_EVERY == 0:
            u = K @ (alpha * y)
        # maximal violating index i, plus the KKT residual
        i = -1
        f_up = -np.inf
        f_low = np.inf
        any_low = False
        for k in range(m):
            fk = y[k] - u[k]
            if (y[k] > 0 and alpha[k] < c) or (y[k] < 0 and alpha[k] > 0.0):
                if fk > f_up:
                    f_up = fk
                    i = k
            if (y[k] > 0 and alpha[k] > 0.0) or (y[k] < 0 and alpha[k] < c):
                any_low = True
                if fk < f_low:
                    f_low = fk
        if i < 0 or not any_low:
            return it - 1, 0.0
        viol = f_up - f_low
        if viol <= tol:
            return it - 1, viol
        # second-order partner: largest decrease of the dual objective
        j = -1
        best = -np.inf
        eta_j = 1.0
        for k in range(m):
            if (y[k] > 0 and alpha[k] > 0.0) or (y[k] < 0 and alpha[k] < c):
                diff = f_up - (y[k] - u[k])
                if diff > 0.0:
                    eta = diag[i] + diag[k] - 2.0 * K[i, k]
                    if eta < 1e-12:
                        eta = 1e-12
                    gain = diff * diff / eta
                    if gain > best:
                        best = gain
                        j = k
                        eta_j = eta
        if j < 0:
            return it - 1, viol
        eta = eta_j
        lam = (f_up - (y[j] - u[j])) / eta
        room_i = (c - alpha[i]) if y[i] > 0 else alpha[i]
        room_j = alpha[j] if y[j] > 0 else (c - alpha[j])
        pair = y[i] * alpha[i] + y[j] * alpha[j]
        ai_old = alpha[i]
        aj_old = alpha[j]
        if room_i <= lam and room_i <= room_j:
            ai = c if y[i] > 0 else 0.0
            aj = y[j] * (pair - y[i] * ai)
        elif room_j <= lam:
            aj = 0.0 if y[j] > 0 else c
            ai = y[i] * (pair - y[j] * aj)
        else:
            ai = alpha[i] + y[i] * lam
            aj = alpha[j] - y[j] * lam
        ai = min(max(ai, 0.0), c)
        aj = min(max(aj, 0.0), c)
        alpha[i] = ai
        alpha[j] = aj
        di = y[i] * (ai - ai_old)
        dj = y[j] * (aj - aj_old)
        for k in range(m):
            u[k] += di * K[i, k] + dj * K[j, k]
    return max_iter, viol


@njit(cache=True)
def _smo_nusvm(K, y, alpha, ub, tol, max_iter):
    m = K.shape[0]
    u = K @ (alpha * y)
    diag = np.empty(m)
    for k in range(m):
        diag[k] = K[k, k]
    viol = 0.0
    for it in range(1, max_iter + 1):
        if it % _REFRESH_EVERY == 0:
            u = K @ (alpha * y)
        # per-class candidates; G_k = y_k * u_k; pairs stay within a class
        # so that both equality constraints are preserved
        ip = -1
        inn = -1
        g_up_p = np.inf
        g_dn_p = -np.inf
        g_up_n = np.inf
        g_dn_n = -np.inf
        any_dn_p = False
        any_dn_n = False
        for k in range(m):
            gk = y[k] * u[k]
            if y[k] > 0:
                if alpha[k] < ub and gk < g_up_p:
                    g_up_p = gk
                    ip = k
                if alpha[k] > 0.0:
                    any_dn_p = True
                    if gk > g_dn_p:
                        g_dn_p = gk
            else:
                if alpha[k] < ub and gk < g_up_n:
                    g_up_n = gk
                    inn = k
                if alpha[k] > 0.0:
                    any_dn_n = True
                    if gk > g_dn_n:
                        g_dn_n = gk
        viol_p = (g_dn_p - g_up_p) if (ip >= 0 and any_dn_p) else -np.inf
        viol_n = (g_dn_n - g_up_n) if (inn >= 0 and any_dn_n) else -np.inf
        viol = max(viol_p, viol_n)
        if viol == -np.inf:
            return it - 1, 0.0
        if viol <= tol:
            return it - 1, max(viol, 0.0)
        # second-order partner within either class
        j = -1
        i = -1
        best = -np.inf
        eta_j = 1.0
        for k in range(m):
            if alpha[k] > 0.0:
                gk = y[k] * u[k]
                if y[k] > 0 and ip >= 0:
                    diff = gk - g_up_p
                    cand = ip
                elif y[k] < 0 and inn >= 0:
                    diff = gk - g_up_n
                    cand = inn
                else:
                    continue
                if diff > 0.0:
                    eta = diag[cand] + diag[k] - 2.0 * K[cand, k]
                    if eta < 1e-12:
                        eta = 1e-12
                    gain = diff * diff / eta
                    if gain > best:
                        best = gain
                        j = k
                        i = cand
                        eta_j = eta
        if j < 0:
            return it - 1, viol
        eta = eta_j
        lam = (y[j] * u[j] - y[i] * u[i]) / eta  # same-class move alpha_i += lam, alpha_j -= lam
        room_i = ub - alpha[i]
        room_j = alpha[j]
        pair = alpha[i] + alpha[j]
        ai_old = alpha[i]
        aj_old = alpha[j]
        if room_i <= lam and room_i <= room_j:
            ai = ub
            aj = pair - ai
        elif room_j <= lam:
            aj = 0.0
            ai = pair
        else:
            ai = alpha[i] + lam
            aj = alpha[j] - lam
        ai = min(max(ai, 0.0), ub)
        aj = min(max(aj, 0.0), ub)
        alpha[i] = ai
        alpha[j] = aj
        di = y[i] * (ai - ai_old)
        dj = y[j] * (aj - aj_old)
        for k in range(m):
            u[k] += di * K[i, k] + dj * K[j, k]
    return max_iter, viol


def _as_matrix(K) -> np.ndarray:
    vals = getattr(K, "values", K)
    return np.ascontiguousarray(vals, dtype=np.float64)


def _check_labels(y, m: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != m:
        raise ValueError(f"labels length {y.shape[0]} does not match kernel size {m}")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be in {+1, -1}")
    return y


def _warm_or(alpha0, m: int, lo: float, hi: float, y) -> np.ndarray | None:
    """Accept a warm start only if it still satisfies the constraints."""
    if alpha0 is None:
        return None
    alpha = np.array(alpha0, dtype=np.float64, copy=True).reshape(-1)
    if alpha.shape[0] != m:
        return None
    np.clip(alpha, lo, hi, out=alpha)
    if abs(float(alpha @ y)) > 1e-9 * max(1.0, float(alpha.sum())):
        return None
    return alpha


def solve_csvm(K, y, cfg: SvmConfig, warm_start=None) -> SvmSolution:
    """Maximize sum(alpha) - 0.5 alpha' Y K Y alpha over the C-SVM feasible set."""
    if cfg.variant != "c":
        raise ValueError("solve_csvm requires a c-variant config")
    Kv = _as_matrix(K)
    m = Kv.shape[0]
    y = _check_labels(y, m)
    alpha = _warm_or(warm_start, m, 0.0, cfg.c, y)
    if alpha is None:
        alpha = np.zeros(m)
    max_iter = cfg.iteration_guard(m)
    iters, viol = _smo_csvm(Kv, y, alpha, cfg.c, cfg.kkt_tolerance, max_iter)
    if viol > cfg.kkt_tolerance:
        raise SmoNonConvergenceError(viol, iters)
    u = Kv @ (alpha * y)
    f = y - u
    free = (alpha > 1e-8 * cfg.c) & (alpha < cfg.c * (1.0 - 1e-8))
    up = ((y > 0) & (alpha < cfg.c)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < cfg.c))
    bias = _interval_value(f, free, up, low)
    objective = float(alpha.sum() - 0.5 * (alpha * y) @ u)
    support = np.flatnonzero(alpha > cfg.kkt_tolerance)
    return SvmSolution(alpha, bias, objective, support, rho=None, iterations=iters, kkt_violation=viol)


def _interval_value(f, free, lower_set, upper_set) -> float:
    """Average of f over free points; else midpoint of the KKT interval."""
    if np.any(free):
        return float(f[free].mean())
    lo = float(f[lower_set].max()) if np.any(lower_set) else -np.inf
    hi = float(f[upper_set].min()) if np.any(upper_set) else np.inf
    if np.isfinite(lo) and np.isfinite(hi):
        return 0.5 * (lo + hi)
    if np.isfinite(lo):
        return lo
    if np.isfinite(hi):
        return hi
    return 0.0


def nu_upper_bound(y) -> float:
    """Largest feasible nu for the given labels: 2 min(m+, m-) / m."""
    y = np.asarray(y)
    mp = int(np.sum(y > 0))
    mn = int(np.sum(y < 0))
    return 2.0 * min(mp, mn) / y.shape[0]


def solve_nusvm(K, y, cfg: SvmConfig, warm_start=None) -> SvmSolution:
    """Maximize -0.5 alpha' Y K Y alpha with 0 <= alpha <= 1/m and sum(alpha) = nu.

    The sum constraint is kept as an equality: at optimality of the nu
    formulation it is tight, and equality makes the same-class pair
    updates preserve feasibility exactly.
    """
    if cfg.variant != "nu":
        raise ValueError("solve_nusvm requires a nu-variant config")
    Kv = _as_matrix(K)
    m = Kv.shape[0]
    y = _check_labels(y, m)
    mp = int(np.sum(y > 0))
    mn = int(np.sum(y < 0))
    limit = 2.0 * min(mp, mn) / m
    if cfg.nu > limit + 1e-12:
        raise NuFeasibilityError(
            f"nu={cfg.nu} infeasible: class balance allows at most {limit:.6g}"
        )
    ub = 1.0 / m
    alpha = _warm_or(warm_start, m, 0.0, ub, y)
    if alpha is not None and abs(float(alpha.sum()) - cfg.nu) > 1e-9 * max(1.0, cfg.nu):
        alpha = None
    if alpha is None:
        alpha = np.where(y > 0, cfg.nu / (2.0 * mp), cfg.nu / (2.0 * mn))
    max_iter = cfg.iteration_guard(m)
    iters, viol = _smo_nusvm(Kv, y, alpha, ub, cfg.kkt_tolerance, max_iter)
    if viol > cfg.kkt_tolerance:
        raise SmoNonConvergenceError(viol, iters)
    u = Kv @ (alpha * y)
    g = y * u
    pos = y > 0
    neg = ~pos
    free = (alpha > 1e-8 * ub) & (alpha < ub * (1.0 - 1e-8))
    # KKT: for free positives G = rho - b, for free negatives G = rho + b
    s_p = _interval_value(g, free & pos, pos & (alpha >= ub), pos & (alpha <= 0))
    s_n = _interval_value(g, free & neg, neg & (alpha >= ub), neg & (alpha <= 0))
    rho = 0.5 * (s_p + s_n)
    bias = 0.5 * (s_n - s_p)
    objective = float(-0.5 * (alpha * y) @ u)
    support = np.flatnonzero(alpha > cfg.kkt_tolerance)
    return SvmSolution(alpha, bias, objective, support, rho=rho, iterations=iters, kkt_violation=viol)


def solve_svm(K, y, cfg: SvmConfig, warm_start=None) -> SvmSolution:
    if cfg.variant == "c":
        return solve_csvm(K, y, cfg, warm_start=warm_start)
    return solve_nusvm(K, y, cfg, warm_start=warm_start)


def kernel_quad_forms(alpha, y, bank) -> np.ndarray:
    """Per-kernel quadratic forms d_j = (alpha*y)' K_j (alpha*y).

    These measure each kernel's contribution at the current dual point
    and drive the weight updates; they are nonnegative up to fp noise
    for positive semidefinite kernels.
    """
    alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    m = bank.n_samples
    if alpha.shape[0] != m or y.shape[0] != m:
        raise ValueError("alpha and labels must match the bank's sample count")
    z = alpha * y
    stacked3 = bank.stacked().reshape(bank.n_kernels, m, m)
    return np.ascontiguousarray((stacked3 @ z) @ z)


def decision_values(model: SvmSolution, K_cross, y) -> np.ndarray:
    """Decision function over columns of K_cross: f_t = sum_i alpha_i y_i K[i,t] + b."""
    Kc = np.asarray(getattr(K_cross, "values", K_cross), dtype=np.float64)
    if Kc.ndim != 2:
        raise ValueError("K_cross must be 2-d (train x eval)")
    alpha = np.asarray(model.alpha, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if Kc.shape[0] != alpha.shape[0] or y.shape[0] != alpha.shape[0]:
        raise ValueError(
            f"K_cross has {Kc.shape[0]} rows; expected {alpha.shape[0]} training samples"
        )
    return (alpha * y) @ Kc + model.bias

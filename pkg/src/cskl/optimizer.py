"""Kernel-weight learning over capped-simplex, unit-simplex and lp-ball sets.

The main trainer alternates an SMO solve for the dual variables with a
descent step on the kernel weights. Weights live on the capped simplex
{sum gamma = t, 0 <= gamma <= 1}, so the integer t directly bounds how
many kernels the solution can select: the linear maximizer over that set
puts weight 1 on the t best kernels (ties split evenly). A unit-simplex
variant (classic sparse MKL) and an lp-ball variant with a closed-form
weight update serve as baselines.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelBank, combined_values
from .svm import SvmConfig, kernel_quad_forms, solve_svm

__all__ = [
    "MklWeights",
    "CsklConfig",
    "TraceEntry",
    "OptTrace",
    "top_t_sum",
    "top_t_weights",
    "capped_simplex_argmax",
    "descent_direction",
    "max_step",
    "lp_direction",
    "reduced_gradient_gamma_step",
    "cskl_train",
    "simplemkl_train",
    "lpnorm_mkl_train",
]

SNAP_TOL = 1e-12  # weights below this are snapped to zero after each step
_STALL_LIMIT = 25  # consecutive stalled-but-uncertified iterations before giving up
BOUND_TOL = 1e-12


@dataclass
class MklWeights:
    """Kernel weight vector together with its constraint set."""

    gamma: np.ndarray
    constraint: str  # capped_simplex | unit_simplex | lp_ball
    t: int | None = None
    p: float | None = None

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)

    def validate(self) -> None:
        g = self.gamma
        if self.constraint == "capped_simplex":
            if self.t is None:
                raise ValueError("capped_simplex weights need t")
            if g.min() < -BOUND_TOL or g.max() > 1.0 + BOUND_TOL:
                raise ValueError("weights outside [0, 1]")
            if abs(float(g.sum()) - self.t) > 1e-8:
                raise ValueError(f"weights sum {g.sum()} != t={self.t}")
        elif self.constraint == "unit_simplex":
            if g.min() < -BOUND_TOL:
                raise ValueError("negative weight on the simplex")
            if abs(float(g.sum()) - 1.0) > 1e-8:
                raise ValueError(f"weights sum {g.sum()} != 1")
        elif self.constraint == "lp_ball":
            if self.p is None or not self.p > 1:
                raise ValueError("lp_ball weights need p > 1")
            if g.min() < -BOUND_TOL:
                raise ValueError("negative weight in the lp ball")
            if float(np.sum(g**self.p)) ** (1.0 / self.p) > 1.0 + 1e-8:
                raise ValueError("weights outside the unit lp ball")
        else:
            raise ValueError(f"unknown constraint {self.constraint!r}")

    @property
    def selected(self) -> np.ndarray:
        """Indices of kernels carrying weight above 1e-6."""
        return np.flatnonzero(self.gamma > 1e-6)


@dataclass(frozen=True)
class CsklConfig:
    """Outer-loop settings for the capped-simplex trainer.

    ``certificate_tolerance`` bounds the relative slack allowed in the
    top-t optimality certificate g_t(d) - gamma'd at a convergent exit.
    """

    t: int
    svm: SvmConfig = field(default_factory=SvmConfig)
    outer_tolerance: float = 1e-5
    max_outer_iters: int = 200
    gamma_step: str = "reduced_gradient"  # or lp_direction
    line_search_max_evals: int = 30
    line_search_tol: float = 1e-6
    certificate_tolerance: float = 1e-4

    def __post_init__(self):
        if self.t < 1:
            raise ValueError("t must be at least 1")
        if not self.outer_tolerance > 0:
            raise ValueError("outer_tolerance must be positive")
        if self.gamma_step not in ("reduced_gradient", "lp_direction"):
            raise ValueError(f"unknown gamma_step {self.gamma_step!r}")


@dataclass
class TraceEntry:
    iteration: int
    objective: float
    gamma: np.ndarray
    d: np.ndarray
    step_size: float
    inner_iterations: int
    inner_kkt_violation: float
    wall_time: float
    certificate_slack: float


@dataclass
class OptTrace:
    """Per-outer-iteration audit trail of a training run."""

    solver: str
    entries: list[TraceEntry] = field(default_factory=list)
    converged: bool = False

    def objectives(self) -> np.ndarray:
        return np.array([e.objective for e in self.entries])

    def csv_rows(self):
        """Rows (iteration, objective, step, sum gamma, nonzero count)."""
        for e in self.entries:
            yield (
                e.iteration,
                e.objective,
                e.step_size,
                float(e.gamma.sum()),
                int(np.count_nonzero(e.gamma > 1e-6)),
            )


# ---------------------------------------------------------------------------
# capped-simplex linear maximization
# ---------------------------------------------------------------------------


def top_t_sum(v, t: int) -> float:
    """Sum of the t largest components of v."""
    v = np.asarray(v, dtype=np.float64)
    if not 1 <= t <= v.shape[0]:
        raise ValueError(f"t={t} out of range for {v.shape[0]} entries")
    return float(np.sort(v)[::-1][:t].sum())


def capped_simplex_argmax(v, mass: float) -> np.ndarray:
    """Maximize x'v subject to sum(x) = mass, 0 <= x <= 1.

    Entries strictly above the threshold value get 1, strictly below get
    0, and the tie set at the threshold splits the leftover mass evenly.
    """
    v = np.asarray(v, dtype=np.float64)
    n = v.shape[0]
    if mass < 0 or mass > n:
        raise ValueError(f"mass {mass} outside [0, {n}]")
    if mass == 0:
        return np.zeros(n)
    if mass >= n:
        return np.ones(n)
    kth = int(np.ceil(mass)) - 1
    theta = np.sort(v)[::-1][kth]
    above = v > theta
    tie = v == theta
    x = above.astype(np.float64)
    leftover = mass - float(above.sum())
    x[tie] = leftover / int(tie.sum())
    return x


def top_t_weights(v, t: int) -> MklWeights:
    """Capped-simplex maximizer of v: weight 1 on the t largest entries.

    Ties at the t-th largest value share the remaining mass equally, so
    the result is deterministic, symmetric, and exactly optimal.
    """
    v = np.asarray(v, dtype=np.float64)
    if not 1 <= t <= v.shape[0]:
        raise ValueError(f"t={t} out of range for {v.shape[0]} entries")
    return MklWeights(capped_simplex_argmax(v, float(t)), "capped_simplex", t=t)


# ---------------------------------------------------------------------------
# descent directions and steps
# ---------------------------------------------------------------------------


def descent_direction(gamma, pivot: int, grad, upper: float | None = 1.0) -> np.ndarray:
    """Reduced-gradient descent direction with pivot coordinate ``pivot``.

    Components at an active bound whose move would leave the box are
    zeroed; the pivot absorbs the negated sum so the direction keeps
    sum(gamma) constant. Guarantees grad'D <= 0.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    red = grad - grad[pivot]
    D = -red
    blocked = (gamma <= BOUND_TOL) & (red > 0)
    if upper is not None:
        blocked |= (gamma >= upper - BOUND_TOL) & (red < 0)
    D[blocked] = 0.0
    D[pivot] = 0.0
    D[pivot] = -float(D.sum())
    return D


def max_step(gamma, direction) -> tuple[float, int | None]:
    """Largest step keeping gamma + S * direction inside [0, 1]^N.

    Returns (S_max, index of the coordinate saturating first); a zero
    direction yields (0.0, None), signalling the caller to stop.
    """
    g = np.asarray(gamma, dtype=np.float64)
    D = np.asarray(direction, dtype=np.float64)
    if not np.any(D != 0.0):
        return 0.0, None
    ratios = np.full(g.shape[0], np.inf)
    neg = D < 0
    pos = D > 0
    ratios[neg] = g[neg] / -D[neg]
    ratios[pos] = (1.0 - g[pos]) / D[pos]
    np.maximum(ratios, 0.0, out=ratios)
    nu = int(np.argmin(ratios))
    s = float(ratios[nu])
    # shave fp overshoot so containment holds exactly
    for _ in range(4):
        trial = g + s * D
        if s <= 0 or (trial.min() >= 0.0 and trial.max() <= 1.0):
            break
        s = float(np.nextafter(s, 0.0))
    else:
        s = 0.0
    return s, nu


def lp_direction(gamma, grad) -> np.ndarray:
    """Exact minimizer of grad'D over {sum D = 0, -gamma <= D <= 1 - gamma}.

    Solved by a threshold scan rather than a generic LP: the target point
    gamma + D is the capped-simplex minimizer of grad, i.e. mass 1 on the
    lowest-gradient coordinates.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    target = capped_simplex_argmax(-grad, float(gamma.sum()))
    return target - gamma


def _golden_section(h, s_hi: float, f_lo: float, f_hi, tol: float, max_evals: int):
    """Golden-section minimization of h on [0, s_hi].

    h(0) = f_lo is known; f_hi may be None (evaluated on demand). Returns
    the best (s, h(s), payload) over every evaluated point including the
    endpoints, so the result never exceeds f_lo.
    """
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    evals = 0
    best = (0.0, f_lo, None)
    if f_hi is None:
        f_hi, payload = h(s_hi)
        evals += 1
        if f_hi < best[1]:
            best = (s_hi, f_hi, payload)
    else:
        f_hi, payload = f_hi
        if f_hi < best[1]:
            best = (s_hi, f_hi, payload)
    a, b = 0.0, s_hi
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, p1 = h(x1)
    evals += 1
    if f1 < best[1]:
        best = (x1, f1, p1)
    if evals < max_evals:
        f2, p2 = h(x2)
        evals += 1
        if f2 < best[1]:
            best = (x2, f2, p2)
        while evals < max_evals and (b - a) > tol:
            if f1 <= f2:
                b, x2, f2 = x2, x1, f1
                x1 = b - invphi * (b - a)
                f1, p1 = h(x1)
                if f1 < best[1]:
                    best = (x1, f1, p1)
            else:
                a, x1, f1 = x1, x2, f2
                x2 = a + invphi * (b - a)
                f2, p2 = h(x2)
                if f2 < best[1]:
                    best = (x2, f2, p2)
            evals += 1
    return best


class _WeightObjective:
    """J(gamma): the optimal SVM dual value at the combined kernel.

    Re-solves the SVM at every requested gamma, warm-starting each solve
    from the most recent dual variables. J is convex in gamma and its
    gradient at the optimizer is -d/2 (Danskin), which is what the
    descent steps use.
    """

    def __init__(self, bank: KernelBank, svm_cfg: SvmConfig):
        self.bank = bank
        self.y = np.asarray(bank.labels, dtype=np.float64)
        self.svm_cfg = svm_cfg
        self.alpha = None
        self.solve_count = 0
        self.inner_iterations = 0

    def solve(self, gamma):
        K = combined_values(self.bank, np.clip(gamma, 0.0, None))
        sol = solve_svm(K, self.y, self.svm_cfg, warm_start=self.alpha)
        self.alpha = sol.alpha
        self.solve_count += 1
        self.inner_iterations += sol.iterations
        return sol.dual_objective, sol


def _rg_step(objective, gamma, J0, sol0, d, pivot, cfg: CsklConfig, upper):
    """Saturation walk along the reduced-gradient direction, then line search.

    Repeatedly jumps to the box face hit by the current direction while
    the objective keeps improving, zeroing saturated coordinates and
    letting the pivot absorb their mass; then golden-section-searches the
    last bracket. Returns (gamma', J', sol', step) with J' <= J0.
    """
    phi = -0.5 * d
    D = descent_direction(gamma, pivot, phi, upper=upper)
    if not np.any(D != 0.0):
        return gamma, J0, sol0, 0.0
    g_cur = gamma
    J_cur = J0
    sol_cur = sol0
    D_cur = D
    walk_step = 0.0
    f_hi = None
    while True:
        s_hi, nu = max_step(g_cur, D_cur)
        if nu is None or s_hi <= 0.0:
            return g_cur, J_cur, sol_cur, walk_step
        g_try = np.clip(g_cur + s_hi * D_cur, 0.0, 1.0)
        J_try, sol_try = objective.solve(g_try)
        if J_try < J_cur:
            g_cur, J_cur, sol_cur = g_try, J_try, sol_try
            walk_step += s_hi
            D_new = D_cur.copy()
            at_lo = (g_cur <= BOUND_TOL) & (D_new < 0)
            if upper is not None:
                at_lo |= (g_cur >= upper - BOUND_TOL) & (D_new > 0)
            D_new[at_lo] = 0.0
            D_new[pivot] = 0.0
            D_new[pivot] = -float(D_new.sum())
            if not np.any(D_new != 0.0):
                return g_cur, J_cur, sol_cur, walk_step
            D_cur = D_new
            continue
        f_hi = (J_try, sol_try)
        break

    def h(s):
        J, sol = objective.solve(np.clip(g_cur + s * D_cur, 0.0, 1.0))
        return J, sol

    s_best, J_best, sol_best = _golden_section(
        h, s_hi, J_cur, f_hi, cfg.line_search_tol * s_hi, cfg.line_search_max_evals
    )
    if sol_best is None:
        return g_cur, J_cur, sol_cur, walk_step
    return np.clip(g_cur + s_best * D_cur, 0.0, 1.0), J_best, sol_best, walk_step + s_best


def _lp_step(objective, gamma, J0, sol0, d, cfg: CsklConfig):
    phi = -0.5 * d
    D = lp_direction(gamma, phi)
    if not np.any(np.abs(D) > 1e-15):
        return gamma, J0, sol0, 0.0

    def h(s):
        J, sol = objective.solve(np.clip(gamma + s * D, 0.0, 1.0))
        return J, sol

    s_best, J_best, sol_best = _golden_section(
        h, 1.0, J0, None, cfg.line_search_tol, cfg.line_search_max_evals
    )
    if sol_best is None:
        return gamma, J0, sol0, 0.0
    return np.clip(gamma + s_best * D, 0.0, 1.0), J_best, sol_best, s_best


def reduced_gradient_gamma_step(bank: KernelBank, gamma, cfg: CsklConfig):
    """One reduced-gradient weight update at the given feasible gamma.

    Solves the SVM at gamma, walks along the pivoted descent direction
    and line-searches the final bracket. Returns (new weights, trace
    entry for the step).
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    objective = _WeightObjective(bank, cfg.svm)
    started = time.perf_counter()
    J0, sol0 = objective.solve(gamma)
    d = kernel_quad_forms(sol0.alpha, objective.y, bank)
    pivot = int(np.argmin(np.abs(gamma - 0.5)))
    g_new, J_new, _sol, step = _rg_step(objective, gamma, J0, sol0, d, pivot, cfg, upper=1.0)
    g_new = _snap(g_new)
    entry = TraceEntry(
        iteration=0,
        objective=J_new,
        gamma=g_new.copy(),
        d=d,
        step_size=float(step),
        inner_iterations=objective.inner_iterations,
        inner_kkt_violation=_sol.kkt_violation,
        wall_time=time.perf_counter() - started,
        certificate_slack=float(top_t_sum(d, cfg.t) - g_new @ d),
    )
    return g_new, entry


def _snap(gamma: np.ndarray) -> np.ndarray:
    out = gamma.copy()
    out[out < SNAP_TOL] = 0.0
    return out


def _alternating_train(bank, solver, init_gamma, step_fn, certificate_fn, cfg: CsklConfig):
    """Shared outer loop: SMO solve, d update, weight step, stop on small change.

    A run counts as converged only when the objective has stalled within
    the outer tolerance AND the linear-maximization certificate holds, so
    every convergent exit carries a top-t optimality guarantee for its
    constraint set.
    """
    objective = _WeightObjective(bank, cfg.svm)
    gamma = init_gamma
    trace = OptTrace(solver=solver)
    J, sol = objective.solve(gamma)
    obj_old = 0.0
    inner_seen = 0
    stall_streak = 0
    slack_floor = np.inf
    for it in range(cfg.max_outer_iters):
        started = time.perf_counter()
        d = kernel_quad_forms(sol.alpha, objective.y, bank)
        best = certificate_fn(d)
        slack = float(best - gamma @ d)
        stalled = abs(J - obj_old) <= cfg.outer_tolerance * max(1.0, abs(J))
        certified = slack <= cfg.certificate_tolerance * best + 1e-15
        if it > 0 and stalled and certified:
            trace.converged = True
            trace.entries.append(
                TraceEntry(it, J, gamma.copy(), d, 0.0, 0, sol.kkt_violation,
                           time.perf_counter() - started, slack)
            )
            break
        # objective exhausted and the certificate no longer improving
        # (inner-solver resolution); give up early rather than idling to
        # the cap
        improving = slack < 0.98 * slack_floor
        slack_floor = min(slack_floor, slack)
        stall_streak = stall_streak + 1 if (it > 0 and stalled and not improving) else 0
        if stall_streak >= _STALL_LIMIT:
            trace.entries.append(
                TraceEntry(it, J, gamma.copy(), d, 0.0, 0, sol.kkt_violation,
                           time.perf_counter() - started, slack)
            )
            break
        obj_old = J
        gamma_new, J_new, sol_new, step = step_fn(objective, gamma, J, sol, d)
        gamma_new = _snap(gamma_new)
        inner_now = objective.inner_iterations
        trace.entries.append(
            TraceEntry(
                it,
                J,
                gamma.copy(),
                d,
                float(step),
                inner_now - inner_seen,
                sol_new.kkt_violation,
                time.perf_counter() - started,
                slack,
            )
        )
        inner_seen = inner_now
        moved = bool(np.any(gamma_new != gamma))
        gamma, J, sol = gamma_new, J_new, sol_new
        if not moved:
            trace.converged = certified
            break
    return gamma, sol, trace


def cskl_train(bank: KernelBank, cfg: CsklConfig):
    """Learn capped-simplex kernel weights jointly with the SVM.

    Starts from the uniform feasible point gamma = t/N and alternates an
    SMO solve with a weight descent step (reduced gradient or the exact
    LP direction, per config) until the objective change falls below the
    outer tolerance with a valid top-t certificate. Returns (weights,
    final SVM solution, trace).
    """
    N = bank.n_kernels
    if not 1 <= cfg.t <= N:
        raise ValueError(f"t={cfg.t} out of range for a bank of {N} kernels")
    t = cfg.t

    def step(objective, gamma, J, sol, d):
        if cfg.gamma_step == "lp_direction":
            return _lp_step(objective, gamma, J, sol, d, cfg)
        pivot = int(np.argmin(np.abs(gamma - 0.5)))
        return _rg_step(objective, gamma, J, sol, d, pivot, cfg, upper=1.0)

    gamma, sol, trace = _alternating_train(
        bank,
        solver="cskl",
        init_gamma=np.full(N, t / N),
        step_fn=step,
        certificate_fn=lambda d: top_t_sum(d, t),
        cfg=cfg,
    )
    weights = MklWeights(gamma, "capped_simplex", t=t)
    weights.validate()
    return weights, sol, trace


def simplemkl_train(bank: KernelBank, svm_cfg: SvmConfig, **outer_kwargs):
    """Unit-simplex MKL baseline: same alternating scheme with sum(gamma)=1.

    The pivot is the largest current weight and only the lower bound
    gamma >= 0 is active; equivalent to the capped trainer at t=1 up to
    the pivot rule.
    """
    N = bank.n_kernels
    cfg = CsklConfig(t=1, svm=svm_cfg, **outer_kwargs)

    def step(objective, gamma, J, sol, d):
        pivot = int(np.argmax(gamma))
        return _rg_step(objective, gamma, J, sol, d, pivot, cfg, upper=None)

    gamma, sol, trace = _alternating_train(
        bank,
        solver="simplemkl",
        init_gamma=np.full(N, 1.0 / N),
        step_fn=step,
        certificate_fn=lambda d: float(np.max(d)),
        cfg=cfg,
    )
    weights = MklWeights(gamma, "unit_simplex")
    weights.validate()
    return weights, sol, trace


def lpnorm_mkl_train(bank: KernelBank, p: float, svm_cfg: SvmConfig, **outer_kwargs):
    """lp-ball MKL baseline with the closed-form Hoelder weight update.

    Each outer iteration sets gamma_j = d_j^(1/(p-1)) / (sum_k
    d_k^(p/(p-1)))^(1/p), the exact maximizer of gamma'd on the unit lp
    ball; with p=2 this is gamma = d / ||d||_2. A degenerate all-zero d
    resets gamma to the uniform feasible point.
    """
    if not p > 1:
        raise ValueError("p must exceed 1")
    N = bank.n_kernels
    cfg = CsklConfig(t=1, svm=svm_cfg, **outer_kwargs)
    q = p / (p - 1.0)
    uniform = np.full(N, N ** (-1.0 / p))

    def step(objective, gamma, J, sol, d):
        d = np.maximum(d, 0.0)
        if not np.any(d > 0):
            gamma_new = uniform.copy()
        else:
            denom = float(np.sum(d**q)) ** (1.0 / p)
            gamma_new = d ** (1.0 / (p - 1.0)) / denom
        J_new, sol_new = objective.solve(gamma_new)
        return gamma_new, J_new, sol_new, 1.0

    def certificate(d):
        d = np.maximum(d, 0.0)
        return float(np.sum(d**q)) ** (1.0 / q)

    gamma, sol, trace = _alternating_train(
        bank,
        solver="lpmkl",
        init_gamma=uniform.copy(),
        step_fn=step,
        certificate_fn=certificate,
        cfg=cfg,
    )
    weights = MklWeights(gamma, "lp_ball", p=p)
    weights.validate()
    return weights, sol, trace

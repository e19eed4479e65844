"""Primal-dual interior-point solver for smooth equality-constrained problems with box bounds.

    minimize f(x)  subject to  c(x) = 0,  lb <= x <= ub

Bounds are handled with a logarithmic barrier whose parameter is reduced
monotonically. Each iteration solves the regularised KKT system with a sparse
LDL^T factorisation; the diagonal factor gives the inertia, and the Hessian
block is shifted until the inertia is (n, m). Steps are clipped by the
fraction-to-boundary rule and accepted by backtracking on an l1 merit
function; trial points where the objective is not finite are rejected.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import qdldl
import scipy.sparse as sp
from scipy.linalg import lapack

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE_POINT = "infeasible_point"
SINGULAR = "singular"


@dataclass
class NlpProblem:
    """Callbacks describing the problem.

    ``hessian(x)`` is the objective Hessian; ``constraint_hessian(x, lam)``
    returns ``sum_i lam_i * hess c_i(x)`` and may be omitted for linear
    constraints. Matrix callbacks may return dense or scipy sparse arrays.
    """

    n: int
    m: int
    x0: np.ndarray
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], object]
    constraints: Optional[Callable[[np.ndarray], np.ndarray]] = None
    jacobian: Optional[Callable[[np.ndarray], object]] = None
    constraint_hessian: Optional[Callable[[np.ndarray, np.ndarray], object]] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).copy()
        self.lb = np.full(self.n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float)
        self.ub = np.full(self.n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float)
        if self.x0.shape != (self.n,) or self.lb.shape != (self.n,) or self.ub.shape != (self.n,):
            raise ValueError("x0/lb/ub must have length n")
        if np.any(self.lb > self.ub):
            raise ValueError("lower bound above upper bound")
        if np.any(self.lb == self.ub):
            raise ValueError("fixed variables (lb == ub) must be removed or expressed as equalities")
        if self.m and (self.constraints is None or self.jacobian is None):
            raise ValueError("constraints and jacobian callbacks are required when m > 0")


@dataclass
class SolverOptions:
    tol_stat: float = 1e-6
    tol_feas: float = 1e-8
    tol_comp: float = 1e-8
    max_iter: int = 300
    mu_init: float = 1e-2
    mu_min: float = 1e-11
    kappa_eps: float = 10.0
    kappa_mu: float = 0.2
    theta_mu: float = 1.5
    tau_min: float = 0.99
    bound_push: float = 1e-2
    bound_frac: float = 1e-2
    armijo: float = 1e-4
    alpha_min: float = 1e-12
    scale_objective: bool = True
    max_gradient: float = 100.0
    delta_c: float = 1e-10
    refine_steps: int = 3
    # "qdldl" (sparse, no pivoting), "dense" (Bunch-Kaufman) or "auto": qdldl,
    # switching to dense when inertia correction fails on a small system
    linear_solver: str = "auto"
    dense_limit: int = 2500
    static_reg: float = 1e-9  # primal diagonal shift for the pivot-free sparse factorisation
    verbose: bool = False


@dataclass
class SolveReport:
    status: str
    iterations: int
    stationarity: float
    infeasibility: float
    complementarity: float = 0.0
    objective: float = float("nan")
    wall_time: float = 0.0
    obj_scale: float = 1.0
    message: str = ""
    history: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


class NlpError(RuntimeError):
    pass


def _as_csr(a, shape) -> sp.csr_matrix:
    if a is None:
        return sp.csr_matrix(shape)
    return a.tocsr() if sp.issparse(a) else sp.csr_matrix(np.atleast_2d(np.asarray(a, dtype=float)).reshape(shape))


def _push_inside(x, lb, ub, k1, k2):
    x = x.copy()
    has_l, has_u = np.isfinite(lb), np.isfinite(ub)
    width = np.where(has_l & has_u, ub - lb, np.inf)
    pl = np.minimum(k1 * np.maximum(1.0, np.abs(np.where(has_l, lb, 0.0))), k2 * width)
    pu = np.minimum(k1 * np.maximum(1.0, np.abs(np.where(has_u, ub, 0.0))), k2 * width)
    x = np.where(has_l, np.maximum(x, lb + pl), x)
    x = np.where(has_u, np.minimum(x, ub - pu), x)
    return x


def _bk_inertia(lu, ipiv, rel_zero=1e-15):
    """Counts (positive, negative) eigenvalues of the block-diagonal D; None if D is numerically singular."""
    size = lu.shape[0]
    if size == 0:
        return 0, 0
    d = np.diag(lu)
    neg_piv = ipiv < 0
    idx = np.arange(size)
    # 2x2 blocks occupy consecutive pairs inside each run of negative pivot indices
    run_first = neg_piv & ~np.r_[False, neg_piv[:-1]]
    run_start = np.maximum.accumulate(np.where(run_first, idx, 0))
    first = neg_piv & ((idx - run_start) % 2 == 0)
    k = np.flatnonzero(first)
    single = ~neg_piv
    a, c, b = d[k], d[k + 1], lu[k + 1, k]
    half_gap = np.sqrt(0.25 * (a - c) ** 2 + b**2)
    ev = np.concatenate([d[single], 0.5 * (a + c) + half_gap, 0.5 * (a + c) - half_gap])
    scale = max(1.0, float(np.max(np.abs(ev))))
    if np.any(np.abs(ev) <= rel_zero * scale) or not np.all(np.isfinite(ev)):
        return None
    return int(np.sum(ev > 0)), int(np.sum(ev < 0))


class _DenseLDL:
    """Bunch-Kaufman ``LDL^T`` (LAPACK ``sytrf``) of a symmetric matrix given by its upper triangle."""

    def __init__(self, lu, ipiv):
        self.lu, self.ipiv = lu, ipiv

    @classmethod
    def factor(cls, upper: sp.spmatrix):
        # sytrf with lower=1 reads only the lower triangle
        lu, ipiv, info = lapack.dsytrf(upper.T.toarray(), lower=1)
        if info < 0:
            return None, None
        inertia = _bk_inertia(lu, ipiv)
        if inertia is None:
            return None, None
        return cls(lu, ipiv), inertia

    def solve(self, rhs):
        x, info = lapack.dsytrs(self.lu, self.ipiv, rhs, lower=1)
        return x


class _KKT:
    """Assembles and factors ``[[W + D + dw I, J^T], [J, -dc I]]`` (upper triangle)."""

    def __init__(self, n, m, backend="dense", static_reg=0.0):
        self.n, self.m = n, m
        self.backend = backend
        self.static_reg = static_reg
        self.fallback = False
        self.zero_breakdown = False
        self.delta_w_last = 0.0
        self.shift_floor = 0.0
        self._diag = np.arange(n + m)

    def factor(self, w: sp.csr_matrix, diag: np.ndarray, jac: sp.csr_matrix, delta_w: float, delta_c: float):
        n, m = self.n, self.m
        wu = sp.triu(w, format="coo")
        jt = jac.T.tocoo()
        rows = np.concatenate([wu.row, jt.row, self._diag])
        cols = np.concatenate([wu.col, jt.col + n, self._diag])
        static = self.static_reg if self.backend == "qdldl" else 0.0
        dvals = np.concatenate([diag + delta_w + static, np.full(m, -delta_c)])
        vals = np.concatenate([wu.data, jt.data, dvals])
        k = sp.csc_matrix((vals, (rows, cols)), shape=(n + m, n + m))
        if self.backend == "dense":
            return _DenseLDL.factor(k)
        try:
            solver = qdldl.Solver(k, upper=True)
        except RuntimeError:
            return None, None
        d = solver.factors()[1]
        if not np.all(np.isfinite(d)):
            return None, None
        return solver, (int(np.sum(d > 0)), int(np.sum(d < 0)))

    def solve(self, w, diag, jac, rhs, opts: SolverOptions, history_reg: list):
        """Solve with inertia correction; returns (solution, delta_w) or (None, inf)."""
        n, m = self.n, self.m
        delta_c = opts.delta_c if m else 0.0
        # after a pivot breakdown at delta_w = 0, start from the last working shift
        delta_w = max(1e-20, self.delta_w_last / 3.0, self.shift_floor) if self.zero_breakdown and self.delta_w_last > 0 else 0.0
        attempt = 0
        while True:
            solver, inertia = self.factor(w, diag, jac, delta_w, delta_c)
            if solver is not None and inertia == (n, m):
                break
            if solver is None and delta_w == 0.0:
                self.zero_breakdown = True
            attempt += 1
            if delta_w == 0.0:
                delta_w = 1e-4 if self.delta_w_last == 0.0 else max(1e-20, self.delta_w_last / 3.0)
                delta_w = max(delta_w, self.shift_floor)
            else:
                delta_w *= 100.0 if self.delta_w_last == 0.0 else 8.0
            if delta_w > 1e40 or attempt > 60:
                if self.fallback and self.backend != "dense":
                    # pivot-free factorisation is unreliable here; retry with Bunch-Kaufman
                    self.backend = "dense"
                    self.delta_w_last = 0.0
                    return self.solve(w, diag, jac, rhs, opts, history_reg)
                return None, math.inf
        if delta_w > 0:
            self.delta_w_last = delta_w
        history_reg.append(delta_w)
        self._last = (solver, self._operator(w, diag, jac, delta_w) if opts.refine_steps and (m or self.static_reg) else None)
        return self.resolve(rhs, opts), delta_w

    def resolve(self, rhs, opts: SolverOptions):
        """Solve with the most recent factorisation, refining against the unregularised matrix."""
        solver, full = self._last
        sol = solver.solve(rhs)
        if full is not None:
            for _ in range(opts.refine_steps):
                res = rhs - full(sol)
                if np.max(np.abs(res)) <= 1e-14 * max(1.0, np.max(np.abs(rhs))):
                    break
                corr = solver.solve(res)
                if not np.all(np.isfinite(corr)):
                    break
                sol = sol + corr
        return sol

    def _operator(self, w, diag, jac, delta_w):
        n = self.n

        def apply(v):
            x, y = v[:n], v[n:]
            top = w @ x + (diag + delta_w) * x + jac.T @ y
            return np.concatenate([top, jac @ x])

        return apply


def solve(problem: NlpProblem, options: SolverOptions | None = None) -> tuple[np.ndarray, SolveReport]:
    """Minimise ``problem``; returns the final point and a :class:`SolveReport`.

    Tolerances apply to the internally scaled objective: stationarity is the
    infinity norm of the Lagrangian gradient divided by the usual multiplier
    scaling factor, feasibility the infinity norm of ``c(x)``.
    """
    opts = options or SolverOptions()
    t0 = time.perf_counter()
    n, m = problem.n, problem.m
    lb, ub = problem.lb, problem.ub
    has_l, has_u = np.isfinite(lb), np.isfinite(ub)
    il, iu = np.flatnonzero(has_l), np.flatnonzero(has_u)

    x = _push_inside(problem.x0, lb, ub, opts.bound_push, opts.bound_frac)
    empty_j = sp.csr_matrix((0, n))

    def cons(xv):
        return np.asarray(problem.constraints(xv), dtype=float) if m else np.zeros(0)

    def jac(xv):
        return _as_csr(problem.jacobian(xv), (m, n)) if m else empty_j

    f_raw = problem.objective(x)
    if not np.isfinite(f_raw):
        return x, SolveReport(INFEASIBLE_POINT, 0, math.nan, math.nan, message="objective not finite at the initial point",
                              wall_time=time.perf_counter() - t0)
    g_raw = np.asarray(problem.gradient(x), dtype=float)
    scale = 1.0
    if opts.scale_objective:
        gmax = float(np.max(np.abs(g_raw))) if n else 0.0
        if gmax > opts.max_gradient:
            scale = opts.max_gradient / gmax

    mu = opts.mu_init
    sl = x[il] - lb[il]
    su = ub[iu] - x[iu]
    zl = np.full(il.size, 1.0)
    zu = np.full(iu.size, 1.0)
    backend = "qdldl" if opts.linear_solver == "auto" else opts.linear_solver
    kkt = _KKT(n, m, backend, opts.static_reg)
    kkt.fallback = opts.linear_solver == "auto" and n + m <= opts.dense_limit
    reg_hist: list = []

    f = scale * f_raw
    g = scale * g_raw
    c = cons(x)
    jm = jac(x)

    # least-squares multiplier estimate
    lam = np.zeros(m)
    if m:
        rhs = np.concatenate([-(g - _scatter(zl, il, n) + _scatter(zu, iu, n)), np.zeros(m)])
        sol, _ = kkt.solve(sp.csr_matrix((n, n)), np.ones(n), jm, rhs, SolverOptions(refine_steps=0, delta_c=1e-8), [])
        if sol is not None:
            cand = sol[n:]
            if np.max(np.abs(cand)) <= 1e3:
                lam = cand
        kkt.delta_w_last = 0.0
    nu = 1.0
    history = []
    status = MAX_ITER
    message = ""
    it = 0
    consecutive_fail = 0
    last_alpha, last_dw = math.nan, math.nan

    def errors(mu_):
        zfull = _scatter(zl, il, n) - _scatter(zu, iu, n)
        r_dual = g + (jm.T @ lam if m else 0.0) - zfull
        s_max = 100.0
        s_d = max(s_max, (np.sum(np.abs(lam)) + np.sum(zl) + np.sum(zu)) / max(1, n + m)) / s_max
        s_c = max(s_max, (np.sum(zl) + np.sum(zu)) / max(1, il.size + iu.size)) / s_max
        stat = float(np.max(np.abs(r_dual))) / s_d if n else 0.0
        feas = float(np.max(np.abs(c))) if m else 0.0
        comp_vals = np.concatenate([sl * zl - mu_, su * zu - mu_])
        comp = float(np.max(np.abs(comp_vals))) / s_c if comp_vals.size else 0.0
        return stat, feas, comp

    while True:
        stat, feas, comp = errors(0.0)
        history.append((it, f / scale, stat, feas, comp, mu, last_alpha, last_dw))
        if opts.verbose:
            log.info("it %3d f=% .6e stat=%.2e feas=%.2e comp=%.2e mu=%.1e", it, f / scale, stat, feas, comp, mu)
        if stat <= opts.tol_stat and feas <= opts.tol_feas and comp <= opts.tol_comp:
            status = OPTIMAL
            break
        if it >= opts.max_iter:
            status = MAX_ITER
            break
        # barrier update
        while mu > opts.mu_min:
            s_mu, f_mu, c_mu = errors(mu)
            if max(s_mu, f_mu, c_mu) > opts.kappa_eps * mu:
                break
            mu = max(opts.mu_min, min(opts.kappa_mu * mu, mu**opts.theta_mu))
            nu = max(nu, 1.0)

        w = scale * _as_csr(problem.hessian(x), (n, n))
        if m and problem.constraint_hessian is not None:
            w = w + _as_csr(problem.constraint_hessian(x, lam), (n, n))
        sig = _scatter(zl / sl, il, n) + _scatter(zu / su, iu, n)
        grad_barrier = g - _scatter(mu / sl, il, n) + _scatter(mu / su, iu, n)
        rhs = -np.concatenate([grad_barrier + (jm.T @ lam if m else 0.0), c])
        sol, delta_w = kkt.solve(w, sig, jm, rhs, opts, reg_hist)
        if sol is None:
            status = SINGULAR
            message = "KKT matrix could not be regularised to the correct inertia"
            break
        dx, dlam = sol[:n], sol[n:]
        dzl = mu / sl - zl - (zl / sl) * dx[il]
        dzu = mu / su - zu + (zu / su) * dx[iu]

        tau = max(opts.tau_min, 1.0 - mu)
        alpha_max = min(_ftb(sl, dx[il], tau), _ftb(su, -dx[iu], tau))
        alpha_z = min(_ftb(zl, dzl, tau), _ftb(zu, dzu, tau))

        # merit penalty
        if m:
            nu_req = 1.1 * float(np.max(np.abs(lam + dlam))) + 1e-6
            # a single spike in the multiplier estimate must not pin the penalty
            # at a value that rejects every step through constraint curvature
            nu = nu_req if nu > 10.0 * nu_req else max(nu, nu_req)
        phi0 = _merit(f, sl, su, c, mu, nu)
        dphi = float(grad_barrier @ dx) - nu * float(np.sum(np.abs(c)))
        # merit changes below round-off cannot be resolved; do not reject on them
        slack = 10.0 * np.finfo(float).eps * abs(phi0)
        c_noise = 1e-2 * opts.tol_feas
        c_tiny = (float(np.max(np.abs(c))) if m else 0.0) <= c_noise
        dphi_f = float(grad_barrier @ dx)

        def acceptable(f_trial, x_trial, c_trial, step):
            phit = _merit(f_trial, x_trial[il] - lb[il], ub[iu] - x_trial[iu], c_trial, mu, nu)
            if not np.isfinite(phit):
                return False
            if c_tiny and (float(np.max(np.abs(c_trial))) if m else 0.0) <= c_noise:
                # both points feasible to round-off: the trial barrier objective may
                # absorb the current (noise-level) penalty
                pen_t = nu * float(np.sum(np.abs(c_trial)))
                return phit - pen_t <= phi0 + opts.armijo * step * min(dphi_f, 0.0) + slack
            return phit <= phi0 + opts.armijo * step * min(dphi, 0.0) + slack

        alpha = alpha_max
        accepted = False
        saw_finite = False
        soc_tried = False
        while alpha >= opts.alpha_min:
            xt = x + alpha * dx
            ft_raw = problem.objective(xt)
            if np.isfinite(ft_raw):
                saw_finite = True
                ct = cons(xt)
                if acceptable(scale * ft_raw, xt, ct, alpha):
                    accepted = True
                    break
                if not soc_tried and alpha == alpha_max and m and np.sum(np.abs(ct)) >= np.sum(np.abs(c)):
                    soc_tried = True
                    xs = _second_order_correction(kkt, dx, ct, n, opts)
                    if xs is not None:
                        a_soc = min(_ftb(sl, xs[il], tau), _ftb(su, -xs[iu], tau))
                        xt2 = x + a_soc * xs
                        f2 = problem.objective(xt2)
                        if np.isfinite(f2) and acceptable(scale * f2, xt2, cons(xt2), alpha):
                            dx = xs
                            alpha = a_soc
                            xt, ft_raw = xt2, f2
                            accepted = True
                            break
            alpha *= 0.5

        if not accepted:
            if not saw_finite:
                status = INFEASIBLE_POINT
                message = "line search could not find a trial point with a finite objective"
                break
            consecutive_fail += 1
            if consecutive_fail > 3:
                alpha = max(alpha, opts.alpha_min)
            else:
                # watchdog: take the full step if the objective stays finite there
                alpha = alpha_max
            xt = x + alpha * dx
            ft_raw = problem.objective(xt)
            if not np.isfinite(ft_raw):
                alpha *= 0.5
                while alpha >= opts.alpha_min:
                    xt = x + alpha * dx
                    ft_raw = problem.objective(xt)
                    if np.isfinite(ft_raw):
                        break
                    alpha *= 0.5
                if not np.isfinite(ft_raw):
                    status = INFEASIBLE_POINT
                    message = "line search could not find a trial point with a finite objective"
                    break
        else:
            consecutive_fail = 0

        # Levenberg-style damping of convexified steps: a heavily backtracked
        # step means the shifted model was far too optimistic
        if delta_w > 0 and alpha < 0.1 * alpha_max:
            kkt.shift_floor = min(1e6, max(10.0 * delta_w, 10.0 * kkt.shift_floor))
        elif alpha >= alpha_max:
            kkt.shift_floor *= 0.1
            if kkt.shift_floor < 1e-12:
                kkt.shift_floor = 0.0
        last_alpha, last_dw = alpha, delta_w
        x = xt
        # a slack can round to zero when it is below the spacing of the bound
        # value; move such variables back by a few ulps
        s_floor_l = 16 * np.finfo(float).eps * np.maximum(1.0, np.abs(lb[il]))
        s_floor_u = 16 * np.finfo(float).eps * np.maximum(1.0, np.abs(ub[iu]))
        low = x[il] - lb[il] < s_floor_l
        high = ub[iu] - x[iu] < s_floor_u
        if np.any(low) or np.any(high):
            x = x.copy()
            x[il[low]] = lb[il[low]] + s_floor_l[low]
            x[iu[high]] = ub[iu[high]] - s_floor_u[high]
            ft_raw = problem.objective(x)
        lam = lam + alpha * dlam
        zl = zl + alpha_z * dzl
        zu = zu + alpha_z * dzu
        sl = x[il] - lb[il]
        su = ub[iu] - x[iu]
        # keep bound multipliers close to the central path
        kappa_sigma = 1e10
        zl = np.clip(zl, mu / (kappa_sigma * sl), kappa_sigma * mu / sl)
        zu = np.clip(zu, mu / (kappa_sigma * su), kappa_sigma * mu / su)
        f = scale * ft_raw
        g = scale * np.asarray(problem.gradient(x), dtype=float)
        c = cons(x)
        jm = jac(x)
        it += 1

    stat, feas, comp = errors(0.0)
    rep = SolveReport(
        status=status,
        iterations=it,
        stationarity=stat,
        infeasibility=feas,
        complementarity=comp,
        objective=f / scale,
        wall_time=time.perf_counter() - t0,
        obj_scale=scale,
        message=message,
        history=history,
    )
    return x, rep


def _scatter(v, idx, n):
    out = np.zeros(n)
    out[idx] = v
    return out


def _ftb(s, ds, tau):
    """Largest step in (0, 1] keeping ``s + a * ds >= (1 - tau) * s``."""
    neg = ds < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-tau * s[neg] / ds[neg])))


def _merit(f, sl, su, c, mu, nu):
    if np.any(sl <= 0) or np.any(su <= 0):
        return math.inf
    return f - mu * (np.sum(np.log(sl)) + np.sum(np.log(su))) + nu * float(np.sum(np.abs(c)))


def _second_order_correction(kkt, dx, ct, n, opts):
    # J (dx + d) = -c(x) - c(x + dx): removes the curvature part of the constraint error
    rhs = -np.concatenate([np.zeros(n), ct])
    sol = kkt.resolve(rhs, opts)
    if not np.all(np.isfinite(sol)):
        return None
    return dx + sol[:n]

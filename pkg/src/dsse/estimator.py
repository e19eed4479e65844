"""Maximum-likelihood state estimation on the rectangular power-flow model.

Decision variables are the real/imaginary bus-phase voltages, device-phase
active/reactive powers, one magnitude variable per voltage-measured
bus-phase (tied by ``u**2 = U_re**2 + U_im**2``), and a split pair per
Laplacian measurement. Each measurement contributes one residual term to the
objective:

* Gaussian: ``(x - mu)**2 / sigma**2``
* Laplacian: ``|x - mu| / b`` written as ``(t_plus + t_minus) / b``
* anything else: ``xi - log f(x)`` with ``xi = log max f``
"""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import distributions as dist
from .distributions import Gaussian, Laplacian, UncertaintyModel
from .netmodel import Network
from .nlp import NlpProblem, SolveReport, SolverOptions, solve
from .powerflow import StateSolution, injection, injection_jacobian

VM, P, Q = "vm", "p", "q"


class EstimationError(RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MeasurementTarget:
    kind: str  # "vm", "p" or "q"
    element: str  # bus id for "vm", device id otherwise
    phase: str

    @classmethod
    def voltage_magnitude(cls, bus, phase):
        return cls(VM, bus, phase)

    @classmethod
    def active_power(cls, device, phase):
        return cls(P, device, phase)

    @classmethod
    def reactive_power(cls, device, phase):
        return cls(Q, device, phase)


@dataclass(frozen=True)
class Measurement:
    target: MeasurementTarget
    model: UncertaintyModel
    kind: str = "real"  # "real" or "pseudo"


@dataclass
class ConstantPowerFactor:
    k: float
    devices: list[str]


@dataclass
class CorrelationMember:
    device: str
    phase: str
    scale: float = 1.0


@dataclass
class EstimatorConfig:
    pv_correlation_groups: list[list[CorrelationMember]] = field(default_factory=list)
    constant_pf: ConstantPowerFactor | None = None
    solver: SolverOptions = field(default_factory=SolverOptions)
    vm_bounds: tuple[float, float] = (0.5, 1.5)
    support_shrink: float = 1e-6
    xi_literal: bool = False
    xi_offset: float = 0.0
    hessian: str = "exact"  # or "gauss_newton"


@dataclass
class Term:
    """One residual term of the objective, bound to a decision variable."""

    measurement: int
    var: int
    form: str  # "gaussian", "laplacian", "loglik"
    model: UncertaintyModel
    xi: float = 0.0
    aux: tuple[int, int] | None = None


@dataclass
class SEProblem(NlpProblem):
    network: Network | None = None
    measurements: list = field(default_factory=list)
    terms: list = field(default_factory=list)
    layout: dict = field(default_factory=dict)
    constraint_blocks: dict = field(default_factory=dict)

    def residuals(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(len(self.measurements))
        for t in self.terms:
            out[t.measurement] += _term_value(t, x)
        return out


@dataclass
class SEResult:
    state: StateSolution
    objective: float
    residuals: np.ndarray
    report: SolveReport
    x: np.ndarray | None = None
    problem: SEProblem | None = None


def _term_value(t: Term, x) -> float:
    if t.form == "gaussian":
        return float(((x[t.var] - t.model.mu) / t.model.sigma) ** 2)
    if t.form == "laplacian":
        return float((x[t.aux[0]] + x[t.aux[1]]) / t.model.b)
    return float(t.xi - t.model.logpdf(x[t.var]))


def summarize(measurements: Sequence[Measurement]) -> str:
    kinds = Counter(m.kind for m in measurements)
    models = Counter(type(m.model).__name__ for m in measurements)
    targets = Counter(m.target.kind for m in measurements)
    return (
        f"{len(measurements)} measurements ({dict(kinds)}); targets {dict(targets)}; models {dict(models)}"
    )


# -- problem assembly ----------------------------------------------------------

class _Pattern:
    """CSR structure for COO index lists (duplicates summed) that is reused across evaluations."""

    def __init__(self, rows, cols, shape):
        lin = np.asarray(rows, dtype=np.int64) * shape[1] + np.asarray(cols, dtype=np.int64)
        uniq, self.inverse = np.unique(lin, return_inverse=True)
        r = uniq // shape[1]
        self.indices = (uniq % shape[1]).astype(np.int32)
        self.indptr = np.searchsorted(r, np.arange(shape[0] + 1)).astype(np.int32)
        self.shape = shape
        self.nnz = uniq.size

    def build(self, data) -> sp.csr_matrix:
        vals = np.bincount(self.inverse, weights=data, minlength=self.nnz)
        return sp.csr_matrix((vals, self.indices, self.indptr), shape=self.shape)


def _check(network: Network, measurements: Sequence[Measurement], config: EstimatorConfig):
    for k, m in enumerate(measurements):
        t = m.target
        if t.kind == VM:
            if (t.element, t.phase) not in network.bp_index:
                raise ConfigError(f"measurement {k}: unknown bus-phase {t.element}.{t.phase}")
        elif t.kind in (P, Q):
            if (t.element, t.phase) not in network.dp_index:
                raise ConfigError(f"measurement {k}: unknown device-phase {t.element}.{t.phase}")
        else:
            raise ConfigError(f"measurement {k}: unknown target kind {t.kind!r}")
        if m.kind not in ("real", "pseudo"):
            raise ConfigError(f"measurement {k}: kind must be 'real' or 'pseudo'")
    ref_phases = set(network.reference_bus.phases)
    anchored = {m.target.phase for m in measurements if m.target.kind == VM}
    missing = sorted(ref_phases - anchored)
    if missing:
        raise ConfigError(
            f"underdetermined: no voltage-magnitude measurement on phase(s) {missing}; "
            "at least one voltage anchor per reference phase is required"
        )
    if config.constant_pf is not None:
        cpf = set(config.constant_pf.devices)
        unknown = cpf - set(network.device_map)
        if unknown:
            raise ConfigError(f"constant power factor on unknown devices {sorted(unknown)}")
        clash = sorted({m.target.element for m in measurements if m.target.kind == Q and m.target.element in cpf})
        if clash:
            raise ConfigError(f"constant power factor devices {clash} also carry reactive power measurements")
    seen = set()
    for g in config.pv_correlation_groups:
        for mem in g:
            key = (mem.device, mem.phase)
            if key not in network.dp_index:
                raise ConfigError(f"correlation group member {key} is not a device-phase")
            if key in seen:
                raise ConfigError(f"correlation groups are not disjoint at {key}")
            seen.add(key)


def build_problem(network: Network, measurements: Sequence[Measurement], config: EstimatorConfig | None = None) -> SEProblem:
    """Assemble the estimation NLP for ``measurements`` (all values in per-unit)."""
    config = config or EstimatorConfig()
    measurements = list(measurements)
    _check(network, measurements, config)

    nb = len(network.bus_phases)
    nd = len(network.device_phases)
    o_re, o_im, o_p, o_q = 0, nb, 2 * nb, 2 * nb + nd
    n = 2 * nb + 2 * nd

    vm_targets = sorted({network.bp_index[(m.target.element, m.target.phase)] for m in measurements if m.target.kind == VM})
    vm_var = {bp: n + k for k, bp in enumerate(vm_targets)}
    n += len(vm_targets)

    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    for v in vm_var.values():
        lb[v], ub[v] = config.vm_bounds

    def var_of(t: MeasurementTarget) -> int:
        if t.kind == VM:
            return vm_var[network.bp_index[(t.element, t.phase)]]
        k = network.dp_index[(t.element, t.phase)]
        return (o_p if t.kind == P else o_q) + k

    terms: list[Term] = []
    lap_rows = []  # (var, t_plus, t_minus, mu)
    for k, m in enumerate(measurements):
        v = var_of(m.target)
        model = m.model
        if isinstance(model, Gaussian):
            terms.append(Term(k, v, "gaussian", model))
        elif isinstance(model, Laplacian):
            tp, tm = n, n + 1
            n += 2
            lb = np.append(lb, [0.0, 0.0])
            ub = np.append(ub, [np.inf, np.inf])
            lap_rows.append((v, tp, tm, model.mu))
            terms.append(Term(k, v, "laplacian", model, aux=(tp, tm)))
        else:
            xi = dist.shift_constant(model, literal=config.xi_literal) + config.xi_offset
            terms.append(Term(k, v, "loglik", model, xi=xi))
            lo, hi = model.support
            if math.isfinite(lo) and math.isfinite(hi):
                shrink = config.support_shrink * (hi - lo)
                lb[v] = max(lb[v], lo + shrink)
                ub[v] = min(ub[v], hi - shrink)
                if lb[v] >= ub[v]:
                    raise ConfigError(f"measurement {k}: empty feasible interval after intersecting supports")

    # -- linear equality blocks ------------------------------------------------
    lin_rows: list[tuple[dict[int, float], float]] = []  # (coeffs, rhs)
    for k, theta in zip(network.ref_indices, network.ref_angles):
        lin_rows.append(({o_re + k: math.sin(theta), o_im + k: -math.cos(theta)}, 0.0))
    for g in config.pv_correlation_groups:
        first = g[0]
        i0 = o_p + network.dp_index[(first.device, first.phase)]
        for mem in g[1:]:
            j = o_p + network.dp_index[(mem.device, mem.phase)]
            # P_first / s_first == P_j / s_j
            lin_rows.append(({i0: mem.scale, j: -first.scale}, 0.0))
    cpf_rows = []
    if config.constant_pf is not None:
        for did in config.constant_pf.devices:
            for ph in network.device_map[did].phases:
                k = network.dp_index[(did, ph)]
                lin_rows.append(({o_q + k: 1.0, o_p + k: -config.constant_pf.k}, 0.0))
                cpf_rows.append(k)
    for v, tp, tm, mu in lap_rows:
        lin_rows.append(({v: 1.0, tp: -1.0, tm: 1.0}, mu))

    nr = network.nonref_indices
    n_bal = 2 * len(nr)
    n_vm = len(vm_targets)
    n_lin = len(lin_rows)
    m = n_bal + n_vm + n_lin

    r, c, vals = [], [], []
    rhs_lin = np.zeros(n_lin)
    for i, (coeffs, rhs) in enumerate(lin_rows):
        for j, a in coeffs.items():
            r.append(i)
            c.append(j)
            vals.append(a)
        rhs_lin[i] = rhs
    a_lin = sp.csr_matrix((vals, (r, c)), shape=(n_lin, n))

    cinc = network.device_incidence[nr]
    # d(balance)/d(P, Q): real rows see P, imaginary rows see Q
    bal_pq = sp.bmat([[cinc, None], [None, cinc]]).tocsr()
    vm_bps = np.array(vm_targets, dtype=int)
    vm_vars = np.array([vm_var[bp] for bp in vm_targets], dtype=int)

    # -- objective ---------------------------------------------------------------
    g_idx = np.array([t.var for t in terms if t.form == "gaussian"], dtype=int)
    g_mu = np.array([t.model.mu for t in terms if t.form == "gaussian"])
    g_w = np.array([1.0 / t.model.sigma**2 for t in terms if t.form == "gaussian"])
    lap_idx = np.array([i for t in terms if t.form == "laplacian" for i in t.aux], dtype=int)
    lap_w = np.array([1.0 / t.model.b for t in terms if t.form == "laplacian" for _ in (0, 1)])
    groups: dict = defaultdict(list)
    for t in terms:
        if t.form == "loglik":
            groups[(t.model, t.xi)].append(t.var)
    ll_groups = [(model, xi, np.array(v, dtype=int)) for (model, xi), v in groups.items()]
    gauss_newton = config.hessian == "gauss_newton"

    def objective(x):
        f = float(np.sum(g_w * (x[g_idx] - g_mu) ** 2)) + float(np.sum(lap_w * x[lap_idx]))
        for model, xi, idx in ll_groups:
            f += float(np.sum(xi - model.logpdf(x[idx])))
        return f

    def gradient(x):
        g = np.zeros(n)
        np.add.at(g, g_idx, 2.0 * g_w * (x[g_idx] - g_mu))
        np.add.at(g, lap_idx, lap_w)
        for model, _, idx in ll_groups:
            np.add.at(g, idx, -model.dlogpdf(x[idx]))
        return g

    def hessian(x):
        d = np.zeros(n)
        np.add.at(d, g_idx, 2.0 * g_w)
        for model, _, idx in ll_groups:
            h = -model.d2logpdf(x[idx])
            np.add.at(d, idx, np.maximum(h, 0.0) if gauss_newton else h)
        return sp.diags(d, format="csr")

    # -- constraints -------------------------------------------------------------
    def split(x):
        u = x[o_re:o_re + nb] + 1j * x[o_im:o_im + nb]
        s_dev = x[o_p:o_p + nd] + 1j * x[o_q:o_q + nd]
        return u, s_dev

    def constraints(x):
        u, s_dev = split(x)
        mis = (network.device_incidence @ s_dev - injection(network, u))[nr]
        vm_res = x[vm_vars] ** 2 - x[o_re + vm_bps] ** 2 - x[o_im + vm_bps] ** 2
        return np.concatenate([mis.real, mis.imag, vm_res, a_lin @ x - rhs_lin])

    # fixed sparsity patterns: the callbacks only recompute values
    ycoo = network.ybus.tocoo()
    ycoo.sum_duplicates()
    row_of = np.full(nb, -1)
    row_of[nr] = np.arange(len(nr))
    keep = row_of[ycoo.row] >= 0
    yr, yc, yv = ycoo.row[keep], ycoo.col[keep], ycoo.data[keep]
    br = row_of[yr]
    dr = row_of[nr]
    n_nr = len(nr)
    pq = bal_pq.tocoo()
    lin = a_lin.tocoo()
    vm_rows = n_bal + np.arange(n_vm)
    jac_pattern = _Pattern(
        np.concatenate([br, br, n_nr + br, n_nr + br, dr, dr, n_nr + dr, n_nr + dr, pq.row,
                        vm_rows, vm_rows, vm_rows, n_bal + n_vm + lin.row]),
        np.concatenate([yc, nb + yc, yc, nb + yc, nr, nb + nr, nr, nb + nr, o_p + pq.col,
                        vm_vars, o_re + vm_bps, o_im + vm_bps, lin.col]),
        (m, n),
    )
    jac_const_tail = np.concatenate([pq.data])
    lin_data = lin.data

    def jacobian(x):
        u, _ = split(x)
        uy = u[yr] * np.conj(yv)
        a = np.conj(network.ybus @ u)[nr]
        data = np.concatenate([
            -uy.real, -uy.imag, -uy.imag, uy.real,
            -a.real, a.imag, -a.imag, -a.real,
            jac_const_tail,
            2.0 * x[vm_vars], -2.0 * x[o_re + vm_bps], -2.0 * x[o_im + vm_bps],
            lin_data,
        ])
        return jac_pattern.build(data)

    # Hessian of sum(lam * c): H = (B + B^H) / 2 with B = (diag(conj w) conj Y)^T holds
    # the entries conj(w_r y_rc) at (c, r) and w_r y_rc at (r, c)
    hess_pattern = _Pattern(
        np.concatenate([yc, yr, yc, yr, nb + yc, nb + yr, nb + yc, nb + yr, vm_vars, o_re + vm_bps, o_im + vm_bps]),
        np.concatenate([yr, yc, nb + yr, nb + yc, yr, yc, nb + yr, nb + yc, vm_vars, o_re + vm_bps, o_im + vm_bps]),
        (n, n),
    )

    def constraint_hessian(x, lam):
        w = lam[:n_nr][br] + 1j * lam[n_nr:n_bal][br]
        h_rc = w * yv  # entry (r, c); its conjugate sits at (c, r)
        re, im = h_rc.real, h_rc.imag
        # -2 [[Re H, -Im H], [Im H, Re H]] (the balance residual is generation minus injection)
        lam_vm = lam[n_bal:n_bal + n_vm]
        data = np.concatenate([
            -re, -re, -im, im, im, -im, -re, -re,
            2.0 * lam_vm, -2.0 * lam_vm, -2.0 * lam_vm,
        ])
        return hess_pattern.build(data)

    # -- initial point -------------------------------------------------------------
    x0 = np.zeros(n)
    u0 = network.flat_voltage
    x0[o_re:o_re + nb] = u0.real
    x0[o_im:o_im + nb] = u0.imag
    x0[vm_vars] = np.abs(u0[vm_bps])
    initialised = set()
    for t in terms:
        if t.var in initialised or t.var >= 2 * nb + 2 * nd:
            continue
        model = t.model
        x0[t.var] = model.mode() if isinstance(model, dist.PolynomialLogPdf) else model.mean()
        initialised.add(t.var)
    for k in cpf_rows:
        x0[o_q + k] = config.constant_pf.k * x0[o_p + k]
    for v, tp, tm, mu in lap_rows:
        d = x0[v] - mu
        x0[tp] = max(d, 0.0) + 1e-2
        x0[tm] = max(-d, 0.0) + 1e-2

    prob = SEProblem(
        n=n,
        m=m,
        x0=x0,
        objective=objective,
        gradient=gradient,
        hessian=hessian,
        constraints=constraints,
        jacobian=jacobian,
        constraint_hessian=constraint_hessian,
        lb=lb,
        ub=ub,
        network=network,
        measurements=measurements,
        terms=terms,
        layout={"u_re": o_re, "u_im": o_im, "p": o_p, "q": o_q, "nb": nb, "nd": nd, "vm_var": vm_var},
        constraint_blocks={"balance": n_bal, "vm": n_vm, "linear": n_lin, "constant_pf": len(cpf_rows)},
    )
    return prob


def decode(problem: SEProblem, x: np.ndarray) -> StateSolution:
    lay = problem.layout
    nb, nd = lay["nb"], lay["nd"]
    u = x[lay["u_re"]:lay["u_re"] + nb] + 1j * x[lay["u_im"]:lay["u_im"] + nb]
    return StateSolution(u, x[lay["p"]:lay["p"] + nd].copy(), x[lay["q"]:lay["q"] + nd].copy())


def estimate(
    network: Network,
    measurements: Sequence[Measurement],
    config: EstimatorConfig | None = None,
    strict: bool = True,
) -> SEResult:
    """Solve the estimation problem.

    With ``strict`` (default) a non-optimal solver status raises
    :class:`EstimationError` carrying the partial result.
    """
    config = config or EstimatorConfig()
    prob = build_problem(network, measurements, config)
    x, rep = solve(prob, config.solver)
    res = prob.residuals(x)
    result = SEResult(decode(prob, x), float(np.sum(res)), res, rep, x, prob)
    if strict and not rep.ok:
        raise EstimationError(
            f"estimation failed with status {rep.status} after {rep.iterations} iterations "
            f"({rep.message or 'no detail'}); {summarize(measurements)}",
            result,
        )
    return result


def reactive_rescale(model: UncertaintyModel, k1: float) -> UncertaintyModel:
    """Distribution of ``k1 * X`` used as the reactive-power model of a user."""
    if not (k1 > 0):
        raise ConfigError("k1 must be positive")
    if not isinstance(model, (Gaussian, Laplacian, dist.Beta4, dist.GMM, dist.PolynomialLogPdf)):
        raise ConfigError(f"cannot rescale {type(model).__name__}")
    return dist.rescale(model, k1)


# -- dedicated weighted least squares --------------------------------------------

def wls_estimate(
    network: Network,
    measurements: Sequence[Measurement],
    config: EstimatorConfig | None = None,
    tol: float = 1e-12,
    max_iter: int = 100,
) -> tuple[StateSolution, int]:
    """Equality-constrained Gauss-Newton WLS for all-Gaussian measurement sets.

    Measurement functions act on the natural state (``|U|`` computed from the
    rectangular voltages); constraints are nodal balance, reference angles and
    any constant-power-factor or correlation equalities. Each step solves the
    augmented system ``[[H'WH, C'], [C, 0]]`` with a sparse LU.
    """
    config = config or EstimatorConfig()
    measurements = list(measurements)
    if not all(isinstance(m.model, Gaussian) for m in measurements):
        raise ConfigError("wls_estimate needs Gaussian measurement models only")
    _check(network, measurements, config)
    nb = len(network.bus_phases)
    nd = len(network.device_phases)
    n = 2 * nb + 2 * nd
    nr = network.nonref_indices

    z = np.array([m.model.mu for m in measurements])
    wts = np.array([1.0 / m.model.sigma**2 for m in measurements])
    vm_rows = [(k, network.bp_index[(m.target.element, m.target.phase)]) for k, m in enumerate(measurements) if m.target.kind == VM]
    lin_rows = [(k, (2 * nb if m.target.kind == P else 2 * nb + nd) + network.dp_index[(m.target.element, m.target.phase)])
                for k, m in enumerate(measurements) if m.target.kind != VM]

    lin = []
    for k, theta in zip(network.ref_indices, network.ref_angles):
        lin.append({k: math.sin(theta), nb + k: -math.cos(theta)})
    for g in config.pv_correlation_groups:
        i0 = 2 * nb + network.dp_index[(g[0].device, g[0].phase)]
        for mem in g[1:]:
            lin.append({i0: mem.scale, 2 * nb + network.dp_index[(mem.device, mem.phase)]: -g[0].scale})
    if config.constant_pf is not None:
        for did in config.constant_pf.devices:
            for ph in network.device_map[did].phases:
                k = network.dp_index[(did, ph)]
                lin.append({2 * nb + nd + k: 1.0, 2 * nb + k: -config.constant_pf.k})
    a_lin = sp.csr_matrix(
        ([a for row in lin for a in row.values()],
         ([i for i, row in enumerate(lin) for _ in row], [j for row in lin for j in row])),
        shape=(len(lin), n),
    )
    cinc = network.device_incidence[nr]

    x = np.zeros(n)
    u0 = network.flat_voltage
    x[:nb], x[nb:2 * nb] = u0.real, u0.imag
    for k, j in lin_rows:
        x[j] = z[k]

    wmat = sp.diags(wts)
    for it in range(1, max_iter + 1):
        u = x[:nb] + 1j * x[nb:2 * nb]
        h = np.zeros(len(measurements))
        hr, hc, hv = [], [], []
        for k, bp in vm_rows:
            mag = abs(u[bp])
            h[k] = mag
            hr += [k, k]
            hc += [bp, nb + bp]
            hv += [u[bp].real / mag, u[bp].imag / mag]
        for k, j in lin_rows:
            h[k] = x[j]
            hr.append(k)
            hc.append(j)
            hv.append(1.0)
        hj = sp.csr_matrix((hv, (hr, hc)), shape=(len(measurements), n))
        s_dev = x[2 * nb:2 * nb + nd] + 1j * x[2 * nb + nd:]
        mis = (network.device_incidence @ s_dev - injection(network, u))[nr]
        d_re, d_im = injection_jacobian(network, u)
        d_re, d_im = d_re[nr], d_im[nr]
        c_bal = sp.hstack([-sp.bmat([[d_re.real, d_im.real], [d_re.imag, d_im.imag]]),
                           sp.bmat([[cinc, None], [None, cinc]])])
        cmat = sp.vstack([c_bal, a_lin]).tocsc()
        cval = np.concatenate([mis.real, mis.imag, a_lin @ x])
        gain = (hj.T @ wmat @ hj).tocsc()
        kkt = sp.bmat([[gain, cmat.T], [cmat, None]]).tocsc()
        rhs = np.concatenate([hj.T @ (wts * (z - h)), -cval])
        try:
            sol = spla.splu(kkt).solve(rhs)
        except RuntimeError as exc:
            raise EstimationError(f"WLS gain system is singular: {exc}") from exc
        dx = sol[:n]
        x = x + dx
        if np.max(np.abs(dx)) < tol:
            break
    else:
        raise EstimationError(f"WLS did not converge in {max_iter} iterations")
    state = StateSolution(x[:nb] + 1j * x[nb:2 * nb], x[2 * nb:2 * nb + nd].copy(), x[2 * nb + nd:].copy())
    return state, it


# -- JSON ---------------------------------------------------------------------------

def measurements_from_dict(network: Network, data) -> list[Measurement]:
    """Parse a measurement document.

    ``{"units": "si"|"pu", "measurements": [{"target": {"type": "vm", "bus", "phase"}
    | {"type": "p"|"q", "device", "phase"}, "model": {...}, "kind": "real"|"pseudo"}]}``.
    In SI units voltages are volts and powers kW/kvar.
    """
    if isinstance(data, list):
        data = {"measurements": data}
    si = data.get("units", "si") == "si"
    out = []
    for rec in data["measurements"]:
        tgt = rec["target"]
        kind = tgt["type"]
        element = tgt["bus"] if kind == VM else tgt["device"]
        target = MeasurementTarget(kind, str(element), tgt["phase"])
        model = dist.from_dict(rec["model"])
        if si:
            if kind == VM:
                if element not in network.bus_map:
                    raise ConfigError(f"unknown bus {element}")
                base = network.bus_map[element].base_voltage
            else:
                base = network.power_base_kva
            model = dist.rescale(model, 1.0 / base)
        out.append(Measurement(target, model, rec.get("kind", "real")))
    return out


def measurements_to_dict(network: Network, measurements: Sequence[Measurement], units: str = "si") -> dict:
    recs = []
    for m in measurements:
        t = m.target
        model = m.model
        if units == "si":
            base = network.bus_map[t.element].base_voltage if t.kind == VM else network.power_base_kva
            model = dist.rescale(model, base)
        tgt = {"type": t.kind, "phase": t.phase}
        tgt["bus" if t.kind == VM else "device"] = t.element
        recs.append({"target": tgt, "model": dist.to_dict(model), "kind": m.kind})
    return {"units": units, "measurements": recs}


def config_from_dict(data: dict) -> EstimatorConfig:
    cfg = EstimatorConfig()
    for g in data.get("pv_correlation_groups", []):
        cfg.pv_correlation_groups.append(
            [CorrelationMember(str(m["device"]), m["phase"], float(m.get("scale", 1.0))) for m in g]
        )
    cpf = data.get("constant_pf")
    if cpf:
        k = float(cpf["k"]) if "k" in cpf else math.tan(math.acos(float(cpf["power_factor"])))
        cfg.constant_pf = ConstantPowerFactor(k, [str(d) for d in cpf["devices"]])
    if "solver" in data:
        cfg.solver = SolverOptions(**data["solver"])
    if "vm_bounds" in data:
        cfg.vm_bounds = tuple(float(v) for v in data["vm_bounds"])
    for key in ("support_shrink", "xi_offset"):
        if key in data:
            setattr(cfg, key, float(data[key]))
    if "xi_literal" in data:
        cfg.xi_literal = bool(data["xi_literal"])
    if "hessian" in data:
        if data["hessian"] not in ("exact", "gauss_newton"):
            raise ConfigError("hessian must be 'exact' or 'gauss_newton'")
        cfg.hessian = data["hessian"]
    return cfg


def result_to_dict(network: Network, result: SEResult) -> dict:
    rep = result.report
    return {
        "status": rep.status,
        "objective": result.objective,
        "iterations": rep.iterations,
        "stationarity": rep.stationarity,
        "infeasibility": rep.infeasibility,
        "solve_time_s": rep.wall_time,
        "residuals": result.residuals.tolist(),
        "state": result.state.to_dict(network),
    }

"""Three-phase unbalanced power flow in rectangular voltage coordinates.

The bus-phase injection ``S = U * conj(Y @ U)`` equals the sum of the
diagonals of the branch flow matrices leaving each bus, so the nodal balance
``C @ (P + jQ) - S = 0`` is evaluated on the nodal admittance matrix. The same
evaluators (value, Jacobian, Lagrangian Hessian) serve the estimator.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .netmodel import Network


class PowerFlowError(RuntimeError):
    def __init__(self, message, iterations=0, mismatch=float("nan")):
        super().__init__(message)
        self.iterations = iterations
        self.mismatch = mismatch


@dataclass
class StateSolution:
    """Complex bus-phase voltages and device-phase powers, ordered as in the network."""

    voltage: np.ndarray
    p: np.ndarray
    q: np.ndarray

    @property
    def vm(self) -> np.ndarray:
        return np.abs(self.voltage)

    def to_dict(self, net: Network) -> dict:
        s = net.power_base_kva
        return {
            "bus_phases": [
                {
                    "bus": b,
                    "phase": ph,
                    "u_re": float(u.real),
                    "u_im": float(u.imag),
                    "u_mag": float(abs(u)),
                    "u_mag_v": float(abs(u) * net.bus_map[b].base_voltage),
                }
                for (b, ph), u in zip(net.bus_phases, self.voltage)
            ],
            "device_phases": [
                {"device": d, "phase": ph, "p": float(p), "q": float(q), "p_kw": float(p * s), "q_kvar": float(q * s)}
                for (d, ph), p, q in zip(net.device_phases, self.p, self.q)
            ],
        }

    @classmethod
    def from_dict(cls, net: Network, data: dict) -> "StateSolution":
        u = np.zeros(len(net.bus_phases), dtype=complex)
        for rec in data["bus_phases"]:
            u[net.bp_index[(rec["bus"], rec["phase"])]] = rec["u_re"] + 1j * rec["u_im"]
        p = np.zeros(len(net.device_phases))
        q = np.zeros(len(net.device_phases))
        for rec in data["device_phases"]:
            k = net.dp_index[(rec["device"], rec["phase"])]
            p[k], q[k] = rec["p"], rec["q"]
        return cls(u, p, q)


@dataclass
class PFSpec:
    """Fixed per-device-phase complex power setpoints (p.u.)."""

    p: np.ndarray
    q: np.ndarray

    @classmethod
    def from_profiles(cls, net: Network) -> "PFSpec":
        p, q = [], []
        for d in net.devices:
            p.extend(d.profile_p if d.profile_p is not None else [0.0] * len(d.phases))
            q.extend(d.profile_q if d.profile_q is not None else [0.0] * len(d.phases))
        return cls(np.array(p, dtype=float), np.array(q, dtype=float))

    @classmethod
    def zero(cls, net: Network) -> "PFSpec":
        n = len(net.device_phases)
        return cls(np.zeros(n), np.zeros(n))

    @classmethod
    def from_dict(cls, net: Network, data: dict) -> "PFSpec":
        """``{"units": "si"|"pu", "setpoints": [{"device", "phase", "p", "q"}]}``; SI means kW/kvar."""
        scale = 1.0 / net.power_base_kva if data.get("units", "si") == "si" else 1.0
        spec = cls.zero(net)
        for rec in data["setpoints"]:
            k = net.dp_index[(rec["device"], rec["phase"])]
            spec.p[k] = float(rec["p"]) * scale
            spec.q[k] = float(rec.get("q", 0.0)) * scale
        return spec


@dataclass
class PFReport:
    iterations: int
    mismatch: float
    converged: bool
    wall_time: float = 0.0
    history: list = field(default_factory=list)


# -- shared evaluators ---------------------------------------------------------

def injection(net: Network, u: np.ndarray) -> np.ndarray:
    """Complex power leaving every bus-phase into the branches."""
    return u * np.conj(net.ybus @ u)


def injection_jacobian(net: Network, u: np.ndarray) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Derivatives of :func:`injection` w.r.t. the real and imaginary voltage parts."""
    y = net.ybus
    i_conj = sp.diags(np.conj(y @ u))
    u_yc = sp.diags(u) @ y.conj()
    d_re = i_conj + u_yc
    d_im = 1j * (i_conj - u_yc)
    return d_re.tocsr(), d_im.tocsr()


def injection_hessian(net: Network, w: np.ndarray) -> sp.csr_matrix:
    """Hessian over ``[U_re; U_im]`` of ``sum(Re(w) * Re(S) + Im(w) * Im(S))``.

    The weighted sum is ``Re(U^H B U)`` with ``B = (diag(conj w) conj Y)^T``;
    it does not depend on ``U`` because ``S`` is quadratic in the voltages.
    """
    b = (sp.diags(np.conj(w)) @ net.ybus.conj()).T
    h = 0.5 * (b + b.conj().T)
    r, s = h.real, h.imag
    return (2.0 * sp.bmat([[r, -s], [s, r]])).tocsr()


def nodal_balance_residual(net: Network, state: StateSolution) -> np.ndarray:
    """Complex generation-minus-demand minus network injection at non-reference bus-phases.

    Reference bus-phases host the slack source and are excluded.
    """
    if state.voltage.shape != (len(net.bus_phases),) or state.p.shape != (len(net.device_phases),):
        raise ValueError("state does not cover the network")
    mis = net.device_incidence @ (state.p + 1j * state.q) - injection(net, state.voltage)
    return mis[net.nonref_indices]


def branch_flows(net: Network, state: StateSolution) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Per-branch complex power matrices ``(S_ij, S_ji)`` from the pi-model blocks."""
    u = state.voltage
    if u.shape != (len(net.bus_phases),):
        raise ValueError("state voltage vector does not match the network bus-phases")
    out = {}
    for br in net.branches:
        f, t = net.branch_index(br)
        ui = u[f][:, None]
        uj = u[t][:, None]
        ys = br.y_series
        s_ij = ui @ ui.conj().T @ (ys + br.y_shunt_from).conj().T - ui @ uj.conj().T @ ys.conj().T
        s_ji = uj @ uj.conj().T @ (ys + br.y_shunt_to).conj().T - uj @ ui.conj().T @ ys.conj().T
        out[br.id] = (s_ij, s_ji)
    return out


def head_power(net: Network, state: StateSolution) -> dict[str, float]:
    """Active power per phase leaving the reference bus (sum over head branches)."""
    flows = branch_flows(net, state)
    ref = net.reference_bus.id
    out = {"a": 0.0, "b": 0.0, "c": 0.0}
    for br in net.head_branches:
        s_ij, s_ji = flows[br.id]
        s = s_ij if br.from_bus == ref else s_ji
        for k, ph in enumerate(br.phases):
            out[ph] += float(np.real(s[k, k]))
    return out


# -- Newton power flow -----------------------------------------------------------

def reference_voltage(net: Network, magnitude: float = 1.0) -> np.ndarray:
    return magnitude * np.exp(1j * net.ref_angles)


def solve_pf(
    net: Network,
    spec: PFSpec,
    tol: float = 1e-10,
    max_iter: int = 50,
    v_ref: float = 1.0,
    init: np.ndarray | None = None,
) -> tuple[StateSolution, PFReport]:
    """Newton-Raphson on the real/imaginary parts of non-reference voltages.

    Raises :class:`PowerFlowError` on a singular Jacobian or when the
    mismatch infinity-norm is still above ``tol`` after ``max_iter`` steps.
    """
    t0 = time.perf_counter()
    nr = net.nonref_indices
    u = net.flat_voltage.copy() if init is None else np.array(init, dtype=complex)
    u[net.ref_indices] = reference_voltage(net, v_ref)
    s_spec = (net.device_incidence @ (spec.p + 1j * spec.q))[nr]
    history = []
    for it in range(max_iter + 1):
        mis = s_spec - injection(net, u)[nr]
        f = np.concatenate([mis.real, mis.imag])
        err = float(np.max(np.abs(f))) if f.size else 0.0
        history.append(err)
        if not np.isfinite(err):
            raise PowerFlowError("power flow diverged", it, err)
        if err < tol:
            state = StateSolution(u, spec.p.copy(), spec.q.copy())
            return state, PFReport(it, err, True, time.perf_counter() - t0, history)
        if it == max_iter:
            break
        d_re, d_im = injection_jacobian(net, u)
        jac = sp.bmat(
            [[d_re.real[nr][:, nr], d_im.real[nr][:, nr]], [d_re.imag[nr][:, nr], d_im.imag[nr][:, nr]]]
        ).tocsc()
        try:
            dx = spla.splu(jac).solve(f)
        except RuntimeError as exc:
            raise PowerFlowError(f"singular power-flow Jacobian: {exc}", it, err) from exc
        if not np.all(np.isfinite(dx)):
            raise PowerFlowError("singular power-flow Jacobian", it, err)
        n = len(nr)
        u[nr] += dx[:n] + 1j * dx[n:]
    raise PowerFlowError(f"power flow did not converge in {max_iter} iterations (mismatch {err:.3e})", max_iter, err)

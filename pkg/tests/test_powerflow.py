import cmath
import math

import numpy as np
import pytest
import scipy.sparse as sp

from dsse import powerflow as pf
from dsse import presets
from dsse.netmodel import Branch, Bus, Network, network_from_dict, network_to_dict
from dsse.powerflow import PFSpec, PowerFlowError, StateSolution, solve_pf


def _sweep_two_bus(y, s_load, v0=1.0 + 0j, tol=1e-14):
    """Fixed-point backward/forward sweep for one line feeding one load."""
    z = 1.0 / y
    v = v0
    for _ in range(500):
        i = np.conj(s_load / v)
        v_new = v0 - z * i
        if abs(v_new - v) < tol:
            return v_new
        v = v_new
    raise AssertionError("sweep did not converge")


def test_two_bus_matches_sweep_oracle(two_bus):
    state, rep = solve_pf(two_bus, PFSpec.from_profiles(two_bus))
    y = two_bus.branches[0].y_series[0, 0]
    d = two_bus.devices[0]
    v_ref = _sweep_two_bus(y, d.profile_p[0] + 1j * d.profile_q[0])
    assert abs(state.voltage[1] - v_ref) < 1e-8
    assert rep.converged and rep.mismatch < 1e-10


def test_branch_flow_hand_values():
    y = 1.0 - 5.0j
    ui = 1.0
    uj = 0.98 * cmath.exp(-1j * math.radians(1.0))
    net = Network(
        buses=(Bus("i", ("a",), "reference"), Bus("j", ("a",))),
        branches=(Branch("l", "i", "j", ("a",), np.array([[y]]), np.zeros((1, 1)), np.zeros((1, 1))),),
        devices=(),
    )
    s_ij, s_ji = pf.branch_flows(net, StateSolution(np.array([ui, uj]), np.zeros(0), np.zeros(0)))["l"]
    hand_ij = ui * np.conj(y * (ui - uj))
    hand_ji = uj * np.conj(y * (uj - ui))
    assert s_ij[0, 0] == pytest.approx(hand_ij, abs=1e-14)
    assert s_ji[0, 0] == pytest.approx(hand_ji, abs=1e-14)
    # series losses are non-negative
    assert (s_ij[0, 0] + s_ji[0, 0]).real >= 0


def test_equal_voltages_give_no_flow(two_bus):
    u = np.array([1.0 + 0j, 1.0 + 0j])
    s_ij, s_ji = pf.branch_flows(two_bus, StateSolution(u, np.zeros(1), np.zeros(1)))["l1"]
    assert np.all(s_ij == 0) and np.all(s_ji == 0)


def test_losses_positive_on_feeder(feeder30):
    # mutual coupling moves power between phases, so only the branch total is signed
    state, _ = solve_pf(feeder30, PFSpec.from_profiles(feeder30))
    for s_ij, s_ji in pf.branch_flows(feeder30, state).values():
        assert np.trace(s_ij + s_ji).real >= 0


def test_injection_equals_branch_flow_sum(three_bus):
    state, _ = solve_pf(three_bus, PFSpec.from_profiles(three_bus))
    flows = pf.branch_flows(three_bus, state)
    total = np.zeros(len(three_bus.bus_phases), dtype=complex)
    for br in three_bus.branches:
        f, t = three_bus.branch_index(br)
        s_ij, s_ji = flows[br.id]
        total[f] += np.diag(s_ij)
        total[t] += np.diag(s_ji)
    np.testing.assert_allclose(pf.injection(three_bus, state.voltage), total, atol=1e-11)


def test_residual_zero_at_solution(feeder30):
    state, _ = solve_pf(feeder30, PFSpec.from_profiles(feeder30))
    assert np.max(np.abs(pf.nodal_balance_residual(feeder30, state))) < 1e-10


def _without_shunts(net):
    doc = network_to_dict(net)
    for br in doc["branches"]:
        br.pop("y_shunt_from")
        br.pop("y_shunt_to")
    return network_from_dict(doc)


def test_residual_zero_flat_no_load(feeder30):
    net = _without_shunts(feeder30)
    n = len(net.device_phases)
    res = pf.nodal_balance_residual(net, StateSolution(net.flat_voltage, np.zeros(n), np.zeros(n)))
    # zero up to cancellation among admittances of order 1e3 p.u.
    assert np.max(np.abs(res)) < 1e-14 * abs(net.ybus).max() * 10


def test_residual_detects_perturbation(two_bus):
    state, _ = solve_pf(two_bus, PFSpec.from_profiles(two_bus))
    u = state.voltage.copy()
    u[1] += 1e-3
    res = pf.nodal_balance_residual(two_bus, StateSolution(u, state.p, state.q))
    assert np.linalg.norm(res) > 0


def test_zero_load_gives_flat_solution(feeder30):
    net = _without_shunts(feeder30)
    state, _ = solve_pf(net, PFSpec.zero(net))
    np.testing.assert_allclose(state.vm, 1.0, atol=1e-12)


def test_sampled_loads_feeder30(feeder30):
    rng = np.random.default_rng(11)
    spec = PFSpec.from_profiles(feeder30)
    spec.p = presets.BETA.sample(rng, spec.p.size)
    spec.q = presets.K_PF * spec.p
    state, _ = solve_pf(feeder30, spec)
    assert np.max(np.abs(pf.nodal_balance_residual(feeder30, state))) < 1e-10


def test_zero_load_homotopy_is_monotone(feeder30):
    net = _without_shunts(feeder30)
    base = PFSpec.from_profiles(net)
    devs = []
    for s in (1.0, 0.5, 0.25, 0.1, 0.01, 0.0):
        st, _ = solve_pf(net, PFSpec(s * base.p, s * base.q))
        devs.append(float(np.max(np.abs(st.vm - 1.0))))
    assert all(a >= b for a, b in zip(devs, devs[1:]))
    assert devs[-1] < 1e-12


def test_non_convergence_raises(feeder30):
    spec = PFSpec.from_profiles(feeder30)
    spec.p *= 1e4
    with pytest.raises(PowerFlowError) as err:
        solve_pf(feeder30, spec, max_iter=8)
    assert err.value.iterations > 0


def _stacked(net, u):
    d_re, d_im = pf.injection_jacobian(net, u)
    return sp.bmat([[d_re.real, d_im.real], [d_re.imag, d_im.imag]]).toarray()


def test_injection_jacobian_finite_differences(feeder30):
    rng = np.random.default_rng(3)
    nb = len(feeder30.bus_phases)
    h = 1e-6
    for _ in range(50):
        u = feeder30.flat_voltage * (1 + 0.05 * rng.standard_normal(nb)) + 0.02j * rng.standard_normal(nb)
        jac = _stacked(feeder30, u)
        k = int(rng.integers(2 * nb))
        e = np.zeros(nb, dtype=complex)
        e[k % nb] = 1.0 if k < nb else 1j
        sp_ = pf.injection(feeder30, u + h * e)
        sm_ = pf.injection(feeder30, u - h * e)
        fd = np.concatenate([(sp_ - sm_).real, (sp_ - sm_).imag]) / (2 * h)
        np.testing.assert_allclose(jac[:, k], fd, rtol=1e-6, atol=1e-6 * np.max(np.abs(fd)))


def test_injection_hessian_finite_differences(three_bus):
    rng = np.random.default_rng(4)
    nb = len(three_bus.bus_phases)
    w = rng.standard_normal(nb) + 1j * rng.standard_normal(nb)
    hess = pf.injection_hessian(three_bus, w).toarray()
    u = three_bus.flat_voltage + 0.01 * rng.standard_normal(nb)
    h = 1e-6

    def grad(v):
        d_re, d_im = pf.injection_jacobian(three_bus, v)
        return np.concatenate([(d_re.T @ np.conj(w)).real, (d_im.T @ np.conj(w)).real])

    for k in range(2 * nb):
        e = np.zeros(nb, dtype=complex)
        e[k % nb] = 1.0 if k < nb else 1j
        fd = (grad(u + h * e) - grad(u - h * e)) / (2 * h)
        np.testing.assert_allclose(hess[:, k], fd, rtol=1e-4, atol=1e-6)


def test_head_power_balances_losses(three_bus):
    state, _ = solve_pf(three_bus, PFSpec.from_profiles(three_bus))
    head = pf.head_power(three_bus, state)
    net_load = -(three_bus.device_incidence @ state.p)
    losses = sum(np.sum(np.diag(a + b).real) for a, b in pf.branch_flows(three_bus, state).values())
    assert sum(head.values()) == pytest.approx(net_load.sum() + losses, abs=1e-12)


def test_state_dict_round_trip(feeder30):
    state, _ = solve_pf(feeder30, PFSpec.from_profiles(feeder30))
    again = StateSolution.from_dict(feeder30, state.to_dict(feeder30))
    np.testing.assert_array_equal(again.voltage, state.voltage)
    np.testing.assert_array_equal(again.p, state.p)


def test_setpoints_from_dict(two_bus):
    spec = PFSpec.from_dict(two_bus, {"units": "si", "setpoints": [{"device": "u1", "phase": "a", "p": 1.0, "q": 0.2}]})
    assert spec.p[0] == pytest.approx(1.0 / two_bus.power_base_kva)

import csv
import math

import numpy as np
import pytest

from dsse import harness, presets
from dsse.distributions import Gaussian, PolynomialLogPdf
from dsse.harness import (
    CSV_HEADER,
    ScenarioConfig,
    ScenarioError,
    generate_scenario,
    measurement_set,
    metrics,
    run_monte_carlo,
    write_csv,
)
from dsse.powerflow import PFSpec, PowerFlowError, StateSolution, solve_pf


def _scen(net, cfg, seed, ratio):
    draw = harness._draw(net, cfg, np.random.default_rng(seed))
    return harness._scenario(net, cfg, draw, ratio)


def test_ratio_zero_is_all_gaussian(feeder30):
    cfg = ScenarioConfig()
    _, ms = generate_scenario(feeder30, cfg, np.random.default_rng(0), ratio=0.0)
    assert all(isinstance(m.model, Gaussian) for m in ms)
    assert {m.target.kind for m in ms} == {"vm", "p", "q"}


def test_half_ratio_picks_five_of_ten_users(feeder30):
    cfg = ScenarioConfig()
    a = _scen(feeder30, cfg, 5, 0.5)
    b = _scen(feeder30, cfg, 5, 0.5)
    assert len(feeder30.users) == 10
    assert len(a.pseudo) == 5 and len(a.smart) == 5
    assert a.pseudo == b.pseudo
    np.testing.assert_array_equal(a.truth.voltage, b.truth.voltage)


def test_pseudo_users_get_sampled_power(feeder30):
    cfg = ScenarioConfig()
    scen = _scen(feeder30, cfg, 1, 0.3)
    prof = PFSpec.from_profiles(feeder30)
    for did in scen.smart:
        for ph in "abc":
            k = feeder30.dp_index[(did, ph)]
            assert scen.truth.p[k] == prof.p[k]
    for did in scen.pseudo:
        for ph in "abc":
            k = feeder30.dp_index[(did, ph)]
            assert scen.truth.p[k] == scen.draw.p_sample[k]
            assert scen.truth.q[k] == pytest.approx(cfg.k1 * scen.draw.q_sample[k])


def test_polynomial_constant_pf_scenario(feeder30):
    cfg = ScenarioConfig(original="polynomial", reactive="constant_pf")
    scen = _scen(feeder30, cfg, 2, 0.4)
    ms = measurement_set(feeder30, cfg, scen, "exact")
    pseudo = [m for m in ms if m.target.element in scen.pseudo and m.target.kind != "vm"]
    assert pseudo and all(m.target.kind == "p" and isinstance(m.model, PolynomialLogPdf) for m in pseudo)
    for did in scen.smart:
        kinds = sorted(m.target.kind for m in ms if m.target.element == did)
        assert kinds == ["p"] * 3 + ["q"] * 3
        assert all(isinstance(m.model, Gaussian) for m in ms if m.target.element == did)
    est = harness.estimator_config(cfg, scen)
    assert sorted(est.constant_pf.devices) == scen.pseudo
    assert est.constant_pf.k == pytest.approx(presets.K_PF)
    for did in scen.pseudo:
        k = feeder30.dp_index[(did, "a")]
        assert scen.truth.q[k] == pytest.approx(cfg.k2 * scen.truth.p[k])


def test_smart_meter_noise_levels(feeder30):
    cfg = ScenarioConfig()
    scen = _scen(feeder30, cfg, 3, 0.2)
    ms = measurement_set(feeder30, cfg, scen, "ga")
    vm = [m.model.sigma for m in ms if m.target.kind == "vm"]
    p = [m.model.sigma for m in ms if m.target.kind == "p" and m.target.element in scen.smart]
    assert vm and all(s == pytest.approx(0.38 / 230.0) for s in vm)
    assert all(s == pytest.approx(0.447 / 100, rel=1e-3) for s in p)


def test_metrics_identical_states(three_bus):
    state, _ = solve_pf(three_bus, PFSpec.from_profiles(three_bus))
    assert metrics(state, state, three_bus) == (0.0, 0.0, (0.0, 0.0, 0.0))


def test_metrics_two_bus_hand_value(two_bus):
    state, _ = solve_pf(two_bus, PFSpec.from_profiles(two_bus))
    v = state.voltage.copy()
    v[1] *= 1 + 0.01 / abs(v[1])
    other = StateSolution(v, state.p, state.q)
    du_avg, du_max, _ = metrics(state, other, two_bus)
    assert du_max == pytest.approx(0.01, abs=1e-14)
    assert du_avg == pytest.approx(0.005, abs=1e-14)


def test_metrics_three_bus_hand_arithmetic(three_bus):
    state, _ = solve_pf(three_bus, PFSpec.from_profiles(three_bus))
    shifts = np.array([0.0, 0.0, 0.002, -0.004, 0.001, 0.003])
    v = state.voltage * (1 + shifts / np.abs(state.voltage))
    du_avg, du_max, _ = metrics(state, StateSolution(v, state.p, state.q), three_bus)
    assert du_avg == pytest.approx((0.002 + 0.004 + 0.001 + 0.003) / 3)
    assert du_max == pytest.approx(0.004)
    du_bp, _, _ = metrics(state, StateSolution(v, state.p, state.q), three_bus, "bus_phases")
    assert du_bp == pytest.approx(0.010 / 6)


def test_metrics_head_power_in_kw(two_bus):
    state, _ = solve_pf(two_bus, PFSpec.from_profiles(two_bus))
    spec = PFSpec(state.p + 0.1, state.q)
    other, _ = solve_pf(two_bus, spec)
    _, _, dpt = metrics(state, other, two_bus)
    assert dpt[0] == pytest.approx(0.1 * two_bus.power_base_kva, rel=0.02)
    assert dpt[1] == dpt[2] == 0.0


def test_near_noise_free_run():
    cfg = ScenarioConfig(runs=1, ratios=[0.0], models=["exact"], sigma_v_volts=1e-6, power_sigma_divisor=1e6)
    records, _ = run_monte_carlo(cfg)
    assert records[0].status == "optimal"
    assert records[0].du_avg < 1e-4


def test_sweep_is_deterministic_and_worker_independent():
    cfg = ScenarioConfig(runs=2, ratios=[0.3, 0.6], seed=42)
    a, _ = run_monte_carlo(cfg)
    b, _ = run_monte_carlo(cfg)
    c, _ = run_monte_carlo(cfg, workers=2)
    key = [(r.ratio, r.run, r.model, r.du_avg, r.du_max, r.dpt_kw, r.status) for r in a]
    assert key == [(r.ratio, r.run, r.model, r.du_avg, r.du_max, r.dpt_kw, r.status) for r in b]
    assert key == [(r.ratio, r.run, r.model, r.du_avg, r.du_max, r.dpt_kw, r.status) for r in c]
    assert len(a) == 2 * 2 * 4


def test_different_seeds_differ():
    a, _ = run_monte_carlo(ScenarioConfig(runs=1, ratios=[0.5], models=["ga"], seed=1))
    b, _ = run_monte_carlo(ScenarioConfig(runs=1, ratios=[0.5], models=["ga"], seed=2))
    assert a[0].du_avg != b[0].du_avg


def test_power_flow_failure_becomes_scenario_error(feeder30, monkeypatch):
    def boom(*args, **kwargs):
        raise PowerFlowError("diverged")

    monkeypatch.setattr(harness, "solve_pf", boom)
    cfg = ScenarioConfig(runs=1, ratios=[0.5], seed=9)
    draw = harness._draw(feeder30, cfg, np.random.default_rng(0))
    with pytest.raises(ScenarioError) as err:
        harness._scenario(feeder30, cfg, draw, 0.5, seed=(9, 0, 0))
    assert err.value.seed == (9, 0, 0)
    records = harness._one_run(cfg, feeder30, 0)
    assert {r.status for r in records} == {"scenario_error"}
    assert all(math.isnan(r.du_avg) for r in records)


def test_csv_layout(tmp_path):
    records, summary = run_monte_carlo(ScenarioConfig(runs=1, ratios=[0.2], models=["ge", "ga"]))
    path = tmp_path / "out.csv"
    write_csv(records, path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == CSV_HEADER
    assert ",".join(CSV_HEADER) == "ratio,run,model,du_avg_pu,du_max_pu,dpt_a_kw,dpt_b_kw,dpt_c_kw,status,solve_time_s"
    assert [r[2] for r in rows[1:]] == ["ge", "ga"]
    assert {s["model"] for s in summary} == {"ge", "ga"}


@pytest.mark.parametrize(
    "bad",
    [
        {"original": "weibull"},
        {"models": ["exact", "wls"]},
        {"reactive": "fixed"},
        {"ratios": [1.0]},
        {"runs": 0},
        {"pairing": "shared"},
        {"unknown_key": 1},
    ],
)
def test_config_validation(bad):
    with pytest.raises(ValueError):
        ScenarioConfig.from_dict(bad)


def test_config_file_round_trip(tmp_path):
    import json

    cfg = ScenarioConfig(original="polynomial", reactive="constant_pf", runs=3, seed=7)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(harness.config_to_dict(cfg)))
    assert ScenarioConfig.load(path) == cfg

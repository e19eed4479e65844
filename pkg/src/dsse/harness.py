"""Monte-Carlo accuracy study of the estimator against power-flow ground truth.

One run draws a pseudo-user subset, samples their demand from the original
distribution, solves a power flow for the true state, perturbs the smart-meter
readings of the remaining users, and estimates the state once per uncertainty
model (exact, gmm, ge, ga) on the same draw.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import distributions as dist
from . import presets
from .distributions import Gaussian
from .estimator import (
    ConstantPowerFactor,
    EstimatorConfig,
    Measurement,
    MeasurementTarget,
    estimate,
    reactive_rescale,
)
from .netmodel import Network, load_network
from .nlp import SolverOptions
from .powerflow import PFSpec, PowerFlowError, StateSolution, head_power, solve_pf

MODELS = ("exact", "gmm", "ge", "ga")
CSV_HEADER = ["ratio", "run", "model", "du_avg_pu", "du_max_pu", "dpt_a_kw", "dpt_b_kw", "dpt_c_kw", "status", "solve_time_s"]


class ScenarioError(RuntimeError):
    def __init__(self, message, seed=None):
        super().__init__(message)
        self.seed = seed


@dataclass
class ScenarioConfig:
    network: str = "feeder30"
    original: str = "beta"  # key of presets.ORIGINALS
    models: list[str] = field(default_factory=lambda: list(MODELS))
    reactive: str = "independent"  # or "constant_pf"
    k1: float = presets.K_PF
    k2: float = presets.K_PF
    sigma_v_volts: float = 0.38
    power_sigma_divisor: float = 100.0
    ratios: list[float] = field(default_factory=lambda: [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
    runs: int = 100
    seed: int = 0
    pairing: str = "independent"  # or "nested"
    du_normalization: str = "buses"  # or "bus_phases"
    solver: dict = field(default_factory=dict)

    def validate(self):
        if self.original not in presets.ORIGINALS:
            raise ValueError(f"unknown original distribution {self.original!r}")
        bad = set(self.models) - set(MODELS)
        if bad:
            raise ValueError(f"unknown models {sorted(bad)}")
        if self.reactive not in ("independent", "constant_pf"):
            raise ValueError("reactive must be 'independent' or 'constant_pf'")
        if self.pairing not in ("independent", "nested"):
            raise ValueError("pairing must be 'independent' or 'nested'")
        if self.du_normalization not in ("buses", "bus_phases"):
            raise ValueError("du_normalization must be 'buses' or 'bus_phases'")
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        for r in self.ratios:
            if not 0.0 <= r < 1.0:
                raise ValueError(f"pseudo ratio {r} outside [0, 1)")

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scenario keys {sorted(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class RunRecord:
    ratio: float
    run: int
    model: str
    du_avg: float
    du_max: float
    dpt_kw: tuple[float, float, float]
    status: str
    solve_time: float

    def row(self) -> list:
        return [
            f"{self.ratio:g}", self.run, self.model,
            f"{self.du_avg:.9e}", f"{self.du_max:.9e}",
            *(f"{v:.9e}" for v in self.dpt_kw),
            self.status, f"{self.solve_time:.6f}",
        ]


@dataclass
class Draw:
    """Randomness of one run, shared by every uncertainty model."""

    order: np.ndarray  # permutation of user indices
    p_sample: np.ndarray  # per device-phase sample of the original model
    q_sample: np.ndarray  # independent sample used for reactive power
    noise_v: np.ndarray  # standard normal, per bus-phase
    noise_p: np.ndarray  # standard normal, per device-phase
    noise_q: np.ndarray


@dataclass
class Scenario:
    ratio: float
    pseudo: list[str]
    truth: StateSolution
    smart: list[str]
    draw: Draw


def _draw(network: Network, config: ScenarioConfig, rng: np.random.Generator) -> Draw:
    original = presets.ORIGINALS[config.original]["exact"]
    nd = len(network.device_phases)
    return Draw(
        order=rng.permutation(len(network.users)),
        p_sample=np.asarray(original.sample(rng, nd), dtype=float),
        q_sample=np.asarray(original.sample(rng, nd), dtype=float),
        noise_v=rng.standard_normal(len(network.bus_phases)),
        noise_p=rng.standard_normal(nd),
        noise_q=rng.standard_normal(nd),
    )


def _scenario(network: Network, config: ScenarioConfig, draw: Draw, ratio: float, seed=None) -> Scenario:
    users = [d.id for d in network.users]
    n_pseudo = int(round(ratio * len(users)))
    pseudo = sorted(users[i] for i in draw.order[:n_pseudo])
    smart = sorted(set(users) - set(pseudo))
    spec = PFSpec.from_profiles(network)
    for did in pseudo:
        for ph in network.device_map[did].phases:
            k = network.dp_index[(did, ph)]
            spec.p[k] = draw.p_sample[k]
            if config.reactive == "constant_pf":
                spec.q[k] = config.k2 * draw.p_sample[k]
            else:
                spec.q[k] = config.k1 * draw.q_sample[k]
    try:
        truth, _ = solve_pf(network, spec)
    except PowerFlowError as exc:
        raise ScenarioError(f"power flow failed for seed {seed}: {exc}", seed) from exc
    return Scenario(ratio, pseudo, truth, smart, draw)


def measurement_set(network: Network, config: ScenarioConfig, scen: Scenario, model: str) -> list[Measurement]:
    """Smart-meter Gaussians plus the pseudo-measurement model ``model`` for pseudo users."""
    table = presets.ORIGINALS[config.original]
    sigma_p = dist.ga_fit(table["exact"]).sigma / config.power_sigma_divisor
    sigma_q = config.k1 * sigma_p
    truth, d = scen.truth, scen.draw
    out = []
    for did in scen.smart:
        dev = network.device_map[did]
        for ph in dev.phases:
            bp = network.bp_index[(dev.bus, ph)]
            sigma_v = config.sigma_v_volts / network.bus_map[dev.bus].base_voltage
            z = abs(truth.voltage[bp]) + sigma_v * d.noise_v[bp]
            out.append(Measurement(MeasurementTarget.voltage_magnitude(dev.bus, ph), Gaussian(z, sigma_v)))
            k = network.dp_index[(did, ph)]
            out.append(Measurement(MeasurementTarget.active_power(did, ph), Gaussian(truth.p[k] + sigma_p * d.noise_p[k], sigma_p)))
            out.append(Measurement(MeasurementTarget.reactive_power(did, ph), Gaussian(truth.q[k] + sigma_q * d.noise_q[k], sigma_q)))
    pdf = table[model]
    q_pdf = reactive_rescale(pdf, config.k1) if config.reactive == "independent" else None
    for did in scen.pseudo:
        for ph in network.device_map[did].phases:
            out.append(Measurement(MeasurementTarget.active_power(did, ph), pdf, "pseudo"))
            if q_pdf is not None:
                out.append(Measurement(MeasurementTarget.reactive_power(did, ph), q_pdf, "pseudo"))
    return out


def estimator_config(config: ScenarioConfig, scen: Scenario) -> EstimatorConfig:
    cfg = EstimatorConfig(solver=SolverOptions(**config.solver))
    if config.reactive == "constant_pf" and scen.pseudo:
        cfg.constant_pf = ConstantPowerFactor(config.k2, list(scen.pseudo))
    return cfg


def generate_scenario(network: Network, config: ScenarioConfig, rng: np.random.Generator, ratio: float | None = None, model: str = "exact"):
    """Draw one scenario and return ``(true_state, measurements)``."""
    ratio = config.ratios[0] if ratio is None else ratio
    scen = _scenario(network, config, _draw(network, config, rng), ratio)
    return scen.truth, measurement_set(network, config, scen, model)


def metrics(true_state: StateSolution, se_state: StateSolution, network: Network, normalization: str = "buses"):
    """``(du_avg, du_max, dpt)``; voltage differences in p.u., head-branch power differences in kW."""
    n = len(network.bus_phases)
    if true_state.voltage.shape != (n,) or se_state.voltage.shape != (n,):
        raise ValueError("states do not cover the network")
    du = np.abs(np.abs(true_state.voltage) - np.abs(se_state.voltage))
    denom = len(network.buses) if normalization == "buses" else n
    pt_true = head_power(network, true_state)
    pt_se = head_power(network, se_state)
    s = network.power_base_kva
    dpt = tuple(abs(pt_true[ph] - pt_se[ph]) * s for ph in ("a", "b", "c"))
    return float(du.sum() / denom), float(du.max(initial=0.0)), dpt


# -- sweep -----------------------------------------------------------------------

def _run_rng(config: ScenarioConfig, ratio_index: int, run: int) -> np.random.Generator:
    key = [config.seed, run] if config.pairing == "nested" else [config.seed, ratio_index, run]
    return np.random.default_rng(key)


def _one_run(config: ScenarioConfig, network: Network, run: int) -> list[RunRecord]:
    records = []
    draw = _draw(network, config, _run_rng(config, 0, run)) if config.pairing == "nested" else None
    for ri, ratio in enumerate(config.ratios):
        d = draw if draw is not None else _draw(network, config, _run_rng(config, ri, run))
        try:
            scen = _scenario(network, config, d, ratio, seed=(config.seed, ri, run))
        except ScenarioError:
            for model in config.models:
                records.append(RunRecord(ratio, run, model, math.nan, math.nan, (math.nan,) * 3, "scenario_error", 0.0))
            continue
        cfg = estimator_config(config, scen)
        for model in config.models:
            ms = measurement_set(network, config, scen, model)
            try:
                res = estimate(network, ms, cfg, strict=False)
            except Exception as exc:  # noqa: BLE001 - record, never abort the sweep
                records.append(RunRecord(ratio, run, model, math.nan, math.nan, (math.nan,) * 3, f"error:{type(exc).__name__}", 0.0))
                continue
            du_avg, du_max, dpt = metrics(scen.truth, res.state, network, config.du_normalization)
            records.append(RunRecord(ratio, run, model, du_avg, du_max, dpt, res.report.status, res.report.wall_time))
    return records


_WORKER_STATE: dict = {}


def _worker_init(config: ScenarioConfig):
    _WORKER_STATE["config"] = config
    _WORKER_STATE["network"] = load_network(config.network)


def _worker_run(run: int) -> list[RunRecord]:
    return _one_run(_WORKER_STATE["config"], _WORKER_STATE["network"], run)


def run_monte_carlo(config: ScenarioConfig, workers: int = 1, progress=None) -> tuple[list[RunRecord], list[dict]]:
    """Run the sweep; records are ordered by (ratio, run, model) whatever ``workers`` is."""
    config.validate()
    runs = range(config.runs)
    if workers <= 1:
        network = load_network(config.network)
        chunks = []
        for r in runs:
            chunks.append(_one_run(config, network, r))
            if progress:
                progress(r + 1, config.runs)
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init, initargs=(config,)) as pool:
            chunks = []
            for r, recs in enumerate(pool.map(_worker_run, runs, chunksize=max(1, config.runs // (4 * workers)))):
                chunks.append(recs)
                if progress:
                    progress(r + 1, config.runs)
    order = {(m): i for i, m in enumerate(config.models)}
    records = sorted((rec for c in chunks for rec in c), key=lambda x: (config.ratios.index(x.ratio), x.run, order[x.model]))
    return records, summarize(records)


def summarize(records: list[RunRecord]) -> list[dict]:
    """Median and quartiles of the metrics per (ratio, model)."""
    groups: dict = {}
    for rec in records:
        groups.setdefault((rec.ratio, rec.model), []).append(rec)
    rows = []
    for (ratio, model), recs in groups.items():
        ok = [r for r in recs if r.status == "optimal"]
        du = np.array([r.du_avg for r in ok]) if ok else np.array([math.nan])
        dm = np.array([r.du_max for r in ok]) if ok else np.array([math.nan])
        dp = np.array([max(r.dpt_kw) for r in ok]) if ok else np.array([math.nan])
        tt = np.array([r.solve_time for r in ok]) if ok else np.array([math.nan])
        q1, med, q3 = np.quantile(du, [0.25, 0.5, 0.75])
        rows.append({
            "ratio": ratio,
            "model": model,
            "runs": len(recs),
            "optimal": len(ok),
            "du_avg_q1": float(q1),
            "du_avg_median": float(med),
            "du_avg_q3": float(q3),
            "du_max_median": float(np.median(dm)),
            "dpt_max_median_kw": float(np.median(dp)),
            "solve_time_median_s": float(np.median(tt)),
            "solve_time_max_s": float(np.max(tt)),
        })
    return rows


def write_csv(records: list[RunRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for rec in records:
            w.writerow(rec.row())


def format_summary(rows: list[dict]) -> str:
    head = f"{'ratio':>5} {'model':>6} {'ok':>7} {'dU_avg med':>11} {'q1':>10} {'q3':>10} {'dU_max med':>11} {'dPt med kW':>11} {'t med s':>8}"
    lines = [head]
    for r in rows:
        lines.append(
            f"{r['ratio']:>5g} {r['model']:>6} {r['optimal']:>3}/{r['runs']:<3} {r['du_avg_median']:>11.3e} "
            f"{r['du_avg_q1']:>10.3e} {r['du_avg_q3']:>10.3e} {r['du_max_median']:>11.3e} "
            f"{r['dpt_max_median_kw']:>11.3e} {r['solve_time_median_s']:>8.3f}"
        )
    return "\n".join(lines)


def config_to_dict(config: ScenarioConfig) -> dict:
    return asdict(config)

"""Command line entry point: ``dsse pf | se | mc | dist``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import distributions as dist
from . import presets
from .distributions import DistributionError
from .estimator import (
    ConfigError,
    EstimationError,
    config_from_dict,
    estimate,
    measurements_from_dict,
    result_to_dict,
    wls_estimate,
)
from .harness import ScenarioConfig, format_summary, run_monte_carlo, write_csv
from .netmodel import NetworkError, load_network
from .powerflow import PFSpec, PowerFlowError, solve_pf

PRESET_MODELS = {
    "beta": presets.BETA,
    "beta-gmm": presets.BETA_GMM,
    "polynomial": presets.POLY,
    "polynomial-gmm": presets.POLY_GMM,
}


def _read_json(arg: str):
    path = Path(arg)
    if path.exists():
        return json.loads(path.read_text())
    return json.loads(arg)


def _emit(obj, out: str | None):
    text = json.dumps(obj, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _model(arg: str):
    if arg in PRESET_MODELS:
        return PRESET_MODELS[arg]
    return dist.from_dict(_read_json(arg))


def cmd_pf(args) -> int:
    net = load_network(args.network)
    spec = PFSpec.from_dict(net, _read_json(args.setpoints)) if args.setpoints else PFSpec.from_profiles(net)
    state, rep = solve_pf(net, spec, tol=args.tol, max_iter=args.max_iter, v_ref=args.v_ref)
    out = state.to_dict(net)
    out["iterations"] = rep.iterations
    out["mismatch"] = rep.mismatch
    _emit(out, args.out)
    return 0


def cmd_se(args) -> int:
    net = load_network(args.network)
    ms = measurements_from_dict(net, _read_json(args.measurements))
    cfg = config_from_dict(_read_json(args.config)) if args.config else config_from_dict({})
    if args.wls:
        state, iters = wls_estimate(net, ms, cfg)
        _emit({"status": "optimal", "iterations": iters, "state": state.to_dict(net)}, args.out)
        return 0
    res = estimate(net, ms, cfg, strict=False)
    _emit(result_to_dict(net, res), args.out)
    return 0 if res.report.ok else 3


def cmd_mc(args) -> int:
    cfg = ScenarioConfig.load(args.config) if args.config else ScenarioConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.runs is not None:
        cfg.runs = args.runs
    cfg.validate()

    def progress(done, total):
        if args.progress:
            print(f"\r{done}/{total} runs", end="", file=sys.stderr, flush=True)

    records, summary = run_monte_carlo(cfg, workers=args.workers, progress=progress)
    if args.progress:
        print(file=sys.stderr)
    write_csv(records, args.out)
    if args.summary:
        Path(args.summary).write_text(json.dumps(summary, indent=2) + "\n")
    print(format_summary(summary))
    return 0


def cmd_dist(args) -> int:
    model = _model(args.model)
    if args.op == "ge":
        if not isinstance(model, dist.GMM):
            raise DistributionError("ge needs a Gaussian mixture")
        sel = None if args.components is None else [int(i) for i in args.components.split(",")]
        g = dist.ge_reduce(model, sel)
    else:
        g = dist.ga_fit(model)
    print(json.dumps({"type": "gaussian", "mu": g.mu, "sigma": g.sigma}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dsse", description="Maximum-likelihood state estimation for unbalanced distribution networks")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = p.add_subparsers(dest="command", required=True)

    pf = sub.add_parser("pf", help="solve a power flow")
    pf.add_argument("network", help="network JSON file or bundled fixture name")
    pf.add_argument("--setpoints", help="setpoint JSON (defaults to the device profiles)")
    pf.add_argument("--out", help="write the state JSON here instead of stdout")
    pf.add_argument("--tol", type=float, default=1e-10)
    pf.add_argument("--max-iter", type=int, default=50)
    pf.add_argument("--v-ref", type=float, default=1.0, help="reference voltage magnitude in p.u.")
    pf.set_defaults(func=cmd_pf)

    se = sub.add_parser("se", help="estimate the state from measurements")
    se.add_argument("network")
    se.add_argument("measurements", help="measurement JSON")
    se.add_argument("--config", help="estimator config JSON")
    se.add_argument("--out")
    se.add_argument("--wls", action="store_true", help="use the Gauss-Newton WLS path (Gaussian measurements only)")
    se.set_defaults(func=cmd_se)

    mc = sub.add_parser("mc", help="Monte-Carlo sweep over pseudo-measurement ratios")
    mc.add_argument("--config", help="scenario config JSON")
    mc.add_argument("--out", required=True, help="CSV output path")
    mc.add_argument("--seed", type=int)
    mc.add_argument("--workers", type=int, default=1)
    mc.add_argument("--runs", type=int, help="override the number of runs per ratio")
    mc.add_argument("--summary", help="also write the summary table as JSON")
    mc.add_argument("--progress", action="store_true")
    mc.set_defaults(func=cmd_mc)

    d = sub.add_parser("dist", help="Gaussian reductions of a distribution")
    d.add_argument("op", choices=["ge", "ga"])
    d.add_argument("model", help="distribution JSON (file or inline) or one of: " + ", ".join(PRESET_MODELS))
    d.add_argument("--components", help="comma-separated 0-based GMM components for ge (default: largest weight)")
    d.set_defaults(func=cmd_dist)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (NetworkError, PowerFlowError, ConfigError, EstimationError, DistributionError, ValueError, OSError) as exc:
        print(f"dsse: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

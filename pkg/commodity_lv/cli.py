#!/usr/bin/env python3
"""
Command-line front end

    python -m commodity_lv.cli calibrate     --config config/run.ini
    python -m commodity_lv.cli validate      --config config/run.ini [--no-leverage] [--atm-only]
    python -m commodity_lv.cli simulate      --config config/run.ini
    python -m commodity_lv.cli estimate-corr --config config/run.ini

Exit codes: 0 success, 1 validation pass rate below threshold, 2 any error.
"""
import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from rich.console import Console
from rich.table import Table

from commodity_lv.andersen import (
    atm_vol,
    calibrate_backbone,
    calibration_report,
    derived_params,
    estimate_rho_inf,
    integrated_variance,
)
from commodity_lv.config import ARTIFACT_VERSION, RunConfig, cli_overrides, load_config
from commodity_lv.engine import dump_paths, price_vanillas, realized_variance, simulate
from commodity_lv.exceptions import ArtifactError, CommodityLVError, ConfigError
from commodity_lv.leverage import calibrate_all, dump_leverage, load_leverage
from commodity_lv.market_data import MarketBundle, load_market, load_returns
from commodity_lv.models import AccumulatorKind, AndersenParams, RateMode
from commodity_lv.pricing import black_call
from commodity_lv.rates import G1ppModel
from commodity_lv.reports import read_json, write_csv, write_json
from commodity_lv.tiv import build_tiv_surfaces, dump_tiv, terminal_tiv

EXIT_OK = 0
EXIT_BELOW_THRESHOLD = 1
EXIT_ERROR = 2

console = Console()


def configure_logging(verbose: bool = False, log_file: Optional[Path] = None) -> None:
    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if verbose else "INFO",
               format="<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | {message}")
    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        logger.add(log_file, level="DEBUG", mode="w")


def _market(config: RunConfig) -> MarketBundle:
    m = config.market
    return load_market(m.futures, m.vols, m.discount, m.valuation_date)


def _rates(config: RunConfig, bundle: MarketBundle) -> G1ppModel:
    if config.rates.mode == RateMode.G1PP:
        return G1ppModel(config.rates.g1pp(), bundle.discount)
    return G1ppModel.deterministic(bundle.discount)


def _rho_inf(config: RunConfig) -> float:
    b = config.backbone
    if b.rho_source == "estimate":
        if not config.market.returns:
            raise ConfigError("rho_source = estimate needs market.returns")
        return estimate_rho_inf(load_returns(config.market.returns)).rho_inf
    if b.rho_inf is None:
        raise ConfigError("backbone.rho_inf is required when rho_source = given")
    return b.rho_inf


def _backbone(config: RunConfig, bundle: MarketBundle) -> Tuple[AndersenParams, Optional[float]]:
    b = config.backbone
    if not b.calibrate:
        if None in (b.kappa, b.h1, b.h2, b.h_inf):
            raise ConfigError("backbone.calibrate = false needs kappa, h1, h2 and h_inf")
        return AndersenParams(kappa=b.kappa, h1=b.h1, h2=b.h2, h_inf=b.h_inf), None
    rho = _rho_inf(config)
    return calibrate_backbone(bundle.atm_quotes(), rho), rho


def _write_meta(config: RunConfig) -> Dict:
    return {
        "config_hash": config.config_hash(),
        "seed": config.simulation.seed,
        "deterministic": config.output.deterministic,
    }


def cmd_calibrate(config: RunConfig) -> Dict[str, Path]:
    """
    Calibrate backbone and leverage, write params.json, seasonality.csv,
    tiv.csv, leverage.csv and diagnostics.json
    """
    out = config.output_dir
    meta = _write_meta(config)
    bundle = _market(config)
    params, rho = _backbone(config, bundle)
    surfaces = build_tiv_surfaces(bundle.slices, config.tiv.accumulator, config.tiv.mixture)
    rates = _rates(config, bundle)
    leverage, diagnostics = calibrate_all(bundle, params, surfaces, config.calibration,
                                          config.rates.mode, rates)

    artifacts = {}
    payload = {
        "version": ARTIFACT_VERSION,
        "calibration_hash": config.calibration_hash(),
        "params": params.model_dump(mode="json"),
        "derived": derived_params(params).model_dump(mode="json"),
        "rho_inf": rho,
        "accumulator": AccumulatorKind(config.tiv.accumulator).value,
        "rate_mode": RateMode(config.rates.mode).value,
        "contracts": bundle.curve.labels,
        "borrowed": {bundle.curve.labels[j]: donor for j, donor in bundle.borrowed.items()},
    }
    artifacts["params"] = write_json(payload, out / "params.json", **meta)
    artifacts["seasonality"] = write_csv(calibration_report(params, bundle.atm_quotes()),
                                         out / "seasonality.csv", **meta)
    y_grid = np.linspace(-0.5, 0.5, 21)
    t_grid = sorted({t for surf in leverage for t in surf.eval_times})
    artifacts["tiv"] = write_csv(dump_tiv(surfaces, y_grid, t_grid), out / "tiv.csv", **meta)
    artifacts["leverage"] = write_csv(dump_leverage(leverage), out / "leverage.csv", **meta)
    artifacts["diagnostics"] = write_json(diagnostics.to_dict(), out / "diagnostics.json", **meta)

    table = Table(title="Calibration")
    for col in ("contract", "T", "a(T)", "slices", "L min", "L max", "clamped"):
        table.add_column(col, justify="right")
    for surf in leverage:
        j = surf.delivery_index
        values = np.concatenate(surf.values)
        clamped = sum(d.clamped for d in diagnostics.slices if d.j == j)
        table.add_row(bundle.curve.labels[j], f"{surf.delivery:.4f}",
                      f"{float(params.seasonality(surf.delivery)):+.4f}", str(len(surf.values)),
                      f"{values.min():.4f}", f"{values.max():.4f}", str(clamped))
    console.print(table)
    logger.info(f"Calibration artifacts written to {out}")
    return artifacts


def _load_calibration(config: RunConfig) -> Tuple[AndersenParams, Dict]:
    document = read_json(config.output_dir / "params.json")
    if document.get("version") != ARTIFACT_VERSION:
        raise ArtifactError(f"params.json has artifact version {document.get('version')}, expected {ARTIFACT_VERSION}")
    if document.get("calibration_hash") != config.calibration_hash():
        raise ArtifactError("calibration artifacts were produced with a different configuration")
    return AndersenParams(**document["params"]), document


def cmd_validate(config: RunConfig, no_leverage: bool = False, atm_only: bool = False) -> Tuple[pd.DataFrame, float]:
    """
    Reprice the market smiles by simulation

    Returns:
        (per-cell report, pass rate)
    """
    out = config.output_dir
    meta = _write_meta(config)
    bundle = _market(config)
    params, _ = _load_calibration(config)
    deliveries = bundle.curve.deliveries
    leverage = None if no_leverage else load_leverage(out / "leverage.csv", deliveries)
    rates = _rates(config, bundle)

    wanted = config.validation.maturities
    contracts = [j for j, T in enumerate(deliveries)
                 if wanted is None or any(abs(T - m) < 1e-9 for m in wanted)]
    if not contracts:
        raise ConfigError("no delivery matches the validation maturities")
    ys = [0.0] if atm_only else list(np.log(config.validation.moneyness))

    requests = [(j, float(deliveries[j]), float(y)) for j in contracts for y in ys]
    sim = config.simulation.model_copy(update={"record_times": sorted({r[1] for r in requests})})
    block = simulate(bundle.curve, params, rates, sim, leverage)
    quotes = price_vanillas(block, requests)

    rows = []
    for q in quotes:
        T = q.expiry
        f0 = float(bundle.curve.prices[q.j])
        p0t = float(rates.discount(T))
        if atm_only:
            market_vol = float(atm_vol(params, T))
        else:
            market_vol = float(np.sqrt(terminal_tiv(bundle.slice_for(q.j))(q.y)[0][0] / T))
        market_price = float(black_call(f0, p0t, q.y, market_vol ** 2 * T))
        z = abs(q.price - market_price) / max(q.se, 1e-8 * f0 * p0t)
        rows.append({
            "j": q.j, "label": bundle.curve.labels[q.j], "expiry": T, "moneyness": float(np.exp(q.y)),
            "y": q.y, "market_price": market_price, "mc_price": q.price, "se": q.se, "z": z,
            "pass": bool(z <= config.validation.se_multiple),
            "market_vol": market_vol, "mc_vol": q.vol, "vol_lo": q.vol_lo, "vol_hi": q.vol_hi,
        })
    report = pd.DataFrame(rows)
    pass_rate = float(report["pass"].mean())
    name = "validation_atm.csv" if atm_only else "validation.csv"
    write_csv(report, out / name, **meta)

    table = Table(title=f"Validation ({'backbone only' if no_leverage else 'with leverage'})")
    for col in ("contract", "cells", "passed", "max z"):
        table.add_column(col, justify="right")
    for label, group in report.groupby("label", sort=False):
        table.add_row(str(label), str(len(group)), str(int(group["pass"].sum())), f"{group['z'].max():.2f}")
    console.print(table)
    logger.info(f"Validation pass rate {pass_rate:.3f} (threshold {config.validation.threshold:.2f})")
    return report, pass_rate


def cmd_simulate(config: RunConfig, no_leverage: bool = False) -> Dict[str, Path]:
    """Realized variance per delivery on the simulation grid, optional path dump"""
    out = config.output_dir
    meta = _write_meta(config)
    bundle = _market(config)
    params, document = _load_calibration(config)
    deliveries = bundle.curve.deliveries
    leverage = None if no_leverage else load_leverage(out / "leverage.csv", deliveries)
    block = simulate(bundle.curve, params, _rates(config, bundle), config.simulation, leverage)

    rows = []
    for j, T in enumerate(deliveries):
        for t in block.times:
            if t <= 0.0 or t > T + 1e-12:
                continue
            _, mean, se = realized_variance(block, j, float(t))
            rows.append({
                "j": j, "label": bundle.curve.labels[j], "t": float(t), "rv_mean": mean, "rv_se": se,
                "backbone_var": float(integrated_variance(params, 0.0, t, T)),
            })
    artifacts = {"realized_variance": write_csv(pd.DataFrame(rows), out / f"rv_{document['accumulator']}.csv", **meta)}
    if config.output.dump_paths:
        artifacts["paths"] = write_csv(dump_paths(block, config.output.max_dump_paths), out / "paths.csv", **meta)

    table = Table(title=f"Realized variance at delivery ({document['accumulator']})")
    for col in ("contract", "T", "RV", "SE"):
        table.add_column(col, justify="right")
    for j, T in enumerate(deliveries):
        _, mean, se = realized_variance(block, j, float(block.times[np.argmin(np.abs(block.times - T))]))
        table.add_row(bundle.curve.labels[j], f"{T:.4f}", f"{mean:.6f}", f"{se:.6f}")
    console.print(table)
    return artifacts


def cmd_estimate_corr(config: RunConfig) -> Dict[str, Path]:
    """Per-month and pooled long-end correlation from the returns file"""
    if not config.market.returns:
        raise ConfigError("market.returns is not configured")
    out = config.output_dir
    meta = _write_meta(config)
    estimate = estimate_rho_inf(load_returns(config.market.returns))
    frame = pd.DataFrame([b.model_dump() for b in estimate.buckets],
                         columns=["month", "n_obs", "rho", "p_value", "low_sample"])
    artifacts = {
        "buckets": write_csv(frame, out / "correlation.csv", **meta),
        "pooled": write_json({"rho_inf": estimate.rho_inf, "p_value": estimate.p_value, "n_obs": estimate.n_obs},
                             out / "correlation.json", **meta),
    }
    table = Table(title="Long-end correlation")
    for col in ("month", "n", "rho", "p-value", "low sample"):
        table.add_column(col, justify="right")
    for b in estimate.buckets:
        table.add_row(str(b.month), str(b.n_obs), f"{b.rho:.4f}", f"{b.p_value:.3g}", "yes" if b.low_sample else "")
    table.add_row("all", str(estimate.n_obs), f"{estimate.rho_inf:.4f}", f"{estimate.p_value:.3g}", "")
    console.print(table)
    return artifacts


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="commodity-lv",
                                     description="Commodity futures curve leverage calibration and Monte Carlo pricing")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--config", type=str, default=None, help="INI run configuration")
        sp.add_argument("--seed", type=int, default=None, help="random seed")
        sp.add_argument("--paths", type=int, default=None, help="Monte Carlo base paths (before antithetics)")
        sp.add_argument("--accumulator", choices=[k.value for k in AccumulatorKind], default=None)
        sp.add_argument("--rate-mode", choices=[m.value for m in RateMode], default=None, dest="rate_mode")
        sp.add_argument("--out", type=str, default=None, help="output directory")
        sp.add_argument("--deterministic", action="store_true", help="omit timestamps from artifact headers")
        sp.add_argument("--verbose", action="store_true", help="debug logging")

    common(sub.add_parser("calibrate", help="calibrate backbone and leverage functions"))
    sp = sub.add_parser("validate", help="reprice market smiles by simulation")
    common(sp)
    sp.add_argument("--no-leverage", action="store_true", dest="no_leverage", help="simulate the backbone only")
    sp.add_argument("--atm-only", action="store_true", dest="atm_only", help="ATM recovery check")
    sp = sub.add_parser("simulate", help="realized variance tables and path dumps")
    common(sp)
    sp.add_argument("--no-leverage", action="store_true", dest="no_leverage")
    common(sub.add_parser("estimate-corr", help="estimate the long-end correlation from returns"))
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        overrides = cli_overrides(args.seed, args.paths, args.accumulator, args.rate_mode, args.out, args.deterministic)
        config = load_config(args.config, overrides)
        if args.command == "calibrate":
            configure_logging(args.verbose, config.output_dir / "calibration.log")
            cmd_calibrate(config)
        elif args.command == "validate":
            _, pass_rate = cmd_validate(config, args.no_leverage, args.atm_only)
            if pass_rate < config.validation.threshold:
                console.print(f"[yellow]Pass rate {pass_rate:.3f} below threshold {config.validation.threshold:.2f}[/yellow]")
                return EXIT_BELOW_THRESHOLD
        elif args.command == "simulate":
            cmd_simulate(config, args.no_leverage)
        else:
            cmd_estimate_corr(config)
    except (CommodityLVError, OSError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}")
        console.print(f"[red]Error: {e}[/red]")
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``rydcav {simulate,fit,sweep,forecast}``.

Exit codes: 0 success, 2 config error, 3 fit did not converge,
4 numeric domain error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from rydcav.config import DEFAULTS, ConfigError, ExperimentConfig
from rydcav.detection import UndefinedPhaseError
from rydcav.dispersive import DispersiveDomainError
from rydcav.estimation import FitError
from rydcav.scenarios import REFITTERS, _write_report, run, sweep

EXIT_OK, EXIT_CONFIG, EXIT_FIT, EXIT_DOMAIN = 0, 2, 3, 4

log = logging.getLogger("rydcav")


class FitNotConverged(RuntimeError):
    pass


def _load(args) -> ExperimentConfig:
    overrides = {}
    if getattr(args, "scenario", None):
        overrides["scenario"] = args.scenario
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None):
        overrides["output_dir"] = str(args.out)
    return ExperimentConfig.load(args.config, overrides)


def cmd_simulate(args) -> int:
    cfg = _load(args)
    rec = run(cfg)
    print(json.dumps(rec.summary, indent=2, default=float))
    if rec.summary.get("converged") is False:
        raise FitNotConverged("fit did not converge")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _load(args)
    if cfg.scenario not in REFITTERS:
        raise ConfigError(f"scenario {cfg.scenario!r} has nothing to fit")
    data_dir = Path(args.data or cfg.raw["output_dir"])
    try:
        fit = REFITTERS[cfg.scenario](cfg, data_dir)
    except OSError as exc:
        raise ConfigError(f"cannot read data from {data_dir}: {exc}") from exc
    out = Path(args.out or data_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_report(out / f"refit_{cfg.scenario}.json", fit)
    print(fit.to_json(indent=2))
    if not fit.converged:
        raise FitNotConverged("fit did not converge")
    return EXIT_OK


def _parse_values(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --values {text!r}") from exc


def cmd_sweep(args) -> int:
    cfg = _load(args)
    path = sweep(cfg, args.param, _parse_values(args.values), cfg.raw["output_dir"],
                 replicas=args.replicas, workers=args.workers)
    print(path)
    return EXIT_OK


def cmd_forecast(args) -> int:
    args.scenario = "forecast"
    cfg = _load(args)
    run(cfg)
    out = Path(cfg.raw["output_dir"])
    print((out / "forecast.txt").read_text(), end="")
    return EXIT_OK


def cmd_defaults(args) -> int:
    print(json.dumps(DEFAULTS, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="rydcav",
        description="Simulate, fit and forecast dispersive atom-number readout in a microwave cavity.",
        epilog="exit codes: 0 ok, 2 config error, 3 fit did not converge, 4 numeric domain error",
    )
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario=True):
        sp.add_argument("--config", type=Path, help="JSON config (defaults fill the rest)")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--out", type=Path, help="output directory")
        if scenario:
            sp.add_argument("--scenario", help="override the config's scenario")

    sp = sub.add_parser("simulate", help="forward-simulate, estimate and fit one scenario")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fit", help="refit data written by a previous simulate run")
    common(sp)
    sp.add_argument("--data", type=Path, help="directory holding the scenario CSV")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("sweep", help="repeat a scenario over values of one config key")
    common(sp)
    sp.add_argument("--param", required=True, help="dotted config key, e.g. noise.n_noise")
    sp.add_argument("--values", required=True, help="comma separated values")
    sp.add_argument("--replicas", type=int, default=1)
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("forecast", help="optimal-readout forecast report")
    common(sp, scenario=False)
    sp.set_defaults(func=cmd_forecast)

    sp = sub.add_parser("defaults", help="print the default config")
    sp.set_defaults(func=cmd_defaults)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (FitError, FitNotConverged) as exc:
        log.error("fit failed: %s", exc)
        return EXIT_FIT
    except (DispersiveDomainError, UndefinedPhaseError, FloatingPointError, ZeroDivisionError) as exc:
        log.error("numeric domain error: %s", exc)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
import sys
import argparse
import logging
import traceback

print("🚀 Starting trimlab...")

# -------------------------
# IMPORT MODULES
# -------------------------
modules_to_import = [
    "dynsys", "observables", "trimming", "limits", "ppp", "stats", "harness", "experiments"
]

imported_modules = {}
for mod_name in modules_to_import:
    try:
        imported_modules[mod_name] = __import__(f"modules.{mod_name}", fromlist=[mod_name])
    except Exception as e:
        print(f"❌ Failed to import {mod_name} module: {e}")
        traceback.print_exc()
        sys.exit(1)

from modules.errors import ConfigError, IOFailure, TrimlabError, WrongRegime
from modules.harness import ExperimentKind, near_equivalence_experiment, parse_config, run_experiment

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_INVALID = 2

# -------------------------
# COMMAND REGISTRY
# -------------------------
COMMANDS = {kind.value: run_experiment for kind in ExperimentKind}
COMMANDS[ExperimentKind.NEAR_EQUIVALENCE.value] = near_equivalence_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trimlab",
                                     description="Monte Carlo checks of trimmed Birkhoff sum limit laws")
    parser.add_argument("experiment", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--system")
    parser.add_argument("--profile")
    parser.add_argument("--beta", type=float)
    parser.add_argument("--site", type=float, nargs="+", help="coordinates of the singular point")
    parser.add_argument("--aperture", choices=["full", "half"])
    parser.add_argument("--trim", help="none | light:K | inter:pow:G | inter:polylog:P")
    parser.add_argument("--checkpoints", help="start:stop:xF or N1,N2,...")
    parser.add_argument("--replicas", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", dest="output_dir")
    parser.add_argument("--workers", type=int, help="overrides TRIMLAB_WORKERS")
    parser.add_argument("--log-level", default="INFO")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    overrides = {
        "experiment": args.experiment, "system": args.system, "profile": args.profile, "beta": args.beta,
        "site": args.site, "aperture": args.aperture, "trim": args.trim, "checkpoints": args.checkpoints,
        "replicas": args.replicas, "seed": args.seed, "output_dir": args.output_dir,
    }
    try:
        cfg = parse_config(args.config, overrides)
        print(f"✅ Config loaded: {cfg.experiment} on {cfg.system} ({cfg.replicas} replicas, seed {cfg.seed})")
        print(f"⚡ Running {cfg.experiment}")
        result = COMMANDS[cfg.experiment](cfg, workers=args.workers)
    except (ConfigError, WrongRegime) as e:
        print(f"❌ Invalid experiment: {e}")
        return EXIT_INVALID
    except IOFailure as e:
        print(f"❌ Could not write results: {e}")
        return EXIT_FAIL
    except TrimlabError as e:
        print(f"❌ {type(e).__name__}: {e}")
        traceback.print_exc()
        return EXIT_FAIL

    for report in result.gof:
        mark = "✅" if report["pass"] else "❌"
        print(f"   {mark} {report['name']}: {report['statistic']:.6g} (threshold {report['threshold']:.6g})")
    discards = result.metadata.get("discards", 0)
    if discards:
        print(f"⚠️ {discards} replicas discarded")
    if cfg.kind.exploratory:
        print("⚠️ Exploratory experiment: not part of acceptance")
    print(f"{'✅' if result.passed else '❌'} {cfg.experiment} {'passed' if result.passed else 'failed'}"
          f" -> {cfg.results_dir}")
    return EXIT_PASS if result.passed else EXIT_FAIL


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("👋 Stopped by user")
        sys.exit(EXIT_FAIL)

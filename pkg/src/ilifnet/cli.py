"""Command-line entry point.

Exit codes: 0 success, 2 invalid config or arguments, 3 runtime failure,
4 a numerical check exceeded its tolerance.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

from . import experiments as ex
from .config import ConfigError, ExperimentConfig, load_config
from .data import IdxFormatError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3
EXIT_TOLERANCE = 4

log = logging.getLogger("ilifnet")


def _gammas(text: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma list of numbers: {text!r}") from None
    if len(values) < 2:
        raise argparse.ArgumentTypeError("need at least two gamma values")
    if any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError("gamma values must be positive")
    return values


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ilifnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI experiment config (defaults when omitted)")
        p.add_argument("--out", help="output directory (overrides outputs.directory)")
        p.add_argument("--seed", type=_seed, help="overrides training.seed")
        return p

    common(sub.add_parser("train", help="train one network"))
    sweep = common(sub.add_parser("sweep-gamma", help="LIF and ILIF runs over a gamma list"))
    sweep.add_argument("--gammas", type=_gammas, default=[0.5, 1.0, 2.0, 4.0])
    common(sub.add_parser("ablate", help="inhibitory-unit on/off grid"))
    common(sub.add_parser("gradcheck", help="oracle, finite-difference and cutoff checks"))
    energy = common(sub.add_parser("energy", help="AC/MAC counts and synaptic energy"))
    energy.add_argument("--checkpoint", action="append", required=True,
                        help="checkpoint JSON; pass twice for a LIF/ILIF MAC ratio")
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def run(args) -> int:
    cfg = _config(args)
    out = args.out or cfg.out_dir
    if args.command == "train":
        summary = ex.cmd_train(cfg, out)
        print(f"final accuracy {summary['final_accuracy']:.4f}")
    elif args.command == "sweep-gamma":
        rows = ex.cmd_sweep_gamma(cfg, args.gammas, out)
        print(f"{len(rows)} sweep rows written")
    elif args.command == "ablate":
        doc = ex.cmd_ablate(cfg, out)
        for row in doc["rows"]:
            print(f"{row['cell']:<10} accuracy {row['accuracy']:.4f}")
    elif args.command == "gradcheck":
        report = ex.cmd_gradcheck(cfg, out)
        print(f"oracle {report['oracle']['max_relative_error']:.3e}  "
              f"fd {report['finite_difference']['max_relative_error']:.3e}  passed")
    elif args.command == "energy":
        doc = ex.cmd_energy(cfg, args.checkpoint, out)
        for m in doc["models"]:
            print(f"{m['variant']:<6} AC {m['ac_count']} MAC {m['mac_count']} "
                  f"SOP {m['sop_energy_pj']:.1f} pJ")
        if "ilif_lif_mac_ratio" in doc:
            print(f"ILIF/LIF MAC ratio {doc['ilif_lif_mac_ratio']}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return run(args)
    except (ConfigError, IdxFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ex.ToleranceError as exc:
        print(f"tolerance failure: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE
    except (ex.ExperimentError, ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

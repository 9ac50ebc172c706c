"""Command-line interface.

    hypokernel <subcommand> --config <file> [--seed N] [--out DIR]

Subcommands: brackets, hormander, simulate, covariance, moments, martlab,
density, verify-all, rerun.  Exit codes: 0 success, 1 contract violation,
2 usage or validation error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .config import (
    ConfigError,
    EXPERIMENT_KINDS,
    load_config,
    parse_config_text,
    schema_help,
)
from .fieldlang import BracketBudgetError, FieldSyntaxError
from .flow import PathAbortError
from .manifest import compare_outputs, load_manifest


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hypokernel",
        description="Bracket conditions, jump-SDE simulation and covariance "
                    "diagnostics for degenerate nonlocal operators.",
        epilog=schema_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="subcommand")
    for kind in EXPERIMENT_KINDS:
        sp = sub.add_parser(kind, help=f"run the {kind} experiment")
        sp.add_argument("--config", help="config file (INI-style; see --help)",
                        default=None)
        sp.add_argument("--seed", type=int, default=None,
                        help="master seed (overrides config)")
        sp.add_argument("--out", default=None,
                        help="output directory (default runs/<kind>)")
    rr = sub.add_parser("rerun", help="re-execute a run from its manifest and "
                                      "compare output digests")
    rr.add_argument("--manifest", required=True, help="path to manifest.json")
    rr.add_argument("--out", required=True, help="fresh output directory")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    from .experiments import run  # deferred: pulls in matplotlib

    try:
        if args.command == "rerun":
            manifest = load_manifest(args.manifest)
            cfg = parse_config_text(manifest.config_text,
                                    source=f"<manifest {args.manifest}>")
            cfg.kind = manifest.kind
            cfg.seed = manifest.master_seed
            cfg.out_dir = args.out
            _, code = run(cfg)
            mismatches = compare_outputs(manifest, Path(args.out))
            if mismatches:
                print("outputs differ from the manifest:", file=sys.stderr)
                for m in mismatches:
                    print(f"  {m}", file=sys.stderr)
                return 1
            print(f"all {len(manifest.outputs)} outputs byte-identical")
            return code

        if args.config is not None:
            cfg = load_config(args.config)
        else:
            cfg = parse_config_text("", source="<defaults>")
        cfg.kind = args.command
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out_dir = args.out
        manifest_path, code = run(cfg)
        print(f"manifest: {manifest_path}")
        return code
    except (ConfigError, FieldSyntaxError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (BracketBudgetError, PathAbortError) as exc:
        print(f"computation aborted: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

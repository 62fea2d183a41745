"""Command-line entry point: ``mfbsvi <command> --config run.json``.

Exit codes: 0 all checks passed, 1 an acceptance check failed,
2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import RunConfig, load_config, parse_config
from .errors import ConfigError, MFBSVIError
from .experiments import COMMANDS, emit_report, run_suite

log = logging.getLogger("mfbsvi")

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfbsvi", description="Mean-field reflected BSDE numerical lab")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "props": "convex-analysis property suite",
        "forward": "simulate and save the baseline particle cloud",
        "bsde": "stage-1 backward solve along the baseline cloud",
        "pvi": "finite-difference oracle for u(t, x)",
        "compare": "probabilistic u against the finite-difference oracle",
        "convergence": "penalized-to-proximal distance as epsilon shrinks",
        "suite": "several sub-runs at once into one output directory",
    }
    for name, text in helps.items():
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", help="JSON run config (optional for props)")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--out", help="output directory (overrides output_dir)")
        s.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
        s.add_argument("--overwrite", action="store_true", help="allow writing into a non-empty output directory")
        if name == "suite":
            s.add_argument("runs", nargs="+", choices=sorted(COMMANDS), help="sub-runs to execute")
    return p


def _resolve_config(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
    elif args.command == "props":
        cfg = parse_config({"benchmark": "CF1", "seed": 0 if args.seed is None else args.seed})
    else:
        raise ConfigError("--config is required for this command")
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.out is not None:
        updates["output_dir"] = args.out
    if updates:
        data = cfg.model_dump(mode="json")
        data.update(updates)
        cfg = parse_config(data)
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _resolve_config(args)
        names = args.runs if args.command == "suite" else [args.command]
        log.info("running %s with seed %d", ",".join(names), cfg.seed)
        results = run_suite(cfg, names, args.threads)
        manifest = emit_report(results, cfg, overwrite=args.overwrite)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except MFBSVIError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return getattr(exc, "exit_code", EXIT_NUMERIC)
    for sub in results:
        print(f"{sub.name}: {json.dumps(sub.summary, default=str, sort_keys=True)}")
    for check, ok in manifest.checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {check}")
    print(f"manifest: {manifest.path}")
    return EXIT_PASS if manifest.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

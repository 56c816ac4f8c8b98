"""Command-line entry point: ``assetpipe <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .evalharness import compare_prompts, format_table, load_ground_truth
from .pipeline import Pipeline, StageError, build_gateway

logger = logging.getLogger("assetpipe")

STAGE_COMMANDS = ("ingest", "chunk", "extract", "store", "clean", "validate", "rav", "report")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="assetpipe", description="Extract, clean and validate physical-asset records.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("-c", "--config", type=Path, help="YAML config file")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. --set rav.top_k=5")
        sp.add_argument("--company", action="append", dest="companies", metavar="TICKER",
                        help="limit to these companies (repeatable)")
        sp.add_argument("--prompt", help="extraction template id (e.g. irz_cot)")

    run = sub.add_parser("run", help="run every stage for each company")
    common(run)
    run.add_argument("--force", action="store_true", help="discard stored state and start over")

    for name in STAGE_COMMANDS:
        common(sub.add_parser(name, help=f"run only the {name} stage"))

    ev = sub.add_parser("eval", help="score prompt templates against annotated chunks")
    ev.add_argument("-c", "--config", type=Path)
    ev.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    ev.add_argument("--ground-truth", type=Path, help="JSONL ground truth (default: paths.ground_truth)")
    ev.add_argument("--prompt", action="append", help="template id; repeatable or comma-separated")
    ev.add_argument("--model", help="model name (default: first of models.extraction)")
    ev.add_argument("--json", action="store_true", help="print JSON instead of a table")

    ex = sub.add_parser("export", help="write cleaned rows as csv or jsonl")
    ex.add_argument("-c", "--config", type=Path)
    ex.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    ex.add_argument("--company", required=True)
    ex.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    ex.add_argument("--output", type=Path, help="destination file (default: stdout)")
    return p


def _overrides(args) -> list[str]:
    out = list(args.overrides)
    if getattr(args, "prompt", None) and args.command != "eval":
        out.append(f"extract.prompt={args.prompt}")
    return out


def _cmd_eval(args) -> int:
    cfg = load_config(args.config, args.overrides)
    gt = args.ground_truth or cfg.path("paths.ground_truth")
    if gt is None:
        raise ConfigError("no ground truth file given")
    prompts = [p for item in (args.prompt or [cfg.get("extract.prompt")]) for p in item.split(",") if p]
    model = args.model or cfg.extraction_models[0]
    reports = compare_prompts(prompts, load_ground_truth(gt), model, build_gateway(cfg))
    if args.json:
        print(json.dumps([r.to_dict() for r in reports], indent=2))
    else:
        print(format_table(reports))
    return 1 if any(r.error for r in reports) else 0


def _cmd_export(args) -> int:
    cfg = load_config(args.config, args.overrides)
    text = Pipeline(cfg).store.export(args.company.upper(), args.format, args.output)
    if args.output is None:
        sys.stdout.write(text)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "export":
            return _cmd_export(args)
        cfg = load_config(args.config, _overrides(args))
        pipe = Pipeline(cfg)
        tickers = [t.upper() for t in args.companies] if args.companies else [c.ticker for c in cfg.companies]
        for t in tickers:
            cfg.company(t)
        if args.command == "run":
            manifest = pipe.run(tickers, force=args.force)
            for t, info in manifest["companies"].items():
                print(f"{t}: {info['status']}")
            return 0 if manifest["ok"] else 1
        status = 0
        for t in tickers:
            try:
                outcome = pipe.run_stage(t, args.command)
            except StageError as exc:
                print(f"{t}: error: {exc}", file=sys.stderr)
                status = 1
                continue
            print(f"{t}: {args.command} {outcome.status}")
        return status
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

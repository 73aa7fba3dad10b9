"""The `forge` command line tool.

Subcommands: filter, metrics, report, gen-corpus, inject-check.
Exit codes: 0 success, 1 usage or config error, 2 unreadable manifest,
3 property-suite failure from inject-check.
"""

from __future__ import annotations

import argparse
import json
import re
import sys

from .core import ConfigError, FilterConfig, ManifestError, load_filter_config
from .manifest import read_manifest
from .pipeline import (
    CORPUS_CLASSES,
    PipelineConfig,
    format_metrics_table,
    format_report_text,
    gen_synthetic_corpus,
    report_to_dict,
    run_filter_pipeline,
    run_metrics,
    summarize,
)
from .ref_injector import run_property_suite

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MANIFEST = 2
EXIT_PROPERTIES = 3


class UsageError(Exception):
    """Raised instead of argparse's SystemExit so exit codes stay ours."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="forge",
        description="Filter, measure, and report on source/generated image pairs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("filter", help="run the three rejection filters over a manifest")
    p.add_argument("--manifest", required=True, help="input manifest (JSON lines)")
    p.add_argument("--config", help="filter threshold config file (defaults built in)")
    p.add_argument("--out", required=True, help="annotated output manifest")
    p.add_argument("--rejected", required=True, help="manifest of failed pairs only")
    p.add_argument("--workers", type=int, default=1, help="parallel worker count")

    p = sub.add_parser("metrics", help="attach SSIM/L2-M (and cosine) metrics")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--with-embeddings", action="store_true",
                   help="read .emb files next to images for cosine similarity")

    p = sub.add_parser("report", help="summarize pass rate and rejection causes")
    p.add_argument("--manifest", required=True)
    p.add_argument("--json", action="store_true", help="machine-readable output")

    p = sub.add_parser("gen-corpus", help="generate a labeled synthetic corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dims", default="128x128", help="image size as WxH")
    p.add_argument("--counts", default="clean=5,misaligned=5,nomakeup=5,bgshift=5",
                   help="pairs per class, e.g. clean=25,misaligned=25")

    p = sub.add_parser("inject-check",
                       help="run the attention-injection property suite")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _parse_dims(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"(\d+)x(\d+)", text.strip())
    if not m:
        raise UsageError(f"--dims must look like 128x128, got {text!r}")
    return int(m.group(1)), int(m.group(2))


def _parse_counts(text: str) -> dict[str, int]:
    counts: dict[str, int] = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        key, sep, value = part.partition("=")
        if not sep or key.strip() not in CORPUS_CLASSES:
            raise UsageError(
                f"--counts entries must be class=N with class in {CORPUS_CLASSES}, "
                f"got {part!r}"
            )
        try:
            counts[key.strip()] = int(value)
        except ValueError:
            raise UsageError(f"--counts value must be an integer: {part!r}") from None
    return counts


def _cmd_filter(args) -> int:
    filter_config = (
        load_filter_config(args.config) if args.config else FilterConfig()
    )
    config = PipelineConfig(filter_config=filter_config, workers=args.workers)
    report = run_filter_pipeline(args.manifest, args.out, args.rejected, config)
    print(format_report_text(report))
    return EXIT_OK


def _cmd_metrics(args) -> int:
    _, report = run_metrics(args.manifest, args.out,
                            with_embeddings=args.with_embeddings)
    print(format_metrics_table(report))
    return EXIT_OK


def _cmd_report(args) -> int:
    records = read_manifest(args.manifest)
    try:
        report = summarize(records)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.json:
        print(json.dumps(report_to_dict(report), indent=2, sort_keys=True))
    else:
        print(format_report_text(report))
    return EXIT_OK


def _cmd_gen_corpus(args) -> int:
    manifest_path = gen_synthetic_corpus(
        args.out, args.seed, _parse_counts(args.counts), _parse_dims(args.dims)
    )
    print(manifest_path)
    return EXIT_OK


def _cmd_inject_check(args) -> int:
    results = run_property_suite(args.seed)
    for res in results:
        state = "PASS" if res.passed else "FAIL"
        print(f"{res.name:<36} {state}  {res.detail}")
    failed = sum(1 for res in results if not res.passed)
    print(f"{len(results) - failed}/{len(results)} properties passed (seed {args.seed})")
    return EXIT_OK if failed == 0 else EXIT_PROPERTIES


_COMMANDS = {
    "filter": _cmd_filter,
    "metrics": _cmd_metrics,
    "report": _cmd_report,
    "gen-corpus": _cmd_gen_corpus,
    "inject-check": _cmd_inject_check,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"forge: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"forge: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ManifestError as exc:
        print(f"forge: {exc}", file=sys.stderr)
        return EXIT_MANIFEST


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()

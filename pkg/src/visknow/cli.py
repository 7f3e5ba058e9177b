"""Command line entry point: `visknow <stage> --config <file>`.

Exit codes: 0 success, 2 failed precondition (missing inputs, locked KB,
bad config), 3 provider failure, 4 data corruption.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from .config import PipelineConfig, load_config
from .errors import (ConstraintViolation, CorruptRecord, CyclicTemplate,
                     DanglingReference, EmptyAfterFilter, EmptyDocument,
                     InsufficientImages, IoFailure, MissingPrerequisite,
                     ParseError, ProviderMalformed, ProviderUnavailable,
                     StageLocked, UnknownId, UnparseableAnswer,
                     UnsupportedVersion, VocabMismatch)
from .pipeline import STAGES, run_stage

EXIT_OK = 0
EXIT_PRECONDITION = 2
EXIT_PROVIDER = 3
EXIT_CORRUPT = 4

_PRECONDITION = (MissingPrerequisite, StageLocked, ParseError, EmptyDocument,
                 EmptyAfterFilter, InsufficientImages, ConstraintViolation,
                 CyclicTemplate, ValueError, FileNotFoundError)
_PROVIDER = (ProviderUnavailable, ProviderMalformed, UnparseableAnswer)
_CORRUPT = (CorruptRecord, UnsupportedVersion, IoFailure, DanglingReference,
            VocabMismatch, UnknownId)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="visknow",
        description="Build, review and benchmark a visual knowledge base.")
    sub = parser.add_subparsers(dest="stage", required=True)
    for stage in STAGES:
        sp = sub.add_parser(stage, help=f"run the {stage} stage")
        sp.add_argument("--config", help="TOML pipeline config")
        sp.add_argument("--kb", help="override the KB directory")
        sp.add_argument("--seed", type=int, help="override the pipeline seed")
        if stage == "serve":
            sp.add_argument("--addr", help="host:port to bind")
            sp.add_argument("--token", help="bearer token for the API")
            sp.add_argument("--static", help="directory with the UI bundle")
    return parser


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    if args.config:
        cfg = load_config(args.config)
    elif args.stage == "serve" and args.kb:
        cfg = PipelineConfig()
    else:
        raise MissingPrerequisite("--config is required")
    if args.kb:
        cfg.kb_dir = args.kb
    if args.seed is not None:
        cfg.seed = args.seed
    if args.stage == "serve":
        if getattr(args, "addr", None):
            cfg.service_addr = args.addr
        if getattr(args, "token", None):
            cfg.service_token = args.token
        if getattr(args, "static", None):
            cfg.static_dir = args.static
        if not cfg.service_token:
            raise MissingPrerequisite("serve needs a token (--token or config)")
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        report = run_stage(cfg, args.stage)
    except _PROVIDER as exc:
        print(f"provider failure: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except _CORRUPT as exc:
        print(f"data corruption: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except _PRECONDITION as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    print(json.dumps(report.to_json(), sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""CLI for dumping tokenizer metadata and next-token logits."""

from __future__ import annotations

import argparse
import logging
import sys

from . import formats
from .extract import DEFAULT_TEMPLATE, ExtractionConfig, extract_logits
from .metadata import extract_token_metadata


def _cmd_metadata(args) -> int:
    rows = extract_token_metadata(args.model)
    formats.write_token_metadata(args.out, rows)
    n_special = sum(r["is_special"] for r in rows)
    n_reserved = sum(r["is_reserved"] for r in rows)
    n_unprintable = sum(not r["is_printable"] for r in rows)
    print(f"wrote {len(rows)} tokens to {args.out}")
    print(f"special: {n_special}  reserved: {n_reserved}  "
          f"non-printable: {n_unprintable}")
    return 0


def _cmd_logits(args) -> int:
    config = ExtractionConfig(
        model_id=args.model,
        prompt_file=args.prompts,
        out_dir=args.out,
        prompt_template=args.template,
        max_context_tokens=args.max_context_tokens,
        device=args.device,
        dataset_id=args.dataset_id,
        seed=args.seed,
        validation_fraction=args.val_frac,
        calibration_share=args.cal_share,
        batch_size=args.batch_size,
    )
    result = extract_logits(config)
    print(f"wrote {result.n_records} records (vocab {result.vocab_size}) "
          f"to {result.dataset_path}")
    print(f"manifest: {result.manifest_path}")
    if result.n_skipped:
        print(f"skipped {result.n_skipped} prompts without derivable targets")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vacp-extract",
        description="Dump causal-LM tokenizer metadata and full next-token "
                    "logit vectors in the conformal engine's file formats.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("metadata", help="dense per-token metadata from a tokenizer")
    p.add_argument("--model", required=True, help="model id or local path")
    p.add_argument("--out", required=True, help="metadata JSONL path")
    p.set_defaults(func=_cmd_metadata)

    p = sub.add_parser("logits", help="forward passes over a prompt file")
    p.add_argument("--model", required=True, help="model id or local path")
    p.add_argument("--prompts", required=True, help="JSONL prompt file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--template", default=DEFAULT_TEMPLATE)
    p.add_argument("--max-context-tokens", type=int, default=256)
    p.add_argument("--device", default="cpu")
    p.add_argument("--dataset-id", default="extraction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--val-frac", type=float, default=0.2)
    p.add_argument("--cal-share", type=float, default=0.6)
    p.add_argument("--batch-size", type=int, default=8)
    p.set_defaults(func=_cmd_logits)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as err:
        print(f"missing file: {err}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

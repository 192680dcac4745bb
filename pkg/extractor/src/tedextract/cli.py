"""Command-line entry point: extract --model ... --texts ... --out ..."""

import argparse
import os
import sys

from .extract import ExtractJob, JobError, extract


def build_parser():
    parser = argparse.ArgumentParser(
        prog="extract",
        description="Dump all-layer hidden states of a pretrained text "
                    "encoder to TEDH files keyed by text hash.")
    parser.add_argument("--model", required=True, help="model identifier")
    parser.add_argument("--texts", required=True,
                        help="file with one input text per line")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--max-tokens", type=int, default=128)
    parser.add_argument("--batch", type=int, default=8)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--no-embedding-layer", action="store_true",
                        help="exclude the embedding layer from the dump")
    parser.add_argument("--prompt-template", default=None,
                        help="optional template applied as .format(text=...)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if not os.path.exists(args.texts):
        print(f"error\tinput\ttext file not found: {args.texts}",
              file=sys.stderr)
        return 2
    with open(args.texts, "r", encoding="utf-8") as f:
        texts = [line.rstrip("\n") for line in f if line.strip()]
    try:
        job = ExtractJob(
            model_id=args.model, texts=texts, out_dir=args.out,
            max_tokens=args.max_tokens, batch_size=args.batch,
            device=args.device,
            include_embedding_layer=not args.no_embedding_layer,
            prompt_template=args.prompt_template)
        manifest = extract(job)
    except JobError as exc:
        print(f"error\tjob\t{exc}", file=sys.stderr)
        return 2
    manifest.save(os.path.join(args.out, "manifest.jsonl"))
    print(f"written\t{len(manifest.entries)}")
    print(f"skipped\t{manifest.skipped}")
    print(f"failed\t{len(manifest.failures)}")
    return 0 if not manifest.failures else 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry points: ``shim masks`` and ``shim embed``."""

import argparse
import sys
from pathlib import Path

import numpy as np

from extractshim.descriptor import embed_image
from extractshim.formats import load_rgb, write_embedding, write_mask
from extractshim.segment import REGION_NAMES, segment_regions


def extract_masks(image_path, out_dir) -> list:
    """Segment ``image_path`` and write the four region masks into ``out_dir``.

    Returns the written paths. When no face is found, all-zero masks are
    still written and a warning goes to stderr so batch runs keep moving.
    """
    image_path = Path(image_path)
    rgb = load_rgb(image_path)
    regions = segment_regions(rgb)
    if regions is None:
        print(f"warning: no face detected in {image_path}; writing empty masks",
              file=sys.stderr)
        blank = np.zeros(rgb.shape[:2], dtype=np.uint8)
        regions = {name: blank for name in REGION_NAMES}
    written = []
    for name in REGION_NAMES:
        path = Path(out_dir) / f"{image_path.stem}.{name}.png"
        write_mask(regions[name], path)
        written.append(path)
    return written


def extract_embedding(image_path, out_path) -> Path:
    vec = embed_image(load_rgb(image_path))
    write_embedding(out_path, vec)
    return Path(out_path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shim",
                                     description="facial mask and embedding extractor")
    sub = parser.add_subparsers(dest="command", required=True)

    masks = sub.add_parser("masks", help="write face/eyes/teeth/contour masks")
    masks.add_argument("--in", dest="image", required=True, help="input image")
    masks.add_argument("--out", dest="out_dir", required=True, help="output directory")

    embed = sub.add_parser("embed", help="write an EMB1 embedding file")
    embed.add_argument("--in", dest="image", required=True, help="input image")
    embed.add_argument("--out", dest="out_path", required=True, help="output file")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "masks":
            for path in extract_masks(args.image, args.out_dir):
                print(path)
        else:
            print(extract_embedding(args.image, args.out_path))
    except (OSError, ValueError) as exc:
        print(f"shim: {exc}", file=sys.stderr)
        return 1
    return 0


def entry() -> None:
    sys.exit(main())

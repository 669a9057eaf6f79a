"""Export CLI.

    sqz-export weights  --out model.tiwf [--seed 0 | --checkpoint f.pth | --pretrained]
    sqz-export fixtures --out-dir fixtures/ [--seed 0 ...] [--images a.png b.jpg ...]

`fixtures` writes model.tiwf (with calibration), ten golden inputs as
TIRAW + TIF32 pairs (a deterministic synthetic set unless --images is
given), and manifest.json for the engine's golden test suite.
"""

from __future__ import annotations

import argparse
import sys

from .export import export_weights, make_fixtures
from .images import DEFAULT_MEANS, load_image_file, preprocess, synthetic_image_set
from .model import load_reference
from .tiwf import ExportError


def _source(args) -> dict:
    if args.pretrained:
        return {"kind": "torchvision-zoo", "model": "squeezenet1_0", "weights": "IMAGENET1K_V1"}
    if args.checkpoint:
        return {"kind": "checkpoint", "model": "squeezenet1_0", "path": str(args.checkpoint)}
    return {"kind": "seeded-init", "model": "squeezenet1_0", "seed": args.seed}


def _add_model_flags(ap: argparse.ArgumentParser) -> None:
    ap.add_argument("--seed", type=int, default=0, help="deterministic init seed")
    ap.add_argument("--checkpoint", default=None, help="local state-dict .pth to load")
    ap.add_argument("--pretrained", action="store_true",
                    help="fetch zoo weights (needs network access)")


def _gather_images(paths):
    if not paths:
        return synthetic_image_set()
    images, skipped = [], 0
    for p in paths:
        try:
            images.append((str(p).rsplit("/", 1)[-1].rsplit(".", 1)[0], load_image_file(p)))
        except Exception as e:  # undecodable: skip with a warning
            print(f"warning: skipping {p}: {e}", file=sys.stderr)
            skipped += 1
    if not images:
        raise ExportError(f"all {skipped} images were undecodable")
    return images


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="sqz-export", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    w = sub.add_parser("weights", help="export model.tiwf (with calibration)")
    _add_model_flags(w)
    w.add_argument("--out", required=True)
    w.add_argument("--images", nargs="*", default=None,
                   help="calibration images (default: synthetic set)")

    f = sub.add_parser("fixtures", help="export weights + golden fixtures + manifest")
    _add_model_flags(f)
    f.add_argument("--out-dir", required=True)
    f.add_argument("--images", nargs="*", default=None,
                   help="golden images (default: synthetic set)")

    args = ap.parse_args(argv)
    try:
        model = load_reference(seed=args.seed, checkpoint=args.checkpoint,
                               pretrained=args.pretrained)
        if args.command == "weights":
            images = _gather_images(args.images)
            calib = [preprocess(hwc, DEFAULT_MEANS) for _, hwc in images]
            export_weights(model, args.out, calib_inputs=calib, source=_source(args))
            print(f"wrote {args.out}")
        else:
            manifest = make_fixtures(model, args.out_dir, images=_gather_images(args.images),
                                     source=_source(args))
            print(f"wrote {manifest}")
    except ExportError as e:
        print(f"export error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

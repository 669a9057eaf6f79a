#!/usr/bin/env python3
"""Generate a random-weight SqueezeNet TIWF file plus a synthetic TIRAW
input so the benchmark runs without any exported model:

    python scripts/make_random_weights.py --out-dir /tmp/tinyinfer
    tinyinfer-bench --weights /tmp/tinyinfer/model.tiwf \
                    --input /tmp/tinyinfer/input.tiraw
"""

import argparse
from pathlib import Path

from tinyinfer import save_weights
from tinyinfer.synth import random_squeezenet_store, write_synthetic_raw


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default=".", help="directory for model.tiwf / input.tiraw")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_weights(random_squeezenet_store(seed=args.seed), out / "model.tiwf")
    write_synthetic_raw(out / "input.tiraw", seed=args.seed)
    print(f"wrote {out / 'model.tiwf'} and {out / 'input.tiraw'} (seed {args.seed})")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Thin wrapper around the benchmark CLI for running from a checkout:

    python scripts/run_benchmark.py --weights model.tiwf --input input.tiraw \
        --iters 10 --warmup 2 --workers 4 --format json --out report.json
"""

import sys

from tinyinfer.bench import main

if __name__ == "__main__":
    sys.exit(main())

"""Engine timings: single quantile, 99-quantile process and bootstrap panels.

Example:
    python scripts/bench_engines.py --n 50000 --k 20 --output bench.json
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict

from qrproc.simulate import BENCH_PANELS, bench_engines


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, nargs="+", default=[50_000])
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--B", type=int, default=50)
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--panels", default=",".join(BENCH_PANELS))
    p.add_argument("--output", help="JSON file (default stdout)")
    args = p.parse_args()
    panels = tuple(s.strip() for s in args.panels.split(","))
    reports = []
    for n in args.n:
        rep = bench_engines(n, args.k, B=args.B, repetitions=args.repetitions, seed=args.seed, panels=panels)
        sys.stderr.write(rep.to_markdown() + "\n")
        reports.append(asdict(rep))
    text = json.dumps(reports, indent=2)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())

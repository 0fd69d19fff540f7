"""Sweep every config under configs/ that validates and write CSVs and summaries to results/."""

import argparse
import sys
from pathlib import Path

from htq import cli
from htq.config import load
from htq.model import ConfigurationError

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default=str(ROOT / "results"))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("names", nargs="*", help="config stems; default all")
    args = p.parse_args()
    paths = sorted((ROOT / "configs").glob("*.yaml"))
    if args.names:
        paths = [ROOT / "configs" / f"{n}.yaml" for n in args.names]
    worst = 0
    for path in paths:
        try:
            load(path)
        except ConfigurationError as exc:
            print(f"skip {path.stem}: {exc}".splitlines()[0])
            continue
        rc = cli.main(["sweep", "--config", str(path), "--out", args.out, "--workers", str(args.workers)])
        worst = max(worst, rc)
    return worst


if __name__ == "__main__":
    sys.exit(main())

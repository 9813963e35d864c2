"""Scan, fit and reference the shipped multi-line scenario end to end."""

import argparse
import sys
from pathlib import Path

from cpt3.cli import main

ROOT = Path(__file__).resolve().parents[1]


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenario", default=str(ROOT / "scenarios" / "fig2-like.yaml"))
    ap.add_argument("--out", default="out")
    ap.add_argument("--threads", type=int, default=1)
    a = ap.parse_args(argv)
    stem = Path(a.scenario).stem
    steps = (
        ["scan", "--scenario", a.scenario, "--out", a.out, "--threads", str(a.threads)],
        ["fit", str(Path(a.out) / f"{stem}.csv"), "--out", a.out],
        ["reference", str(Path(a.out) / f"{stem}.fits.json"), "--scenario", a.scenario, "--out", a.out],
    )
    for s in steps:
        rc = main(s)
        if rc:
            return rc
    return 0


if __name__ == "__main__":
    sys.exit(run())

"""Run (or load cached) smoke and noisy-depth experiments and print a summary."""

import argparse
import json
import sys

from savipp import experiments


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--work", default="/tmp/savipp_experiments", help="scratch directory for data and runs")
    ap.add_argument("--only", choices=["smoke", "noise"], default=None)
    ap.add_argument("--sigma", type=float, action="append", help="noise level(s); default all")
    ap.add_argument("--verbose", action="store_true")
    args = ap.parse_args(argv)

    def progress(step, row):
        if args.verbose and step % 100 == 0:
            print(f"  step {step} loss {row['loss_target']} readout {row['loss_readout']}", flush=True)

    summary = {}
    if args.only in (None, "smoke"):
        r = experiments.smoke_result(args.work, progress=progress)
        summary["smoke"] = {k: v for k, v in r.items() if k != "losses"}
        print(json.dumps(summary["smoke"], indent=2), flush=True)
    if args.only in (None, "noise"):
        for sigma in args.sigma or experiments.NOISE_SIGMAS:
            r = experiments.noise_result(sigma, args.work, progress=progress)
            summary[f"noise_{sigma:g}"] = r
            print(json.dumps(r, indent=2), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
